use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Metric;

/// Per-seed values of one metric with their mean and (for ≥2 seeds) sample std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Summary {
    pub fn from_values(values: Vec<f64>) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
        Summary {
            per_seed: values,
            mean,
            std,
        }
    }

    /// `mean` or `mean ± std`, three decimals.
    pub fn display(&self) -> String {
        match self.std {
            Some(s) => format!("{:.3} ± {:.3}", self.mean, s),
            None => format!("{:.3}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub dataset: String,
    pub model: String,
    pub metric: Metric,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub seeds: Vec<u64>,
    pub version: String,
    /// Free-form run settings (config digest, windows evaluated, ...).
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

impl RunMeta {
    pub fn new(seeds: &[u64]) -> RunMeta {
        RunMeta {
            seeds: seeds.to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn get(&self, dataset: &str, model: &str) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.dataset == dataset && e.model == model)
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.summary.per_seed.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_has_no_std() {
        let s = Summary::from_values(vec![0.5]);
        assert_eq!(s.std, None);
        assert_eq!(s.display(), "0.500");
        assert!(!serde_json::to_string(&s).unwrap().contains("std"));
    }

    #[test]
    fn sample_std() {
        let s = Summary::from_values(vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}
