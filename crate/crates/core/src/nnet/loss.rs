use crate::error::{Error, Result};

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::contract(format!(
            "prediction length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("empty prediction"));
    }
    Ok(())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `∂mse/∂pred = 2(pred − target)/N`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

pub fn mae_sum(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(mae_sum(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 4.0);
        assert!(mse_loss(&[0.0], &[1.0, 2.0]).is_err());
        assert!(mae_sum(&[], &[]).is_err());
    }

    #[test]
    fn mse_grad_matches_central_differences() {
        let pred = [0.3, -1.2, 2.5, 0.0];
        let target = [1.0, -1.0, 0.5, 0.25];
        let g = mse_grad(&pred, &target).unwrap();
        let h = 1e-5;
        for i in 0..pred.len() {
            let mut p = pred;
            p[i] += h;
            let up = mse_loss(&p, &target).unwrap();
            p[i] -= 2.0 * h;
            let down = mse_loss(&p, &target).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-8 * g[i].abs().max(1.0));
        }
    }
}
