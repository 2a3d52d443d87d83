//! Counting error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCount {
    pub predicted: usize,
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenes: Vec<SceneCount>,
    pub rmse: f64,
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
}

/// Root mean squared count error. Zero for no scenes.
pub fn rmse(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Mean of `|pred - truth| / truth * 100`. Every truth must be positive.
pub fn mape(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    if let Some(i) = truth.iter().position(|&t| t == 0) {
        return Err(Error::Eval(format!(
            "scene {i} has a true count of 0; MAPE is undefined"
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).abs() / t as f64 * 100.0)
        .sum();
    Ok(sum / predicted.len() as f64)
}

pub fn evaluate(predicted: &[usize], truth: &[usize]) -> Result<EvalResult> {
    Ok(EvalResult {
        rmse: rmse(predicted, truth)?,
        mape: mape(predicted, truth)?,
        scenes: predicted
            .iter()
            .zip(truth)
            .map(|(&predicted, &truth)| SceneCount { predicted, truth })
            .collect(),
    })
}

fn check_lengths(predicted: &[usize], truth: &[usize]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} ground-truth counts",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions() {
        let r = evaluate(&[3, 7, 1], &[3, 7, 1]).unwrap();
        assert_eq!((r.rmse, r.mape), (0.0, 0.0));
    }

    #[test]
    fn one_scene_off_by_one() {
        let r = evaluate(&[24], &[25]).unwrap();
        assert_eq!(r.rmse, 1.0);
        assert!((r.mape - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_scenes() {
        let r = evaluate(&[20, 30], &[25, 25]).unwrap();
        assert!((r.rmse - 5.0).abs() < 1e-12);
        assert!((r.mape - 20.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[1, 2], &[1]).is_err());
        assert!(evaluate(&[1], &[0]).is_err());
        assert_eq!(rmse(&[1], &[0]).unwrap(), 1.0);
    }
}
