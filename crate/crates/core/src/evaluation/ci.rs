use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Mean and half-width `2 · s/√n` of a sample; the interval
/// `[mean - hw, mean + hw]` has about 95% coverage.
pub fn ci_mean(values: &[f64]) -> Result<(f64, f64), EvalError> {
    let (mean, se) = mean_and_se(values)?;
    Ok((mean, 2.0 * se))
}

/// Same as [`ci_mean`] with the multiplier taken from the normal quantile
/// for the given two-sided confidence level.
pub fn ci_mean_at(values: &[f64], confidence: f64) -> Result<(f64, f64), EvalError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EvalError::InvalidParameter(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    let (mean, se) = mean_and_se(values)?;
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    Ok((mean, z * se))
}

fn mean_and_se(values: &[f64]) -> Result<(f64, f64), EvalError> {
    let n = values.len();
    if n < 2 {
        return Err(EvalError::SampleTooSmall(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}
