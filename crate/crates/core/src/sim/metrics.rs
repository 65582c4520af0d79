use super::SimError;
use crate::topology::Tokens;

/// Completed over generated payments; 1 when nothing was generated.
pub fn compute_tsr(completed: u64, generated: u64) -> Result<f64, SimError> {
    if completed > generated {
        return Err(SimError::Metric(format!("{completed} completed out of {generated} generated")));
    }
    if generated == 0 {
        return Ok(1.0);
    }
    Ok(completed as f64 / generated as f64)
}

/// Completed over generated payment value; 1 when nothing was generated.
pub fn compute_ntp(completed_value: Tokens, generated_value: Tokens) -> Result<f64, SimError> {
    if completed_value < 0.0 || completed_value > generated_value * (1.0 + 1e-12) {
        return Err(SimError::Metric(format!("completed value {completed_value} exceeds generated {generated_value}")));
    }
    if generated_value == 0.0 {
        return Ok(1.0);
    }
    Ok((completed_value / generated_value).min(1.0))
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencySummary { count: s.len(), mean: s.iter().sum::<f64>() / s.len() as f64, p50: rank(0.5), p95: rank(0.95) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsr_examples() {
        assert_eq!(compute_tsr(91, 100).unwrap(), 0.91);
        assert_eq!(compute_tsr(0, 100).unwrap(), 0.0);
        assert_eq!(compute_tsr(0, 0).unwrap(), 1.0);
        assert!(compute_tsr(5, 4).is_err());
    }

    #[test]
    fn ntp_examples() {
        assert_eq!(compute_ntp(500.0, 1000.0).unwrap(), 0.5);
        assert_eq!(compute_ntp(1000.0, 1000.0).unwrap(), 1.0);
        assert_eq!(compute_ntp(0.0, 0.0).unwrap(), 1.0);
        assert!(compute_ntp(2.0, 1.0).is_err());
    }

    #[test]
    fn latency_percentiles() {
        let l = LatencySummary::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((l.count, l.mean, l.p50, l.p95), (4, 2.5, 2.0, 4.0));
        assert_eq!(LatencySummary::from_samples(&[]).count, 0);
    }
}
