//! Sample summaries used by evaluation and comparison tables.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for n < 2.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std = var.sqrt();
        Self {
            n,
            mean,
            std,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stderr: std / (n as f64).sqrt(),
        }
    }
}

/// Relative cost improvement of `candidate` over `baseline`, in percent.
pub fn improvement_pct(baseline: f64, candidate: f64) -> f64 {
    (baseline - candidate) / baseline * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_basic() {
        let s = Summary::from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 3.0);
        let c = Summary::from_slice(&[4.0, 4.0]);
        assert_eq!(c.std, 0.0);
        assert_eq!(c.stderr, 0.0);
    }

    #[test]
    fn improvement_against_self_is_zero() {
        assert_eq!(improvement_pct(12.5, 12.5), 0.0);
        assert_eq!(improvement_pct(100.0, 80.0), 20.0);
    }
}
