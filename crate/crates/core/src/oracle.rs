//! The hard-label oracle: the only view of the victim the attack gets.

use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::Error;
use crate::model::ModelParameters;

/// Query meter. Incremented exactly once per oracle call, from any thread.
#[derive(Debug, Default)]
pub struct OracleStats {
    query_count: AtomicU64,
}

impl OracleStats {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn query_count(&self) -> u64 {
        self.query_count.load(Ordering::SeqCst)
    }

    #[inline]
    fn record(&self) {
        self.query_count.fetch_add(1, Ordering::SeqCst);
    }
}

/// `1{f(x) > 0}`, metered.
pub fn hard_label(params: &ModelParameters, x: &[f64], stats: &OracleStats) -> Result<bool, Error> {
    let v = params.output(x)?;
    stats.record();
    Ok(v > 0.0)
}

pub trait Oracle: Sync {
    fn input_dim(&self) -> usize;

    fn label(&self, x: &[f64]) -> Result<bool, Error>;

    fn query_count(&self) -> u64;
}

/// In-process oracle over known parameters.
#[derive(Debug)]
pub struct ModelOracle<'a> {
    params: &'a ModelParameters,
    stats: OracleStats,
}

impl<'a> ModelOracle<'a> {
    pub fn new(params: &'a ModelParameters) -> Self {
        Self {
            params,
            stats: OracleStats::new(),
        }
    }

    pub fn stats(&self) -> &OracleStats {
        &self.stats
    }
}

impl Oracle for ModelOracle<'_> {
    fn input_dim(&self) -> usize {
        self.params.arch().input_dim()
    }

    fn label(&self, x: &[f64]) -> Result<bool, Error> {
        hard_label(self.params, x, &self.stats)
    }

    fn query_count(&self) -> u64 {
        self.stats.query_count()
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn label(&self, x: &[f64]) -> Result<bool, Error> {
        (**self).label(x)
    }

    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{Architecture, Layer};

    fn constant(v: f64) -> ModelParameters {
        ModelParameters::new(
            Architecture::new(vec![1, 1]).unwrap(),
            vec![Layer {
                weights: Matrix::from_rows(&[[0.0]]),
                bias: vec![v],
            }],
        )
        .unwrap()
    }

    #[test]
    fn label_is_strict_sign() {
        let stats = OracleStats::new();
        assert!(hard_label(&constant(3.2), &[0.0], &stats).unwrap());
        assert!(!hard_label(&constant(0.0), &[0.0], &stats).unwrap());
        assert!(!hard_label(&constant(-1e-300), &[0.0], &stats).unwrap());
        assert_eq!(stats.query_count(), 3);
    }

    #[test]
    fn errors_do_not_count() {
        let stats = OracleStats::new();
        assert!(hard_label(&constant(1.0), &[0.0, 1.0], &stats).is_err());
        assert_eq!(stats.query_count(), 0);
    }

    #[test]
    fn concurrent_count_is_exact() {
        let m = constant(1.0);
        let o = ModelOracle::new(&m);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        o.label(&[0.5]).unwrap();
                    }
                });
            }
        });
        assert_eq!(o.query_count(), 8000);
    }
}
