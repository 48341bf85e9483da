//! Query and candidate forecasts for a planned attack.

use hardlabel_core::Architecture;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackBudget {
    /// Boundary points per possible activation pattern.
    pub c_n: usize,
    /// Queries per boundary search and per recovered coordinate.
    pub c_eps: u32,
    /// `c_eps · c_n · 2ⁿ · d_0`.
    pub predicted_queries: f64,
    /// `N^(n+1) · 2^k` for the tuple count `N` used in the forecast.
    pub predicted_candidates: f64,
    pub tuples_assumed: usize,
}

impl AttackBudget {
    /// `tuples` is the expected number of distinct tuples; the pattern-count
    /// bound is a reasonable guess before any query is made.
    pub fn new(
        arch: &Architecture,
        c_n: usize,
        epsilon: f64,
        domain_radius: f64,
        tuples: usize,
    ) -> Self {
        let c_eps = c_eps(epsilon, domain_radius);
        let n = arch.neurons() as i32;
        let predicted_queries = c_eps as f64 * c_n as f64 * 2f64.powi(n) * arch.input_dim() as f64;
        let predicted_candidates = (tuples as f64).powi(n + 1) * 2f64.powi(arch.depth() as i32);
        Self {
            c_n,
            c_eps,
            predicted_queries,
            predicted_candidates,
            tuples_assumed: tuples,
        }
    }

    /// True when `queries` is within `factor` times the forecast.
    pub fn conforms(&self, queries: u64, factor: f64) -> bool {
        (queries as f64) <= factor * self.predicted_queries
    }
}

/// `ceil(log₂(2R / ε)) + 4`: bisection steps over the domain span plus the
/// bracketing and verification probes.
pub fn c_eps(epsilon: f64, domain_radius: f64) -> u32 {
    (2.0 * domain_radius / epsilon).log2().ceil().max(0.0) as u32 + 4
}
