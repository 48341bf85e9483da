//! Serializable records for attack and verification results.

use hardlabel_core::extraction::attack::AttackReport;
use hardlabel_core::verify::EquivalenceReport;
use serde::{Deserialize, Serialize};

use crate::budget::AttackBudget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub precision: f64,
    pub domain_radius: f64,
    pub seed: u64,
    pub points_multiplier: usize,
    pub phi: f64,
    pub d_phi: usize,
    pub pmr_samples: usize,
    pub max_candidates: u64,
    pub early_exit: bool,
    pub relaxed_plan: bool,
    pub recovery_step: f64,
    pub probe_stride: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub query_count: u64,
    pub points_requested: usize,
    pub points_collected: usize,
    pub search_failures: usize,
    pub recovery_failures: usize,
    pub tuples: usize,
    pub tuples_valid: usize,
    /// Decimal string: the space can exceed 64 bits.
    pub candidate_space: String,
    pub candidates_enumerated: u64,
    pub degenerate: u64,
    pub passed_signature: u64,
    pub unfiltered_signature: u64,
    pub passed_sign: u64,
    pub pmr_samples: usize,
    pub best_pmr: Option<f64>,
    pub best_index: Option<u64>,
    pub early_exit_taken: bool,
}

impl From<&AttackReport> for CountsRecord {
    fn from(r: &AttackReport) -> Self {
        Self {
            query_count: r.query_count,
            points_requested: r.points_requested,
            points_collected: r.points_collected,
            search_failures: r.search_failures,
            recovery_failures: r.recovery_failures,
            tuples: r.tuples,
            tuples_valid: r.tuples_valid,
            candidate_space: r.candidate_space.to_string(),
            candidates_enumerated: r.candidates_enumerated,
            degenerate: r.degenerate,
            passed_signature: r.passed_signature,
            unfiltered_signature: r.unfiltered_signature,
            passed_sign: r.passed_sign,
            pmr_samples: r.pmr_samples,
            best_pmr: r.best_pmr,
            best_index: r.best_index,
            early_exit_taken: r.early_exit_taken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRecord {
    pub epsilon_bound: f64,
    pub max_param_error: f64,
    pub scale_c: f64,
    pub scale_spread: f64,
    pub scale_mad: f64,
    pub scale_samples_used: usize,
    pub scale_closed_form: f64,
    pub pmr: f64,
    pub pmr_samples: usize,
    pub ambiguous_alignment: bool,
    pub query_count: Option<u64>,
    /// Largest `|f̂(x) − c·f(x)|` over uniform samples; should not exceed the bound.
    pub sampled_deviation: Option<f64>,
}

impl EquivalenceRecord {
    pub fn new(r: &EquivalenceReport, pmr_samples: usize, sampled_deviation: Option<f64>) -> Self {
        Self {
            epsilon_bound: r.epsilon_bound,
            max_param_error: r.max_param_error,
            scale_c: r.scale.c,
            scale_spread: r.scale.spread,
            scale_mad: r.scale.mad,
            scale_samples_used: r.scale.used,
            scale_closed_form: r.scale_closed_form,
            pmr: r.pmr,
            pmr_samples,
            ambiguous_alignment: r.ambiguous_alignment,
            query_count: r.query_count,
            sampled_deviation,
        }
    }

    /// `ε_search | PMR | queries | ε bound | max|θ−θ̂|`, magnitudes as powers of two.
    pub fn table_row(&self, precision: Option<f64>) -> String {
        let eps = precision.map_or_else(|| "-".to_string(), |e| format!("{e:.0e}"));
        let q = self.query_count.map_or_else(
            || "-".to_string(),
            |q| format!("2^{:.2}", (q as f64).log2()),
        );
        format!(
            "{eps} | {:.4}% | {q} | 2^{:.2} | 2^{:.2}",
            100.0 * self.pmr,
            self.epsilon_bound.log2(),
            self.max_param_error.log2()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub architecture: Vec<usize>,
    pub config: ConfigRecord,
    pub counts: CountsRecord,
    pub budget: BudgetRecord,
    pub wall_time_seconds: f64,
    /// Present when the victim's parameters were available for checking.
    pub equivalence: Option<EquivalenceRecord>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecord {
    pub c_n: usize,
    pub c_eps: u32,
    pub predicted_queries: f64,
    pub predicted_candidates: f64,
    pub queries_over_prediction: f64,
}

impl BudgetRecord {
    pub fn new(b: &AttackBudget, queries: u64) -> Self {
        Self {
            c_n: b.c_n,
            c_eps: b.c_eps,
            predicted_queries: b.predicted_queries,
            predicted_candidates: b.predicted_candidates,
            queries_over_prediction: queries as f64 / b.predicted_queries,
        }
    }
}
