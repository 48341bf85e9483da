//! Recovery of a k-deep network from deduplicated boundary tuples.

pub mod attack;
pub mod filters;
pub mod layers;
pub mod plan;

pub use attack::{
    run_attack, AttackConfig, AttackOutcome, AttackReport, CandidateSpec, ExtractionCandidate,
};
pub use filters::{
    count_max_patterns, pmr, sign_filter, signature_filter, FilterConfig, SignatureVerdict,
};
pub use layers::{recover_biases, recover_layer1, recover_layer_weights, ExtractionState};
pub use plan::PlanMode;
