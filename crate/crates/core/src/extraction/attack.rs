//! The end-to-end attack: collect boundary points, recover and deduplicate
//! tuples, enumerate candidate assignments, filter and rank by PMR.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::filters::{
    candidate_signature, pmr_on, sign_filter, signature_verdict, FilterConfig, SignatureVerdict,
};
use super::layers::{common_anchor, reanchor, recover_biases, ExtractionState};
use super::plan::{downstream_options, slot_pattern, slots, PlanMode};
use crate::boundary::{draw_search_pairs, find_boundary, BoundaryPoint, SearchConfig};
use crate::error::Error;
use crate::exec::Executor;
use crate::model::{ActivationPattern, Architecture, Layer, ModelParameters};
use crate::oracle::Oracle;
use crate::recovery::{dedup_tuples, recover_at, DedupConfig, RecoveredTuple, RecoveryConfig};
use crate::sampling::uniform_cube;

/// Candidates are evaluated in fixed-size batches; early exit is checked
/// between batches, so results do not depend on the executor.
const BATCH: usize = 512;

/// Survivors kept in the outcome (all are counted).
const MAX_KEPT_SURVIVORS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub search: SearchConfig,
    pub recovery: RecoveryConfig,
    pub dedup: DedupConfig,
    pub filter: FilterConfig,
    /// Boundary points collected: `points_multiplier · 2ⁿ`.
    pub points_multiplier: usize,
    pub max_candidates: u64,
    /// Stop at the first candidate with PMR 1 on the held-out samples.
    pub early_exit: bool,
    pub plan_mode: PlanMode,
}

impl AttackConfig {
    pub fn new(arch: &Architecture, epsilon: f64, domain_radius: f64, seed: u64) -> Self {
        let d0 = arch.input_dim();
        let mut recovery = RecoveryConfig::for_precision(epsilon, domain_radius);
        if arch.depth() == 0 {
            // One region everywhere, so a long step costs nothing and divides the bisection error.
            recovery.step = domain_radius;
        }
        Self {
            search: SearchConfig::with_precision(epsilon, domain_radius, seed),
            recovery,
            dedup: DedupConfig::for_input_dim(d0),
            filter: FilterConfig::for_input_dim(d0),
            points_multiplier: 8,
            max_candidates: 1 << 20,
            early_exit: false,
            plan_mode: PlanMode::Strict,
        }
    }

    pub fn point_count(&self, arch: &Architecture) -> usize {
        let n = arch.neurons() as u32;
        2usize
            .checked_pow(n)
            .and_then(|p| p.checked_mul(self.points_multiplier))
            .unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.search.validate()?;
        self.recovery.validate()?;
        self.filter.validate()?;
        if self.points_multiplier == 0 {
            return Err(Error::InvalidConfig("points multiplier must be at least 1"));
        }
        Ok(())
    }
}

/// One point in the candidate space: a tuple per slot, a sign per hidden
/// layer and, for relaxed plans, a downstream-pattern choice per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSpec {
    pub index: u64,
    pub tuples: Vec<usize>,
    /// `±1` for each hidden layer.
    pub signs: Vec<f64>,
    pub options: Vec<usize>,
}

/// Lexicographic enumeration over tuple assignments (increasing within a
/// layer, distinct overall), then sign guesses, then plan options.
#[derive(Debug, Clone)]
pub struct CandidateEnumerator {
    group_start: Vec<bool>,
    available: usize,
    assignment: Option<Vec<usize>>,
    sign_count: u64,
    sign_idx: u64,
    option_radix: Vec<usize>,
    option_digits: Vec<usize>,
    k: usize,
    next_index: u64,
}

impl CandidateEnumerator {
    pub fn new(arch: &Architecture, available: usize, mode: PlanMode) -> Result<Self, Error> {
        let slots = slots(arch);
        let mut group_start = Vec::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            group_start.push(i == 0 || slots[i - 1].layer != s.layer);
        }
        let option_radix = slots
            .iter()
            .map(|s| {
                if s.layer > arch.depth() {
                    Ok(1)
                } else {
                    downstream_options(arch, s.layer, mode)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let k = arch.depth();
        if k >= 63 {
            return Err(Error::Architecture("too many hidden layers"));
        }
        let mut a = vec![0; slots.len()];
        let assignment = if fill(&mut a, 0, &group_start, available) {
            Some(a)
        } else {
            None
        };
        Ok(Self {
            option_digits: vec![0; slots.len()],
            group_start,
            available,
            assignment,
            sign_count: 1 << k,
            sign_idx: 0,
            option_radix,
            k,
            next_index: 0,
        })
    }

    /// Size of the candidate space, saturating.
    pub fn total(arch: &Architecture, available: usize, mode: PlanMode) -> u128 {
        let mut total: u128 = 1;
        let mut left = available as u128;
        let sizes: Vec<usize> = arch.hidden().iter().copied().chain([1]).collect();
        for d in sizes {
            total = total.saturating_mul(binomial(left, d as u128));
            left = left.saturating_sub(d as u128);
        }
        total = total.saturating_mul(1u128 << arch.depth().min(100));
        for s in slots(arch) {
            if s.layer <= arch.depth() {
                let o = downstream_options(arch, s.layer, mode).unwrap_or(usize::MAX);
                total = total.saturating_mul(o as u128);
            }
        }
        total
    }

    fn advance(&mut self) {
        for (d, &r) in self.option_digits.iter_mut().zip(&self.option_radix).rev() {
            *d += 1;
            if *d < r {
                return;
            }
            *d = 0;
        }
        self.sign_idx += 1;
        if self.sign_idx < self.sign_count {
            return;
        }
        self.sign_idx = 0;
        if let Some(a) = self.assignment.as_mut() {
            if !next_assignment(a, &self.group_start, self.available) {
                self.assignment = None;
            }
        }
    }
}

impl Iterator for CandidateEnumerator {
    type Item = CandidateSpec;

    fn next(&mut self) -> Option<CandidateSpec> {
        let tuples = self.assignment.clone()?;
        let signs = (0..self.k)
            .map(|l| {
                if self.sign_idx >> l & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let spec = CandidateSpec {
            index: self.next_index,
            tuples,
            signs,
            options: self.option_digits.clone(),
        };
        self.next_index += 1;
        self.advance();
        Some(spec)
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

fn smallest_free(a: &[usize], pos: usize, group_start: &[bool], from: usize) -> usize {
    let mut v = if group_start[pos] {
        from
    } else {
        from.max(a[pos - 1] + 1)
    };
    while a[..pos].contains(&v) {
        v += 1;
    }
    v
}

fn fill(a: &mut [usize], from: usize, group_start: &[bool], n: usize) -> bool {
    for p in from..a.len() {
        let v = smallest_free(a, p, group_start, 0);
        if v >= n {
            return false;
        }
        a[p] = v;
    }
    true
}

fn next_assignment(a: &mut [usize], group_start: &[bool], n: usize) -> bool {
    for pos in (0..a.len()).rev() {
        let v = smallest_free(a, pos, group_start, a[pos] + 1);
        if v < n {
            a[pos] = v;
            if fill(a, pos + 1, group_start, n) {
                return true;
            }
        }
    }
    false
}

/// Where a candidate stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// No common anchor, singular system or non-finite parameters.
    Degenerate,
    SignatureFail,
    SignFail,
    Survivor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionCandidate {
    pub spec: CandidateSpec,
    pub params: ModelParameters,
    pub signature: SignatureVerdict,
    pub sign_pass: bool,
    pub pmr: f64,
    /// Largest least-squares residual over the deeper layers.
    pub residual: f64,
}

/// Builds the candidate model for `spec`. Returns the model, the slot
/// patterns used and the largest residual.
pub fn build_candidate(
    arch: &Architecture,
    spec: &CandidateSpec,
    tuples: &[RecoveredTuple],
    mode: PlanMode,
) -> Result<(ModelParameters, Vec<ActivationPattern>, f64), Error> {
    let slots = slots(arch);
    let chosen: Vec<&RecoveredTuple> = spec.tuples.iter().map(|&i| &tuples[i]).collect();
    let anchor = common_anchor(
        &chosen
            .iter()
            .map(|t| t.gamma.as_slice())
            .collect::<Vec<_>>(),
    )
    .ok_or(Error::Degenerate {
        rank: 0,
        unknowns: 1,
    })?;
    let gammas: Vec<Vec<f64>> = chosen
        .iter()
        .map(|t| reanchor(&t.gamma, anchor).ok_or(Error::ZeroAffine))
        .collect::<Result<_, _>>()?;

    let mut state = ExtractionState::new(arch.input_dim());
    let mut at = 0;
    let widths: Vec<usize> = arch.hidden().iter().copied().chain([1]).collect();
    for (l, &d) in widths.iter().enumerate() {
        let sign = spec.signs.get(l).copied().unwrap_or(1.0);
        state.push_layer(&gammas[at..at + d], sign)?;
        at += d;
    }
    let patterns: Vec<ActivationPattern> = slots
        .iter()
        .zip(&spec.options)
        .map(|(&s, &o)| slot_pattern(arch, s, if mode == PlanMode::Strict { 0 } else { o }))
        .collect();
    let points: Vec<&[f64]> = chosen.iter().map(|t| t.point.as_slice()).collect();
    let residual = state.max_residual();
    let weights = state.into_weights();
    let biases = recover_biases(&weights, &points, &patterns)?;
    let layers = weights
        .into_iter()
        .zip(biases)
        .map(|(weights, bias)| Layer { weights, bias })
        .collect();
    Ok((
        ModelParameters::new(arch.clone(), layers)?,
        patterns,
        residual,
    ))
}

/// Runs every filter on one candidate. PMR is measured on `samples` only for
/// candidates that pass the signature and sign filters.
pub fn evaluate_candidate(
    arch: &Architecture,
    spec: &CandidateSpec,
    tuples: &[RecoveredTuple],
    cfg: &AttackConfig,
    samples: &[(Vec<f64>, bool)],
) -> (Verdict, Option<ExtractionCandidate>) {
    let (params, _, residual) = match build_candidate(arch, spec, tuples, cfg.plan_mode) {
        Ok(v) => v,
        Err(_) => return (Verdict::Degenerate, None),
    };
    let signature = match candidate_signature(&params, cfg.filter.pattern_budget) {
        Some(sig) => signature_verdict(&sig, tuples, &cfg.filter),
        None => SignatureVerdict::Unfiltered,
    };
    if !signature.passed() {
        return (Verdict::SignatureFail, None);
    }
    let slot_refs: Vec<(usize, usize, &[f64])> = slots(arch)
        .iter()
        .zip(&spec.tuples)
        .map(|(s, &t)| (s.layer, s.neuron, tuples[t].point.as_slice()))
        .collect();
    if !sign_filter(&params, &slot_refs, &spec.signs) {
        return (Verdict::SignFail, None);
    }
    let pmr = pmr_on(&params, samples);
    (
        Verdict::Survivor,
        Some(ExtractionCandidate {
            spec: spec.clone(),
            params,
            signature,
            sign_pass: true,
            pmr,
            residual,
        }),
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackReport {
    pub query_count: u64,
    pub points_requested: usize,
    /// Boundary points found (`M`).
    pub points_collected: usize,
    pub search_failures: usize,
    pub recovery_failures: usize,
    /// Tuples after deduplication (`N`).
    pub tuples: usize,
    /// Tuples seen more than once.
    pub tuples_valid: usize,
    pub candidate_space: u128,
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

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub best: Option<ExtractionCandidate>,
    /// Survivors with the best PMR, in enumeration order (capped).
    pub survivors: Vec<ExtractionCandidate>,
    pub report: AttackReport,
    pub points: Vec<BoundaryPoint>,
    /// Per-point recoveries before deduplication.
    pub recovered: Vec<RecoveredTuple>,
    /// Deduplicated tuples, by occurrence count.
    pub tuples: Vec<RecoveredTuple>,
}

/// Steps 1 and 2: boundary points and their deduplicated tuples.
pub fn collect_tuples<O, E>(
    oracle: &O,
    arch: &Architecture,
    cfg: &AttackConfig,
    exec: &E,
    report: &mut AttackReport,
) -> Result<(Vec<BoundaryPoint>, Vec<RecoveredTuple>, Vec<RecoveredTuple>), Error>
where
    O: Oracle + ?Sized,
    E: Executor,
{
    let count = cfg.point_count(arch);
    report.points_requested = count;
    let pairs = draw_search_pairs(count, arch.input_dim(), &cfg.search);
    let found = exec.map(&pairs, |(s, d)| find_boundary(oracle, s, d, &cfg.search));
    let mut points = Vec::new();
    for r in found {
        match r {
            Ok(p) => points.push(p),
            Err(Error::BoundaryNotFound) => report.search_failures += 1,
            Err(e) => return Err(e),
        }
    }
    report.points_collected = points.len();

    let indexed: Vec<(usize, &BoundaryPoint)> = points.iter().enumerate().collect();
    let results = exec.map(&indexed, |(i, p)| {
        recover_at(oracle, p, &cfg.recovery).map(|t| (*i, t))
    });
    let mut recovered = Vec::new();
    for r in results {
        match r {
            Ok((i, mut t)) => {
                t.source_points = vec![i];
                recovered.push(t);
            }
            Err(Error::InvalidBoundaryPoint { .. }) | Err(Error::ZeroAffine) => {
                report.recovery_failures += 1
            }
            Err(e) => return Err(e),
        }
    }
    let tuples = dedup_tuples(&recovered, &cfg.dedup);
    report.tuples = tuples.len();
    report.tuples_valid = tuples.iter().filter(|t| t.occurrence_count > 1).count();
    Ok((points, recovered, tuples))
}

/// Start points (labels known from the searches) plus fresh metered samples.
pub fn pmr_samples<O, E>(
    oracle: &O,
    points: &[BoundaryPoint],
    cfg: &AttackConfig,
    exec: &E,
) -> Result<Vec<(Vec<f64>, bool)>, Error>
where
    O: Oracle + ?Sized,
    E: Executor,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.search.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let fresh: Vec<Vec<f64>> = (0..cfg.filter.pmr_samples)
        .map(|_| uniform_cube(&mut rng, oracle.input_dim(), cfg.search.domain_radius))
        .collect();
    let labels = exec.map(&fresh, |x| oracle.label(x));
    let mut out: Vec<(Vec<f64>, bool)> = points
        .iter()
        .map(|p| (p.start.clone(), p.label_inside))
        .collect();
    for (x, y) in fresh.into_iter().zip(labels) {
        out.push((x, y?));
    }
    Ok(out)
}

/// Steps 3 to 5 over already deduplicated tuples.
pub fn search_candidates<E: Executor>(
    arch: &Architecture,
    tuples: &[RecoveredTuple],
    samples: &[(Vec<f64>, bool)],
    cfg: &AttackConfig,
    exec: &E,
    report: &mut AttackReport,
) -> Result<(Option<ExtractionCandidate>, Vec<ExtractionCandidate>), Error> {
    let required = arch.neurons() + 1;
    if tuples.len() < required {
        return Err(Error::InsufficientData {
            available: tuples.len(),
            required,
        });
    }
    report.candidate_space = CandidateEnumerator::total(arch, tuples.len(), cfg.plan_mode);
    let mut specs = CandidateEnumerator::new(arch, tuples.len(), cfg.plan_mode)?;
    let mut best: Option<ExtractionCandidate> = None;
    let mut kept: Vec<ExtractionCandidate> = Vec::new();
    let mut remaining = cfg.max_candidates;
    while remaining > 0 {
        let take = remaining.min(BATCH as u64) as usize;
        let batch: Vec<CandidateSpec> = specs.by_ref().take(take).collect();
        if batch.is_empty() {
            break;
        }
        remaining -= batch.len() as u64;
        report.candidates_enumerated += batch.len() as u64;
        let results = exec.map(&batch, |s| {
            evaluate_candidate(arch, s, tuples, cfg, samples)
        });
        for (verdict, cand) in results {
            match verdict {
                Verdict::Degenerate => report.degenerate += 1,
                Verdict::SignatureFail => {}
                Verdict::SignFail | Verdict::Survivor => {
                    report.passed_signature += 1;
                }
            }
            let Some(c) = cand else { continue };
            report.passed_sign += 1;
            if c.signature == SignatureVerdict::Unfiltered {
                report.unfiltered_signature += 1;
            }
            // Ties go to the earlier candidate.
            let better = best.as_ref().is_none_or(|b| c.pmr > b.pmr);
            if better {
                kept.clear();
                best = Some(c.clone());
            }
            if best.as_ref().is_some_and(|b| c.pmr == b.pmr) && kept.len() < MAX_KEPT_SURVIVORS {
                kept.push(c);
            }
        }
        if cfg.early_exit && best.as_ref().is_some_and(|b| b.pmr == 1.0) {
            report.early_exit_taken = true;
            break;
        }
    }
    report.best_pmr = best.as_ref().map(|b| b.pmr);
    report.best_index = best.as_ref().map(|b| b.spec.index);
    Ok((best, kept))
}

/// The full attack against a hard-label oracle of known architecture.
pub fn run_attack<O, E>(
    oracle: &O,
    arch: &Architecture,
    cfg: &AttackConfig,
    exec: &E,
) -> Result<AttackOutcome, Error>
where
    O: Oracle + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    if oracle.input_dim() != arch.input_dim() {
        return Err(Error::Shape {
            expected: arch.input_dim(),
            found: oracle.input_dim(),
        });
    }
    let mut report = AttackReport::default();
    let (points, recovered, tuples) = collect_tuples(oracle, arch, cfg, exec, &mut report)?;
    let required = arch.neurons() + 1;
    if tuples.len() < required {
        return Err(Error::InsufficientData {
            available: tuples.len(),
            required,
        });
    }
    let samples = pmr_samples(oracle, &points, cfg, exec)?;
    report.pmr_samples = samples.len();
    let (best, survivors) = search_candidates(arch, &tuples, &samples, cfg, exec, &mut report)?;
    report.query_count = oracle.query_count();
    Ok(AttackOutcome {
        best,
        survivors,
        report,
        points,
        recovered,
        tuples,
    })
}
