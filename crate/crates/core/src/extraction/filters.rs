//! Candidate filters: normalized-signature coverage, weight-sign consistency
//! and the prediction matching ratio.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg::{vectors_equal, CompareConfig};
use crate::model::{ActivationPattern, Architecture, ModelParameters, ZERO_THRESHOLD};
use crate::recovery::RecoveredTuple;
use crate::sampling::uniform_cube;

/// Upper bound on the number of activation patterns of `arch`, or `None`
/// when it does not fit in a `u128`.
pub fn count_max_patterns(arch: &Architecture) -> Option<u128> {
    let factors: Option<Vec<u128>> = arch
        .hidden()
        .iter()
        .map(|&d| {
            if d >= 128 {
                None
            } else {
                Some((1u128 << d) - 1)
            }
        })
        .collect();
    let factors = factors?;
    let mut total = factors
        .iter()
        .try_fold(1u128, |acc, &f| acc.checked_mul(f))?;
    let mut prefix = 1u128;
    for f in factors.iter().take(factors.len().saturating_sub(1)) {
        prefix = prefix.checked_mul(*f)?;
        total = total.checked_add(prefix)?;
    }
    Some(total)
}

/// All patterns with at least one active neuron per hidden layer, up to `budget`.
pub fn nonempty_patterns(arch: &Architecture, budget: usize) -> Option<Vec<ActivationPattern>> {
    let hidden = arch.hidden();
    if hidden.iter().any(|&d| d >= 64) {
        return None;
    }
    let radices: Vec<u64> = hidden.iter().map(|&d| (1u64 << d) - 1).collect();
    let total = radices.iter().try_fold(1u64, |a, &r| a.checked_mul(r))?;
    if total > budget as u64 {
        return None;
    }
    let mut out = Vec::with_capacity(total as usize);
    for idx in 0..total {
        let mut rest = idx;
        let masks: Vec<u64> = radices
            .iter()
            .map(|&r| {
                let m = rest % r + 1;
                rest /= r;
                m
            })
            .collect();
        out.push(ActivationPattern::from_masks(arch, &masks).ok()?);
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub compare: CompareConfig,
    pub adaptive_fraction: f64,
    pub pmr_samples: usize,
    /// Largest number of patterns the signature filter will enumerate.
    pub pattern_budget: usize,
}

impl FilterConfig {
    pub fn for_input_dim(d0: usize) -> Self {
        Self {
            compare: CompareConfig {
                phi: 1e-6,
                d_phi: (d0 / 100).max(1),
                relative: true,
            },
            adaptive_fraction: 0.95,
            pmr_samples: 1000,
            pattern_budget: 1 << 16,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.adaptive_fraction > 0.0 && self.adaptive_fraction <= 1.0) {
            return Err(Error::InvalidConfig("adaptive fraction must be in (0, 1]"));
        }
        if !(self.compare.phi > 0.0) {
            return Err(Error::InvalidConfig("phi must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureVerdict {
    Pass {
        matched: usize,
        valid: usize,
    },
    Fail {
        matched: usize,
        valid: usize,
    },
    /// Too many patterns to enumerate; the candidate is not rejected.
    Unfiltered,
}

impl SignatureVerdict {
    pub fn passed(&self) -> bool {
        !matches!(self, SignatureVerdict::Fail { .. })
    }
}

/// Normalized `γ ‖ β` vectors of every non-empty pattern of `params`,
/// or `None` when the pattern count exceeds `budget`.
pub fn candidate_signature(params: &ModelParameters, budget: usize) -> Option<Vec<Vec<f64>>> {
    let patterns = nonempty_patterns(params.arch(), budget)?;
    let mut sig = Vec::with_capacity(patterns.len());
    for p in &patterns {
        let (t, anchor) = params
            .affine_for_pattern(p)
            .ok()?
            .normalized(ZERO_THRESHOLD);
        if anchor.is_some() {
            sig.push(t.concat());
        }
    }
    Some(sig)
}

/// Passes iff at least `adaptive_fraction · N_valid` of the recovered tuples
/// seen more than once occur in the candidate's normalized signature.
pub fn signature_filter(
    params: &ModelParameters,
    tuples: &[RecoveredTuple],
    cfg: &FilterConfig,
) -> SignatureVerdict {
    match candidate_signature(params, cfg.pattern_budget) {
        Some(sig) => signature_verdict(&sig, tuples, cfg),
        None => SignatureVerdict::Unfiltered,
    }
}

pub(crate) fn signature_verdict(
    sig: &[Vec<f64>],
    tuples: &[RecoveredTuple],
    cfg: &FilterConfig,
) -> SignatureVerdict {
    let mut valid = 0;
    let mut matched = 0;
    for t in tuples.iter().filter(|t| t.occurrence_count > 1) {
        valid += 1;
        let v = t.comparison_vector();
        if sig.iter().any(|s| {
            vectors_equal(s, &v, &cfg.compare)
                .map(|c| c.equal)
                .unwrap_or(false)
        }) {
            matched += 1;
        }
    }
    if matched as f64 >= cfg.adaptive_fraction * valid as f64 {
        SignatureVerdict::Pass { matched, valid }
    } else {
        SignatureVerdict::Fail { matched, valid }
    }
}

/// `Ĝ⁽ⁱ⁾` for a slot of layer `layer` (1-based, hidden) under `pattern`:
/// the row vector mapping layer-`layer` activations to the output.
pub fn downstream_gain(
    params: &ModelParameters,
    layer: usize,
    pattern: &ActivationPattern,
) -> Vec<f64> {
    let layers = params.layers();
    let mut r = alloc::vec![1.0];
    for l in (layer..layers.len()).rev() {
        r = layers[l].weights.vec_mul(&r);
        if l > layer {
            for (v, &on) in r.iter_mut().zip(&pattern.layers[l - 1]) {
                if !on {
                    *v = 0.0;
                }
            }
        }
    }
    r
}

/// Every slot's `Ĝ` entry must carry the sign guessed for its layer. `Ĝ` is
/// taken under the pattern the candidate itself assigns to the slot's
/// boundary point; a wrong guess scrambles that pattern downstream.
/// `slots` pairs (layer, neuron, point); `signs[i - 1]` is layer `i`'s guess.
pub fn sign_filter<P: AsRef<[f64]>>(
    params: &ModelParameters,
    slots: &[(usize, usize, P)],
    signs: &[f64],
) -> bool {
    slots.iter().all(|(layer, neuron, point)| {
        let (layer, neuron) = (*layer, *neuron);
        if layer > signs.len() {
            return true;
        }
        let Ok(eval) = params.forward(point.as_ref()) else {
            return false;
        };
        let g = downstream_gain(params, layer, &eval.pattern)[neuron];
        g.abs() > ZERO_THRESHOLD && (g > 0.0) == (signs[layer - 1] > 0.0)
    })
}

/// Fraction of `samples` on which `model` reproduces the recorded label.
pub fn pmr_on(model: &ModelParameters, samples: &[(Vec<f64>, bool)]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let hits = samples
        .iter()
        .filter(|(x, y)| model.output(x).map(|v| (v > 0.0) == *y).unwrap_or(false))
        .count();
    hits as f64 / samples.len() as f64
}

/// Prediction matching ratio of two models over `count` uniform inputs.
pub fn pmr(
    a: &ModelParameters,
    b: &ModelParameters,
    count: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, Error> {
    let d = a.arch().input_dim();
    if b.arch().input_dim() != d {
        return Err(Error::Shape {
            expected: d,
            found: b.arch().input_dim(),
        });
    }
    if count == 0 {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..count {
        let x = uniform_cube(&mut rng, d, radius);
        if (a.output(&x)? > 0.0) == (b.output(&x)? > 0.0) {
            hits += 1;
        }
    }
    Ok(hits as f64 / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::Layer;
    use alloc::vec;

    fn arch(d: &[usize]) -> Architecture {
        Architecture::new(d.to_vec()).unwrap()
    }

    #[test]
    fn pattern_bound_counts() {
        assert_eq!(count_max_patterns(&arch(&[5, 2, 1])), Some(3));
        assert_eq!(count_max_patterns(&arch(&[5, 2, 2, 1])), Some(12));
        assert_eq!(count_max_patterns(&arch(&[5, 2, 2, 2, 1])), Some(39));
        assert_eq!(count_max_patterns(&arch(&[5, 1])), Some(1));
        assert_eq!(count_max_patterns(&arch(&[5, 200, 1])), None);
        assert_eq!(
            nonempty_patterns(&arch(&[5, 2, 2, 1]), 100).unwrap().len(),
            9
        );
        assert!(nonempty_patterns(&arch(&[5, 2, 2, 1]), 8).is_none());
    }

    fn two_two_one(a2: [f64; 2]) -> ModelParameters {
        ModelParameters::new(
            arch(&[2, 2, 1]),
            vec![
                Layer {
                    weights: Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]),
                    bias: vec![0.5, -0.25],
                },
                Layer {
                    weights: Matrix::from_rows(&[a2]),
                    bias: vec![-0.1],
                },
            ],
        )
        .unwrap()
    }

    fn tuples_of(m: &ModelParameters, count: usize) -> Vec<RecoveredTuple> {
        nonempty_patterns(m.arch(), 100)
            .unwrap()
            .iter()
            .map(|p| {
                let (t, a) = m.affine_for_pattern(p).unwrap().normalized(ZERO_THRESHOLD);
                RecoveredTuple {
                    valid: vec![true; t.gamma.len()],
                    gamma: t.gamma,
                    beta: t.beta,
                    anchor_index: a.unwrap(),
                    occurrence_count: count,
                    source_points: vec![],
                    point: vec![],
                }
            })
            .collect()
    }

    #[test]
    fn signature_accepts_self_rejects_negated_row() {
        let cfg = FilterConfig::for_input_dim(2);
        let m = two_two_one([2.0, 1.0]);
        let ts = tuples_of(&m, 2);
        assert_eq!(
            signature_filter(&m, &ts, &cfg),
            SignatureVerdict::Pass {
                matched: 3,
                valid: 3
            }
        );

        let mut layers = m.clone().into_layers();
        layers[0]
            .weights
            .row_mut(0)
            .iter_mut()
            .for_each(|v| *v = -*v);
        let bad = ModelParameters::new(m.arch().clone(), layers).unwrap();
        assert!(!signature_filter(&bad, &ts, &cfg).passed());

        // Singletons do not count towards N_valid.
        let ones = tuples_of(&m, 1);
        assert_eq!(
            signature_filter(&bad, &ones, &cfg),
            SignatureVerdict::Pass {
                matched: 0,
                valid: 0
            }
        );
    }

    #[test]
    fn adaptive_threshold_edge() {
        let cfg = FilterConfig::for_input_dim(2);
        let m = two_two_one([2.0, 1.0]);
        let good = &tuples_of(&m, 2)[0];
        let mut ts = vec![good.clone(); 19];
        let mut stray = good.clone();
        stray.gamma[1] += 5.0;
        stray.beta += 5.0;
        ts.push(stray);
        let sig = candidate_signature(&m, 100).unwrap();
        assert_eq!(
            signature_verdict(&sig, &ts, &cfg),
            SignatureVerdict::Pass {
                matched: 19,
                valid: 20
            }
        );
        ts.push(ts[19].clone());
        assert!(!signature_verdict(&sig, &ts, &cfg).passed());
    }

    #[test]
    fn sign_filter_uses_output_weights() {
        let m = two_two_one([2.0, 1.0]);
        let slots = [(1, 0, [0.3, -0.2]), (1, 1, [-0.4, 0.1])];
        assert!(sign_filter(&m, &slots, &[1.0]));
        assert!(!sign_filter(&m, &slots, &[-1.0]));
        let mixed = two_two_one([2.0, -1.0]);
        assert!(!sign_filter(&mixed, &slots, &[1.0]));
    }

    #[test]
    fn pmr_examples() {
        let m = two_two_one([2.0, 1.0]);
        assert_eq!(pmr(&m, &m, 500, 1.0, 3).unwrap(), 1.0);
        let mut layers = m.clone().into_layers();
        layers[1].weights = layers[1].weights.map(|v| -v);
        layers[1].bias[0] = -layers[1].bias[0];
        let neg = ModelParameters::new(m.arch().clone(), layers).unwrap();
        assert_eq!(pmr(&m, &neg, 500, 1.0, 3).unwrap(), 0.0);
    }
}
