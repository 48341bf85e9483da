//! Recovery of the normalized local affine map at a decision-boundary point,
//! using only hard labels, and deduplication of the recovered tuples.
//!
//! At a boundary point `x` the network is locally `γ·x + β` with `γ·x + β = 0`.
//! Probing `x ± s e_i` reveals `sign(γ_i)`. Stepping off the boundary along the
//! anchor axis `e_a` by `s_a` and returning to it along `e_i` by `t_i` gives
//! `|γ_a| s_a = |γ_i| t_i`, hence the ratio `γ_i / |γ_a|`. The bias follows
//! from `β̂ = −γ̂·x`.

use alloc::vec;
use alloc::vec::Vec;

use crate::boundary::{bisect, BoundaryPoint};
use crate::error::Error;
use crate::linalg::{dot, vectors_equal, CompareConfig};
use crate::model::AffineTuple;
use crate::oracle::Oracle;

/// How each weight ratio is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioMode {
    /// Step along the anchor axis, return to the boundary along axis `i`.
    AnchorStep,
    /// Step along axis `i`, return to the boundary along the anchor axis.
    /// Its error does not grow with `|γ_i / γ_a|`.
    AxisStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    /// Stride of the sign probes `x ± s e_i`.
    pub probe_stride: f64,
    /// Stride `s_a` of the step off the boundary.
    pub step: f64,
    /// Bisection precision for the return to the boundary.
    pub epsilon: f64,
    /// Return strides beyond this bound leave the coordinate unrecovered.
    pub zero_threshold: f64,
    pub ratio_mode: RatioMode,
}

impl RecoveryConfig {
    /// Defaults for a search precision `epsilon` over a domain of radius `radius`.
    pub fn for_precision(epsilon: f64, radius: f64) -> Self {
        Self {
            probe_stride: 1e-6 * radius,
            step: 1e-2 * radius,
            epsilon,
            zero_threshold: 1e4 * radius,
            ratio_mode: RatioMode::AxisStep,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.probe_stride > 0.0) {
            return Err(Error::InvalidConfig("probe stride must be positive"));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidConfig("step must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive"));
        }
        if !(self.zero_threshold > self.step) {
            return Err(Error::InvalidConfig("zero threshold must exceed the step"));
        }
        Ok(())
    }
}

/// A recovered, normalized affine tuple and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredTuple {
    pub gamma: Vec<f64>,
    pub beta: f64,
    /// First coordinate with non-zero sign; `|gamma[anchor_index]| = 1`.
    pub anchor_index: usize,
    /// `false` where the return to the boundary failed.
    pub valid: Vec<bool>,
    pub occurrence_count: usize,
    /// Indices into the boundary-point list this tuple was recovered from.
    pub source_points: Vec<usize>,
    /// Boundary point the tuple was recovered at: the bracket midpoint, moved
    /// onto the anchor-axis crossing under `AxisStep`.
    pub point: Vec<f64>,
}

impl RecoveredTuple {
    pub fn affine(&self) -> AffineTuple {
        AffineTuple {
            gamma: self.gamma.clone(),
            beta: self.beta,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// `γ̂ ‖ β̂` with unrecovered coordinates replaced by NaN.
    pub fn comparison_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.valid)
            .map(|(&g, &ok)| if ok { g } else { f64::NAN })
            .collect();
        v.push(self.beta);
        v
    }
}

fn axis_point(base: &[f64], axis: usize, s: f64) -> Vec<f64> {
    let mut p = base.to_vec();
    p[axis] += s;
    p
}

/// `sign(γ_i)` for every axis, probed from the label-0 end of the bracket.
pub fn recover_signs<O: Oracle + ?Sized>(
    oracle: &O,
    x: &BoundaryPoint,
    cfg: &RecoveryConfig,
) -> Result<Vec<i8>, Error> {
    cfg.validate()?;
    let base = x.zero_side();
    let mut probe = base.clone();
    let mut signs = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        probe[i] = base[i] + cfg.probe_stride;
        let up = oracle.label(&probe)?;
        probe[i] = base[i] - cfg.probe_stride;
        let down = oracle.label(&probe)?;
        probe[i] = base[i];
        signs.push(match (up, down) {
            (true, true) => return Err(Error::InvalidBoundaryPoint { axis: i }),
            (true, false) => 1,
            (false, true) => -1,
            (false, false) => 0,
        });
    }
    Ok(signs)
}

/// Walks from `from` (whose label is `label_from`) along `sign · e_axis` with
/// doubling strides until the label changes, then bisects. Returns the
/// bracket midpoint, or `None` past `max_stride`.
fn return_to_boundary<O: Oracle + ?Sized>(
    oracle: &O,
    from: &[f64],
    axis: usize,
    sign: f64,
    label_from: bool,
    first_stride: f64,
    max_stride: f64,
    epsilon: f64,
) -> Result<Option<f64>, Error> {
    let mut dir = vec![0.0; from.len()];
    dir[axis] = sign;
    let mut slow = 0.0;
    let mut stride = first_stride;
    loop {
        if stride > max_stride {
            return Ok(None);
        }
        if oracle.label(&axis_point(from, axis, sign * stride))? != label_from {
            break;
        }
        slow = stride;
        stride *= 2.0;
    }
    let (s, f) = bisect(oracle, from, &dir, label_from, slow, stride, epsilon)?;
    Ok(Some(0.5 * (s + f)))
}

pub fn recover_tuple<O: Oracle + ?Sized>(
    oracle: &O,
    x: &BoundaryPoint,
    signs: &[i8],
    cfg: &RecoveryConfig,
) -> Result<RecoveredTuple, Error> {
    cfg.validate()?;
    let d = signs.len();
    if d != oracle.input_dim() {
        return Err(Error::Shape {
            expected: oracle.input_dim(),
            found: d,
        });
    }
    let anchor = signs
        .iter()
        .position(|&s| s != 0)
        .ok_or(Error::ZeroAffine)?;
    let mut origin = x.midpoint();
    let sa = f64::from(signs[anchor]);
    let mut gamma = vec![0.0; d];
    let mut valid = vec![true; d];
    gamma[anchor] = sa;

    match cfg.ratio_mode {
        RatioMode::AnchorStep => {
            // Step off the boundary until the label is 1.
            let mut step = cfg.step;
            let mut lifted = axis_point(&origin, anchor, sa * step);
            while !oracle.label(&lifted)? {
                step *= 2.0;
                if step > cfg.zero_threshold {
                    return Err(Error::InvalidBoundaryPoint { axis: anchor });
                }
                lifted = axis_point(&origin, anchor, sa * step);
            }
            for i in (anchor + 1)..d {
                if signs[i] == 0 {
                    continue;
                }
                let si = f64::from(signs[i]);
                match return_to_boundary(
                    oracle,
                    &lifted,
                    i,
                    -si,
                    true,
                    step,
                    cfg.zero_threshold,
                    cfg.epsilon,
                )? {
                    Some(t) => gamma[i] = si * step / t,
                    None => valid[i] = false,
                }
            }
        }
        RatioMode::AxisStep => {
            // The bracket midpoint sits off the boundary by up to ε along the
            // search direction, which the 1/|γ_a| scaling would amplify. Pin
            // the crossing along the anchor axis and measure from there.
            let mut dir = vec![0.0; d];
            dir[anchor] = sa;
            let h = cfg.probe_stride;
            let (lo, hi) = bisect(oracle, &origin, &dir, false, -h, h, cfg.epsilon)?;
            origin[anchor] += sa * 0.5 * (lo + hi);
            for i in (anchor + 1)..d {
                if signs[i] == 0 {
                    continue;
                }
                let si = f64::from(signs[i]);
                let lifted = axis_point(&origin, i, si * cfg.step);
                if !oracle.label(&lifted)? {
                    valid[i] = false;
                    continue;
                }
                match return_to_boundary(
                    oracle,
                    &lifted,
                    anchor,
                    -sa,
                    true,
                    cfg.step,
                    cfg.zero_threshold,
                    cfg.epsilon,
                )? {
                    Some(t) => gamma[i] = si * t / cfg.step,
                    None => valid[i] = false,
                }
            }
        }
    }
    let beta = -dot(&gamma, &origin);
    Ok(RecoveredTuple {
        gamma,
        beta,
        anchor_index: anchor,
        valid,
        occurrence_count: 1,
        source_points: Vec::new(),
        point: origin,
    })
}

/// Sign recovery followed by tuple recovery.
pub fn recover_at<O: Oracle + ?Sized>(
    oracle: &O,
    x: &BoundaryPoint,
    cfg: &RecoveryConfig,
) -> Result<RecoveredTuple, Error> {
    let signs = recover_signs(oracle, x, cfg)?;
    recover_tuple(oracle, x, &signs, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupConfig {
    pub compare: CompareConfig,
    /// A partial match merges into the larger cluster only if
    /// `o_large ≥ majority_margin · o_small`.
    pub majority_margin: f64,
}

impl DedupConfig {
    /// `φ = 10⁻⁶` relative to the tuple magnitude, `d_φ = max(1, d_0/100)`, margin 3.
    pub fn for_input_dim(d0: usize) -> Self {
        Self {
            compare: CompareConfig {
                phi: 1e-6,
                d_phi: (d0 / 100).max(1),
                relative: true,
            },
            majority_margin: 3.0,
        }
    }
}

struct Cluster {
    rep: RecoveredTuple,
    key: Vec<f64>,
    first: usize,
}

/// Clusters duplicate tuples. The first pass merges exact duplicates (`d_φ = 0`);
/// the second folds partially wrong tuples into a clearly larger cluster.
/// Output is sorted by occurrence count, descending.
pub fn dedup_tuples(tuples: &[RecoveredTuple], cfg: &DedupConfig) -> Vec<RecoveredTuple> {
    let exact = cfg.compare.with_d_phi(0);
    let mut clusters: Vec<Cluster> = Vec::new();
    for (idx, t) in tuples.iter().enumerate() {
        let key = t.comparison_vector();
        let hit = clusters.iter_mut().find(|c| {
            c.key.len() == key.len()
                && vectors_equal(&c.key, &key, &exact)
                    .map(|r| r.equal)
                    .unwrap_or(false)
        });
        match hit {
            Some(c) => {
                // β = −γ·x inherits |x| times the slope error, so prefer the
                // measurement taken closest to the origin.
                if t.valid == c.rep.valid && norm_sq(&t.point) < norm_sq(&c.rep.point) {
                    let mut nearer = t.clone();
                    absorb(&mut nearer, &c.rep);
                    c.rep = nearer;
                } else {
                    absorb(&mut c.rep, t);
                }
            }
            None => clusters.push(Cluster {
                rep: t.clone(),
                key,
                first: idx,
            }),
        }
    }
    // Merging grows clusters, which can enable further merges: iterate to a fixed point.
    loop {
        clusters.sort_by(|a, b| {
            b.rep
                .occurrence_count
                .cmp(&a.rep.occurrence_count)
                .then(a.first.cmp(&b.first))
        });
        let before = clusters.len();
        let mut kept: Vec<Cluster> = Vec::with_capacity(before);
        for c in clusters {
            let target = kept.iter_mut().find(|k| {
                k.key.len() == c.key.len()
                    && vectors_equal(&k.key, &c.key, &cfg.compare)
                        .map(|r| r.equal)
                        .unwrap_or(false)
                    && k.rep.occurrence_count as f64
                        >= cfg.majority_margin * c.rep.occurrence_count as f64
            });
            match target {
                Some(k) => absorb(&mut k.rep, &c.rep),
                None => kept.push(c),
            }
        }
        clusters = kept;
        if clusters.len() == before {
            break;
        }
    }
    clusters.sort_by(|a, b| {
        b.rep
            .occurrence_count
            .cmp(&a.rep.occurrence_count)
            .then(a.first.cmp(&b.first))
    });
    clusters.into_iter().map(|c| c.rep).collect()
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn absorb(into: &mut RecoveredTuple, other: &RecoveredTuple) {
    into.occurrence_count += other.occurrence_count;
    into.source_points.extend_from_slice(&other.source_points);
    into.source_points.sort_unstable();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{find_boundary, SearchConfig};
    use crate::linalg::Matrix;
    use crate::model::{Architecture, Layer, ModelParameters, ZERO_THRESHOLD};
    use crate::oracle::ModelOracle;

    fn affine(w: &[f64], b: f64) -> ModelParameters {
        ModelParameters::new(
            Architecture::new(vec![w.len(), 1]).unwrap(),
            vec![Layer {
                weights: Matrix::from_rows(&[w]),
                bias: vec![b],
            }],
        )
        .unwrap()
    }

    fn cfg(eps: f64) -> RecoveryConfig {
        RecoveryConfig {
            step: 0.5,
            ..RecoveryConfig::for_precision(eps, 1.0)
        }
    }

    fn boundary_on(o: &ModelOracle<'_>, start: &[f64], dir: &[f64]) -> BoundaryPoint {
        find_boundary(
            o,
            start,
            dir,
            &SearchConfig {
                epsilon: 1e-12,
                ..SearchConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn signs_of_affine() {
        let m = affine(&[2.0, -4.0, 0.0], 6.0);
        let o = ModelOracle::new(&m);
        let p = boundary_on(&o, &[0.0, 0.0, 0.0], &[0.6, 0.8, 0.0]);
        assert_eq!(recover_signs(&o, &p, &cfg(1e-12)).unwrap(), vec![1, -1, 0]);

        let m = affine(&[-1.0], 1.0);
        let o = ModelOracle::new(&m);
        let p = boundary_on(&o, &[0.0], &[1.0]);
        assert_eq!(recover_signs(&o, &p, &cfg(1e-12)).unwrap(), vec![-1]);
    }

    #[test]
    fn off_boundary_point_is_rejected() {
        let m = affine(&[1.0, 0.0], 1.0);
        let o = ModelOracle::new(&m);
        let fake = BoundaryPoint {
            point: vec![0.0, 0.0],
            start: vec![0.0, 0.0],
            direction: vec![1.0, 0.0],
            s_slow: 0.0,
            s_fast: 0.0,
            label_inside: false,
        };
        assert_eq!(
            recover_signs(&o, &fake, &cfg(1e-12)),
            Err(Error::InvalidBoundaryPoint { axis: 0 })
        );
    }

    #[test]
    fn tuple_of_affine() {
        let m = affine(&[2.0, -4.0], 6.0);
        let o = ModelOracle::new(&m);
        let p = boundary_on(&o, &[0.1, 0.2], &[0.6, -0.8]);
        for mode in [RatioMode::AnchorStep, RatioMode::AxisStep] {
            let c = RecoveryConfig {
                ratio_mode: mode,
                ..cfg(1e-12)
            };
            let t = recover_at(&o, &p, &c).unwrap();
            assert_eq!(t.anchor_index, 0);
            assert_eq!(t.gamma[0], 1.0);
            assert!((t.gamma[1] + 2.0).abs() < 1e-10, "{mode:?} {:?}", t.gamma);
            assert!((t.beta - 3.0).abs() < 1e-10, "{mode:?} {}", t.beta);
            assert!(t.is_complete());
        }
    }

    #[test]
    fn anchor_skips_zero_weight() {
        let m = affine(&[0.0, 3.0], -3.0);
        let o = ModelOracle::new(&m);
        let p = boundary_on(&o, &[7.0, 0.0], &[0.0, 1.0]);
        assert!((p.point[1] - 1.0).abs() < 1e-11);
        let t = recover_at(&o, &p, &cfg(1e-12)).unwrap();
        assert_eq!(t.anchor_index, 1);
        assert_eq!(t.gamma, vec![0.0, 1.0]);
        assert!((t.beta + 1.0).abs() < 1e-11);
    }

    #[test]
    fn zero_slope_rejected() {
        let m = affine(&[1.0, 0.0], 0.0);
        let o = ModelOracle::new(&m);
        let p = boundary_on(&o, &[0.5, 0.0], &[1.0, 0.0]);
        assert_eq!(
            recover_tuple(&o, &p, &[0, 0], &cfg(1e-12)),
            Err(Error::ZeroAffine)
        );
    }

    fn tuple(gamma: &[f64], beta: f64, count: usize) -> RecoveredTuple {
        RecoveredTuple {
            gamma: gamma.to_vec(),
            beta,
            anchor_index: AffineTuple {
                gamma: gamma.to_vec(),
                beta,
            }
            .anchor(ZERO_THRESHOLD)
            .unwrap(),
            valid: vec![true; gamma.len()],
            occurrence_count: count,
            source_points: vec![],
            point: vec![0.0; gamma.len()],
        }
    }

    #[test]
    fn dedup_merges_near_duplicates() {
        let c = DedupConfig {
            compare: CompareConfig::new(1e-6, 1).unwrap(),
            majority_margin: 3.0,
        };
        let a = tuple(&[1.0, 2.0], 3.0, 1);
        let b = tuple(&[1.0 + 1e-10, 2.0 - 1e-10], 3.0 + 1e-10, 1);
        let out = dedup_tuples(&[a.clone(), b], &c);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].occurrence_count, 2);
        assert_eq!(out[0].gamma, a.gamma);
    }

    #[test]
    fn dedup_folds_partial_into_majority() {
        let c = DedupConfig {
            compare: CompareConfig::new(1e-6, 1).unwrap(),
            majority_margin: 3.0,
        };
        let t1 = tuple(&[1.0, -0.5, 0.25, 2.0], 0.75, 1);
        let mut t2 = t1.clone();
        t2.gamma[2] += 1e3;
        let mut input = vec![t2.clone()];
        input.extend(core::iter::repeat(t1.clone()).take(9));
        let out = dedup_tuples(&input, &c);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].occurrence_count, 10);
        assert_eq!(out[0].gamma, t1.gamma);
    }

    #[test]
    fn dedup_keeps_disjoint_and_ambiguous() {
        let c = DedupConfig {
            compare: CompareConfig::new(1e-6, 1).unwrap(),
            majority_margin: 3.0,
        };
        let a = tuple(&[1.0, 2.0, 3.0], 1.0, 1);
        let b = tuple(&[1.0, 5.0, 6.0], 1.0, 1);
        assert_eq!(dedup_tuples(&[a.clone(), b], &c).len(), 2);
        // One coordinate apart but equal counts: no clear majority.
        let mut d = a.clone();
        d.gamma[2] = 9.0;
        assert_eq!(dedup_tuples(&[a, d], &c).len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn dedup_idempotent(
            picks in proptest::collection::vec((0usize..4, 0usize..3, -1e-9f64..1e-9), 1..30),
        ) {
            let bases = [[1.0, 2.0, -1.0, 0.5], [1.0, -3.0, 0.2, 4.0], [-1.0, 0.0, 0.7, 0.1], [1.0, 2.0, -1.0, 9.0]];
            let ts: Vec<RecoveredTuple> = picks
                .iter()
                .map(|&(b, corrupt, noise)| {
                    let mut g: Vec<f64> = bases[b].iter().map(|x| x + noise).collect();
                    if corrupt == 0 {
                        g[2] += 50.0;
                    }
                    tuple(&g, 1.0 + noise, 1)
                })
                .collect();
            let c = DedupConfig::for_input_dim(4);
            let once = dedup_tuples(&ts, &c);
            let twice = dedup_tuples(&once, &c);
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
