//! Simulator-side checks that need the victim's true parameters: neuron
//! alignment, theoretical rescaled parameters, parameter error, an interval
//! bound on the output error and the scale constant `c` with `f̂ ≈ c·f`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boundary::{draw_search_pairs, find_boundary, SearchConfig};
use crate::error::Error;
use crate::extraction::filters::pmr;
use crate::extraction::plan::{downstream_options, slot_pattern, slots, PlanMode, Slot};
use crate::linalg::{dot, norm2, Matrix};
use crate::model::{AffineTuple, Layer, ModelParameters, ZERO_THRESHOLD};
use crate::oracle::ModelOracle;
use crate::sampling::uniform_cube;

/// Victim parameters rescaled the way the attack recovers them: every neuron
/// is divided by the magnitude of its cumulative slope along `anchor`.
/// Returns the rescaled model and the output scale `c`.
pub fn theoretical_params(
    victim: &ModelParameters,
    anchor: usize,
) -> Result<(ModelParameters, f64), Error> {
    let d0 = victim.arch().input_dim();
    if anchor >= d0 {
        return Err(Error::Shape {
            expected: d0,
            found: anchor + 1,
        });
    }
    let mut c = Matrix::identity(d0);
    let mut prev_scale = vec![1.0; d0];
    let mut layers = Vec::with_capacity(victim.layers().len());
    for layer in victim.layers() {
        let cum = layer.weights.mul(&c);
        let scale: Vec<f64> = (0..cum.rows())
            .map(|j| {
                let a = cum[(j, anchor)].abs();
                if a > ZERO_THRESHOLD {
                    Ok(1.0 / a)
                } else {
                    Err(Error::ZeroAffine)
                }
            })
            .collect::<Result<_, _>>()?;
        let mut w = layer.weights.clone();
        for j in 0..w.rows() {
            for (v, row) in w.row_mut(j).iter_mut().enumerate() {
                *row *= scale[j] / prev_scale[v];
            }
        }
        let bias = layer.bias.iter().zip(&scale).map(|(b, s)| b * s).collect();
        layers.push(Layer { weights: w, bias });
        c = cum;
        prev_scale = scale;
    }
    let out = ModelParameters::new(victim.arch().clone(), layers)?;
    Ok((out, prev_scale[0]))
}

/// `1 / |Σ_v w_v⁽ᵏ⁺¹⁾ C⁽ᵏ⁾_{v,anchor}|`, the constant relating the
/// extracted model to the victim.
pub fn closed_form_scale(victim: &ModelParameters, anchor: usize) -> Result<f64, Error> {
    theoretical_params(victim, anchor).map(|(_, c)| c)
}

/// Anchor coordinate used by an extracted model: the first input coordinate
/// on which every layer-1 row has magnitude one.
pub fn infer_anchor(extracted: &ModelParameters) -> Option<usize> {
    let w = &extracted.layers()[0].weights;
    (0..w.cols()).find(|&c| (0..w.rows()).all(|r| (w[(r, c)].abs() - 1.0).abs() < 1e-6))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `permutations[i][j]` is the victim neuron matched to extracted neuron
    /// `j` of hidden layer `i + 1`.
    pub permutations: Vec<Vec<usize>>,
    /// Theoretical parameters in the extracted model's neuron order.
    pub theoretical: ModelParameters,
    pub scale: f64,
    /// Anchor the extracted model was normalized at; `None` when no input
    /// coordinate is unit-magnitude in every layer-1 row, in which case the
    /// per-neuron scales are fitted instead.
    pub anchor: Option<usize>,
    /// Some match was decided between similarities closer than `10⁻⁶`.
    pub ambiguous: bool,
}

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = norm2(a) * norm2(b);
    if n == 0.0 {
        0.0
    } else {
        (dot(a, b) / n).abs()
    }
}

/// Greedy assignment by descending similarity. Ties break on the smaller
/// (extracted, victim) index pair.
fn greedy_match(sim: &[Vec<f64>]) -> (Vec<usize>, bool) {
    let d = sim.len();
    let mut pairs: Vec<(f64, usize, usize)> = (0..d)
        .flat_map(|e| (0..d).map(move |v| (e, v)))
        .map(|(e, v)| (sim[e][v], e, v))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; d];
    let mut used = vec![false; d];
    let mut ambiguous = false;
    for (i, &(s, e, v)) in pairs.iter().enumerate() {
        if perm[e] != usize::MAX || used[v] {
            continue;
        }
        let rival = pairs[i + 1..].iter().find(|&&(_, e2, v2)| {
            (e2 == e && !used[v2] && v2 != v) || (v2 == v && perm[e2] == usize::MAX && e2 != e)
        });
        if rival.is_some_and(|r| s - r.0 < 1e-6) {
            ambiguous = true;
        }
        perm[e] = v;
        used[v] = true;
    }
    (perm, ambiguous)
}

/// Reorders the victim's hidden neurons; `perms[i][j]` is the old index of new neuron `j`.
pub fn permute_neurons(
    victim: &ModelParameters,
    perms: &[Vec<usize>],
) -> Result<ModelParameters, Error> {
    let mut layers: Vec<Layer> = victim.layers().to_vec();
    for (i, perm) in perms.iter().enumerate() {
        // Columns of this layer may already be permuted by the previous step.
        let cur = layers[i].clone();
        layers[i].weights = Matrix::from_rows(
            &perm
                .iter()
                .map(|&p| cur.weights.row(p).to_vec())
                .collect::<Vec<_>>(),
        );
        layers[i].bias = perm.iter().map(|&p| cur.bias[p]).collect();
        let next = layers[i + 1].weights.clone();
        for r in 0..next.rows() {
            for (j, &p) in perm.iter().enumerate() {
                layers[i + 1].weights[(r, j)] = next[(r, p)];
            }
        }
    }
    ModelParameters::new(victim.arch().clone(), layers)
}

/// Matches extracted neurons to victim neurons layer by layer (absolute
/// cosine of cumulative slope rows) and rescales the permuted victim.
pub fn align(victim: &ModelParameters, extracted: &ModelParameters) -> Result<Alignment, Error> {
    if victim.arch() != extracted.arch() {
        return Err(Error::Architecture(
            "victim and extracted architectures differ",
        ));
    }
    let anchor = infer_anchor(extracted);
    let d0 = victim.arch().input_dim();
    let mut perms = Vec::new();
    let mut ambiguous = false;
    let mut cv = Matrix::identity(d0);
    let mut ce = Matrix::identity(d0);
    let k = victim.arch().depth();
    for i in 0..k {
        let nv = victim.layers()[i].weights.mul(&cv);
        let ne = extracted.layers()[i].weights.mul(&ce);
        let sim: Vec<Vec<f64>> = (0..ne.rows())
            .map(|e| {
                (0..nv.rows())
                    .map(|v| abs_cosine(ne.row(e), nv.row(v)))
                    .collect()
            })
            .collect();
        let (perm, amb) = greedy_match(&sim);
        ambiguous |= amb;
        cv = Matrix::from_rows(&perm.iter().map(|&p| nv.row(p).to_vec()).collect::<Vec<_>>());
        ce = ne;
        perms.push(perm);
    }
    let permuted = permute_neurons(victim, &perms)?;
    let (theoretical, scale) = match anchor {
        Some(a) => theoretical_params(&permuted, a)?,
        None => fitted_params(&permuted, extracted)?,
    };
    Ok(Alignment {
        permutations: perms,
        theoretical,
        scale,
        anchor,
        ambiguous,
    })
}

/// Rescales each victim neuron by the positive factor that best maps its
/// cumulative slope onto the extracted one (ratio of norms).
fn fitted_params(
    victim: &ModelParameters,
    extracted: &ModelParameters,
) -> Result<(ModelParameters, f64), Error> {
    let d0 = victim.arch().input_dim();
    let (mut cv, mut ce) = (Matrix::identity(d0), Matrix::identity(d0));
    let mut prev = vec![1.0; d0];
    let mut layers = Vec::with_capacity(victim.layers().len());
    for (lv, le) in victim.layers().iter().zip(extracted.layers()) {
        let nv = lv.weights.mul(&cv);
        let ne = le.weights.mul(&ce);
        let scale: Vec<f64> = (0..nv.rows())
            .map(|j| {
                let n = norm2(nv.row(j));
                if n > ZERO_THRESHOLD {
                    Ok(norm2(ne.row(j)) / n)
                } else {
                    Err(Error::ZeroAffine)
                }
            })
            .collect::<Result<_, _>>()?;
        let mut w = lv.weights.clone();
        for j in 0..w.rows() {
            for (v, x) in w.row_mut(j).iter_mut().enumerate() {
                *x *= scale[j] / prev[v];
            }
        }
        layers.push(Layer {
            weights: w,
            bias: lv.bias.iter().zip(&scale).map(|(b, s)| b * s).collect(),
        });
        cv = nv;
        ce = ne;
        prev = scale;
    }
    Ok((
        ModelParameters::new(victim.arch().clone(), layers)?,
        prev[0],
    ))
}

/// `max |θ̃ − θ̂|` over all weights and biases.
pub fn max_param_error(a: &ModelParameters, b: &ModelParameters) -> f64 {
    a.layers()
        .iter()
        .zip(b.layers())
        .flat_map(|(x, y)| {
            let w = x.weights.as_slice().iter().zip(y.weights.as_slice());
            let b = x.bias.iter().zip(&y.bias);
            w.chain(b).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Worst-case `|f̂(x) − f̃(x)|` over `‖x‖∞ ≤ radius` by interval propagation,
/// where `f̃` is the theoretical model (equal to `c·f`).
pub fn error_bound(theoretical: &ModelParameters, extracted: &ModelParameters, radius: f64) -> f64 {
    let d0 = theoretical.arch().input_dim();
    let mut mag = vec![radius.abs(); d0];
    let mut err = vec![0.0; d0];
    for (t, e) in theoretical.layers().iter().zip(extracted.layers()) {
        let rows = t.weights.rows();
        let mut next_mag = Vec::with_capacity(rows);
        let mut next_err = Vec::with_capacity(rows);
        for r in 0..rows {
            let (tw, ew) = (t.weights.row(r), e.weights.row(r));
            let mut m = t.bias[r].abs();
            let mut d = (t.bias[r] - e.bias[r]).abs();
            for v in 0..tw.len() {
                m += tw[v].abs() * mag[v];
                d += tw[v].abs() * err[v] + (tw[v] - ew[v]).abs() * (mag[v] + err[v]);
            }
            next_mag.push(m);
            next_err.push(d);
        }
        mag = next_mag;
        err = next_err;
    }
    err[0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEstimate {
    /// Median of `f̂(x) / f(x)`.
    pub c: f64,
    /// `max |ratio − c| / |c|` over the used samples.
    pub spread: f64,
    /// Median absolute deviation over `|c|`.
    pub mad: f64,
    pub used: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Magnitude below which victim outputs are ignored by [`estimate_scale`].
pub const SCALE_CUTOFF: f64 = 1e-6;

pub fn estimate_scale(
    victim: &ModelParameters,
    extracted: &ModelParameters,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<ScaleEstimate, Error> {
    let d0 = victim.arch().input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = uniform_cube(&mut rng, d0, radius);
        let f = victim.output(&x)?;
        if f.abs() > SCALE_CUTOFF {
            ratios.push(extracted.output(&x)? / f);
        }
    }
    if ratios.is_empty() {
        return Err(Error::IndeterminateScale);
    }
    let used = ratios.len();
    let c = median(&mut ratios);
    let spread = ratios.iter().map(|r| (r - c).abs()).fold(0.0, f64::max) / c.abs();
    let mut dev: Vec<f64> = ratios.iter().map(|r| (r - c).abs()).collect();
    let mad = median(&mut dev) / c.abs();
    Ok(ScaleEstimate {
        c,
        spread,
        mad,
        used,
    })
}

/// Largest `|f̂(x) − c·f(x)|` over uniform samples.
pub fn sampled_deviation(
    victim: &ModelParameters,
    extracted: &ModelParameters,
    c: f64,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = uniform_cube(&mut rng, victim.arch().input_dim(), radius);
        worst = worst.max((extracted.output(&x)? - c * victim.output(&x)?).abs());
    }
    Ok(worst)
}

/// Fraction of samples whose activation patterns agree after alignment.
pub fn pattern_agreement(
    victim: &ModelParameters,
    extracted: &ModelParameters,
    alignment: &Alignment,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, Error> {
    let permuted = permute_neurons(victim, &alignment.permutations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut same = 0usize;
    for _ in 0..samples {
        let x = uniform_cube(&mut rng, victim.arch().input_dim(), radius);
        if permuted.forward(&x)?.pattern == extracted.forward(&x)?.pattern {
            same += 1;
        }
    }
    Ok(if samples == 0 {
        1.0
    } else {
        same as f64 / samples as f64
    })
}

/// For every plan slot, how many of `lines` ground-truth boundary searches end
/// in a region the slot accepts. A victim whose count is zero for some slot
/// cannot be extracted with that plan mode.
pub fn plan_coverage(
    victim: &ModelParameters,
    mode: PlanMode,
    lines: usize,
    cfg: &SearchConfig,
) -> Result<Vec<usize>, Error> {
    let arch = victim.arch();
    let oracle = ModelOracle::new(victim);
    let slot_list = slots(arch);
    let accepted: Vec<Vec<_>> = slot_list
        .iter()
        .map(|&s| {
            let n = if s.layer > arch.depth() {
                1
            } else {
                downstream_options(arch, s.layer, mode)?
            };
            Ok((0..n).map(|o| slot_pattern(arch, s, o)).collect())
        })
        .collect::<Result<_, Error>>()?;
    let mut counts = vec![0; slot_list.len()];
    for (start, dir) in draw_search_pairs(lines, arch.input_dim(), cfg) {
        let p = match find_boundary(&oracle, &start, &dir, cfg) {
            Ok(p) => p,
            Err(Error::BoundaryNotFound) => continue,
            Err(e) => return Err(e),
        };
        let pattern = victim.forward(&p.point)?.pattern;
        for (c, acc) in counts.iter_mut().zip(&accepted) {
            if acc.contains(&pattern) {
                *c += 1;
            }
        }
    }
    Ok(counts)
}

/// Exact tuples for every strict-plan slot, anchored at `anchor`, straight
/// from the victim's parameters. Useful as noise-free attack input.
pub fn slot_tuples(victim: &ModelParameters, anchor: usize) -> Result<Vec<AffineTuple>, Error> {
    let arch = victim.arch();
    slots(arch)
        .into_iter()
        .map(|s| {
            let t = victim.affine_for_pattern(&slot_pattern(arch, s, 0))?;
            let a = t.gamma.get(anchor).copied().unwrap_or(0.0).abs();
            if !(a > ZERO_THRESHOLD) {
                return Err(Error::ZeroAffine);
            }
            Ok(AffineTuple {
                gamma: t.gamma.iter().map(|g| g / a).collect(),
                beta: t.beta / a,
            })
        })
        .collect()
}

/// The sign each hidden layer's guess must take for the strict plan, or
/// `None` when neurons of one layer disagree (no single guess is right).
pub fn true_layer_signs(
    victim: &ModelParameters,
    anchor: usize,
) -> Result<Option<Vec<f64>>, Error> {
    let arch = victim.arch();
    let mut c = Matrix::identity(arch.input_dim());
    let mut out = Vec::with_capacity(arch.depth());
    for (i, layer) in victim.layers()[..arch.depth()].iter().enumerate() {
        let cum = layer.weights.mul(&c);
        let mut sign = 0.0;
        for j in 0..arch.hidden()[i] {
            let t = victim.affine_for_pattern(&slot_pattern(
                arch,
                Slot {
                    layer: i + 1,
                    neuron: j,
                },
                0,
            ))?;
            let s = (t.gamma[anchor] / cum[(j, anchor)]).signum();
            if sign != 0.0 && s != sign {
                return Ok(None);
            }
            sign = s;
        }
        out.push(sign);
        c = cum;
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub domain_radius: f64,
    pub pmr_samples: usize,
    pub scale_samples: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            domain_radius: 1.0,
            pmr_samples: 1_000_000,
            scale_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `ε` of `(ε, 0)`-functional equivalence.
    pub epsilon_bound: f64,
    pub max_param_error: f64,
    pub scale: ScaleEstimate,
    /// Scale predicted from the victim's parameters.
    pub scale_closed_form: f64,
    pub pmr: f64,
    pub ambiguous_alignment: bool,
    pub query_count: Option<u64>,
}

pub fn verify(
    victim: &ModelParameters,
    extracted: &ModelParameters,
    cfg: &VerifyConfig,
) -> Result<EquivalenceReport, Error> {
    let al = align(victim, extracted)?;
    Ok(EquivalenceReport {
        epsilon_bound: error_bound(&al.theoretical, extracted, cfg.domain_radius),
        max_param_error: max_param_error(&al.theoretical, extracted),
        scale: estimate_scale(
            victim,
            extracted,
            cfg.scale_samples,
            cfg.domain_radius,
            cfg.seed,
        )?,
        scale_closed_form: al.scale,
        pmr: pmr(
            victim,
            extracted,
            cfg.pmr_samples,
            cfg.domain_radius,
            cfg.seed ^ 1,
        )?,
        ambiguous_alignment: al.ambiguous,
        query_count: None,
    })
}
