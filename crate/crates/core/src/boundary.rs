//! Decision-boundary search under hard-label access.
//!
//! From a start point `x` and direction `Δ`, strides `±s, ±2s, ±4s, …` are
//! probed until the label flips, then the bracket `[s_slow, s_fast]` is
//! bisected while keeping `label(x + s_slow Δ) == label(x)` and
//! `label(x + s_fast Δ) != label(x)`.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::oracle::Oracle;
use crate::sampling::{uniform_cube, unit_sphere};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Bisection stops once `|s_slow − s_fast| < epsilon`.
    pub epsilon: f64,
    pub initial_stride: f64,
    pub max_expansions: u32,
    /// Starts are drawn from `[-R, R]^{d_0}`.
    pub domain_radius: f64,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-12,
            initial_stride: 1.0 / 64.0,
            max_expansions: 40,
            domain_radius: 1.0,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    /// Defaults scaled to a domain radius and precision.
    pub fn with_precision(epsilon: f64, domain_radius: f64, rng_seed: u64) -> Self {
        Self {
            epsilon,
            initial_stride: domain_radius / 64.0,
            max_expansions: 40,
            domain_radius,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive"));
        }
        if !(self.initial_stride > 0.0) {
            return Err(Error::InvalidConfig("initial stride must be positive"));
        }
        if self.max_expansions < 1 {
            return Err(Error::InvalidConfig("max_expansions must be at least 1"));
        }
        if !(self.domain_radius > 0.0) {
            return Err(Error::InvalidConfig("domain radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    /// `start + s_slow · direction`.
    pub point: Vec<f64>,
    pub start: Vec<f64>,
    pub direction: Vec<f64>,
    pub s_slow: f64,
    pub s_fast: f64,
    /// Label of `start`, shared by `point`.
    pub label_inside: bool,
}

impl BoundaryPoint {
    pub fn at(&self, s: f64) -> Vec<f64> {
        self.start
            .iter()
            .zip(&self.direction)
            .map(|(x, d)| x + s * d)
            .collect()
    }

    /// The bracket end whose label is 0.
    pub fn zero_side(&self) -> Vec<f64> {
        if self.label_inside {
            self.at(self.s_fast)
        } else {
            self.point.clone()
        }
    }

    /// Bracket midpoint, the best available estimate of the crossing.
    pub fn midpoint(&self) -> Vec<f64> {
        self.at(0.5 * (self.s_slow + self.s_fast))
    }

    pub fn width(&self) -> f64 {
        (self.s_fast - self.s_slow).abs()
    }

    /// Re-queries the bracket (3 oracle calls) and checks its label conditions.
    pub fn verify<O: Oracle + ?Sized>(&self, oracle: &O) -> Result<bool, Error> {
        let l0 = oracle.label(&self.start)?;
        let ls = oracle.label(&self.point)?;
        let lf = oracle.label(&self.at(self.s_fast))?;
        Ok(l0 == self.label_inside && ls == l0 && lf != l0)
    }
}

/// Bisects `[slow, fast]` along `start + s·direction` until narrower than `epsilon`.
pub(crate) fn bisect<O: Oracle + ?Sized>(
    oracle: &O,
    start: &[f64],
    direction: &[f64],
    base: bool,
    mut slow: f64,
    mut fast: f64,
    epsilon: f64,
) -> Result<(f64, f64), Error> {
    let mut probe = start.to_vec();
    while (fast - slow).abs() >= epsilon {
        let mid = 0.5 * (slow + fast);
        if mid == slow || mid == fast {
            break;
        }
        for ((p, x), d) in probe.iter_mut().zip(start).zip(direction) {
            *p = x + mid * d;
        }
        if oracle.label(&probe)? == base {
            slow = mid;
        } else {
            fast = mid;
        }
    }
    Ok((slow, fast))
}

pub fn find_boundary<O: Oracle + ?Sized>(
    oracle: &O,
    start: &[f64],
    direction: &[f64],
    cfg: &SearchConfig,
) -> Result<BoundaryPoint, Error> {
    cfg.validate()?;
    if start.len() != oracle.input_dim() {
        return Err(Error::Shape {
            expected: oracle.input_dim(),
            found: start.len(),
        });
    }
    if direction.len() != start.len() {
        return Err(Error::Shape {
            expected: start.len(),
            found: direction.len(),
        });
    }
    if direction.iter().all(|&d| d == 0.0) {
        return Err(Error::InvalidConfig("direction must be non-zero"));
    }
    let base = oracle.label(start)?;
    let mut probe = start.to_vec();
    let mut last_same = [0.0f64; 2];
    let mut stride = cfg.initial_stride;
    let mut bracket = None;
    'expand: for _ in 0..=cfg.max_expansions {
        for (side, sign) in [1.0f64, -1.0].into_iter().enumerate() {
            let s = sign * stride;
            for ((p, x), d) in probe.iter_mut().zip(start).zip(direction) {
                *p = x + s * d;
            }
            if oracle.label(&probe)? != base {
                bracket = Some((last_same[side], s));
                break 'expand;
            }
            last_same[side] = s;
        }
        stride *= 2.0;
    }
    let (slow, fast) = bracket.ok_or(Error::BoundaryNotFound)?;
    let (s_slow, s_fast) = bisect(oracle, start, direction, base, slow, fast, cfg.epsilon)?;
    let point = start
        .iter()
        .zip(direction)
        .map(|(x, d)| x + s_slow * d)
        .collect();
    Ok(BoundaryPoint {
        point,
        start: start.to_vec(),
        direction: direction.to_vec(),
        s_slow,
        s_fast,
        label_inside: base,
    })
}

/// Deterministic stream of `(start, direction)` pairs for a seed.
pub fn draw_search_pairs(
    count: usize,
    dim: usize,
    cfg: &SearchConfig,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    (0..count)
        .map(|_| {
            let start = uniform_cube(&mut rng, dim, cfg.domain_radius);
            let dir = unit_sphere(&mut rng, dim);
            (start, dir)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryCollection {
    pub points: Vec<BoundaryPoint>,
    /// Searches that found no label flip.
    pub failures: usize,
}

pub fn collect_boundary_points<O: Oracle + ?Sized>(
    oracle: &O,
    count: usize,
    cfg: &SearchConfig,
) -> Result<BoundaryCollection, Error> {
    if count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1"));
    }
    cfg.validate()?;
    let mut out = BoundaryCollection::default();
    for (start, dir) in draw_search_pairs(count, oracle.input_dim(), cfg) {
        match find_boundary(oracle, &start, &dir, cfg) {
            Ok(p) => out.points.push(p),
            Err(Error::BoundaryNotFound) => out.failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{Architecture, Layer, ModelParameters};
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

    fn query_bound(cfg: &SearchConfig, bracket: f64) -> u64 {
        let bisect = libm::ceil(libm::log2(bracket / cfg.epsilon)).max(0.0) as u64;
        2 * (cfg.max_expansions as u64 + 1) + bisect + 2
    }

    #[test]
    fn root_of_affine_function() {
        let m = affine(&[1.0], -5.0);
        let o = ModelOracle::new(&m);
        let cfg = SearchConfig {
            epsilon: 1e-12,
            ..SearchConfig::default()
        };
        let p = find_boundary(&o, &[0.0], &[1.0], &cfg).unwrap();
        assert!((p.point[0] - 5.0).abs() <= 1e-12);
        assert!(!p.label_inside);
        assert!(p.width() < 1e-12);
        assert!(p.verify(&o).unwrap());
    }

    #[test]
    fn negative_direction_found() {
        let m = affine(&[1.0], 3.0);
        let o = ModelOracle::new(&m);
        let p = find_boundary(&o, &[0.0], &[1.0], &SearchConfig::default()).unwrap();
        assert!((p.point[0] + 3.0).abs() <= 1e-12);
        assert!(p.s_slow < 0.0);
        assert!(p.label_inside);
    }

    #[test]
    fn constant_function_not_found() {
        let m = affine(&[0.0, 0.0], 1.0);
        let o = ModelOracle::new(&m);
        let cfg = SearchConfig {
            max_expansions: 10,
            ..SearchConfig::default()
        };
        assert_eq!(
            find_boundary(&o, &[0.0, 0.0], &[1.0, 0.0], &cfg),
            Err(Error::BoundaryNotFound)
        );
        assert_eq!(o.query_count(), 1 + 2 * 11);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = affine(&[1.0, 1.0], 0.0);
        let o = ModelOracle::new(&m);
        let cfg = SearchConfig::default();
        assert!(find_boundary(&o, &[0.0, 0.0], &[0.0, 0.0], &cfg).is_err());
        assert!(find_boundary(&o, &[0.0], &[1.0], &cfg).is_err());
        let bad = SearchConfig {
            epsilon: 0.0,
            ..cfg
        };
        assert!(find_boundary(&o, &[0.0, 0.0], &[1.0, 0.0], &bad).is_err());
    }

    #[test]
    fn deep_victim_point_is_close_and_budget_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arch = Architecture::new(vec![6, 4, 1]).unwrap();
        let cfg = SearchConfig {
            epsilon: 1e-14,
            ..SearchConfig::default()
        };
        let mut found = 0;
        for _ in 0..40 {
            let m = ModelParameters::random(arch.clone(), &mut rng, -1.0, 1.0);
            let o = ModelOracle::new(&m);
            let start = uniform_cube(&mut rng, 6, 1.0);
            let dir = unit_sphere(&mut rng, 6);
            let Ok(p) = find_boundary(&o, &start, &dir, &cfg) else {
                continue;
            };
            found += 1;
            let used = o.query_count();
            let e = m.forward(&p.point).unwrap();
            let g = m.affine_for_pattern(&e.pattern).unwrap();
            let slope: f64 = g.gamma.iter().map(|x| x.abs()).sum();
            assert!(
                e.value.abs() <= slope * cfg.epsilon * 1.0 + 1e-15,
                "f={} bound={}",
                e.value,
                slope * cfg.epsilon
            );
            // Expansion-stage bracket width is at most the last stride.
            let bracket = cfg.initial_stride * 2f64.powi(cfg.max_expansions as i32);
            assert!(used <= query_bound(&cfg, bracket));
            assert!(p.verify(&o).unwrap());
        }
        assert!(found > 10);
    }

    #[test]
    fn smaller_epsilon_tightens_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ModelParameters::random(
            Architecture::new(vec![4, 3, 1]).unwrap(),
            &mut rng,
            -1.0,
            1.0,
        );
        let o = ModelOracle::new(&m);
        let pairs = draw_search_pairs(30, 4, &SearchConfig::default());
        for (s, d) in pairs {
            let mut last = f64::INFINITY;
            for eps in [1e-6, 1e-9, 1e-12] {
                let cfg = SearchConfig {
                    epsilon: eps,
                    ..SearchConfig::default()
                };
                let Ok(p) = find_boundary(&o, &s, &d, &cfg) else {
                    break;
                };
                let v = m.output(&p.point).unwrap().abs();
                let g = m
                    .affine_for_pattern(&m.forward(&p.point).unwrap().pattern)
                    .unwrap();
                let bound = g.gamma.iter().map(|x| x.abs()).sum::<f64>() * eps;
                assert!(v <= bound + 1e-16);
                assert!(bound <= last);
                last = bound;
            }
        }
    }

    #[test]
    fn collection_is_deterministic_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ModelParameters::random(
            Architecture::new(vec![5, 2, 1]).unwrap(),
            &mut rng,
            -1.0,
            1.0,
        );
        let cfg = SearchConfig {
            rng_seed: 77,
            ..SearchConfig::default()
        };
        let o1 = ModelOracle::new(&m);
        let a = collect_boundary_points(&o1, 32, &cfg).unwrap();
        let o2 = ModelOracle::new(&m);
        let b = collect_boundary_points(&o2, 32, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len() + a.failures, 32);
        assert!(a.points.len() <= 32);
        for p in &a.points {
            assert!(p.verify(&o1).unwrap());
        }
    }

    #[test]
    fn unreachable_boundary_gives_empty_collection() {
        let m = affine(&[1e-3, -1e-3], 1e9);
        let o = ModelOracle::new(&m);
        let cfg = SearchConfig {
            max_expansions: 12,
            ..SearchConfig::default()
        };
        let c = collect_boundary_points(&o, 16, &cfg).unwrap();
        assert!(c.points.is_empty());
        assert_eq!(c.failures, 16);
    }
}
