//! Fully connected ReLU networks with a scalar output, evaluated in f64.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::Error;
use crate::linalg::{dot, Matrix};

/// Coefficients at or below this magnitude are treated as zero when picking
/// the normalization anchor of an affine tuple.
pub const ZERO_THRESHOLD: f64 = 1e-10;

/// Layer widths `[d_0, d_1, …, d_k, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    dims: Vec<usize>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self, Error> {
        if dims.len() < 2 {
            return Err(Error::Architecture(
                "need at least an input and an output layer",
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Architecture("layer widths must be positive"));
        }
        let out = *dims.last().unwrap();
        if out != 1 {
            return Err(Error::UnsupportedOutput { width: out });
        }
        Ok(Self { dims })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of hidden layers `k`.
    #[inline]
    pub fn depth(&self) -> usize {
        self.dims.len() - 2
    }

    /// Widths of the hidden layers only.
    #[inline]
    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    /// Total hidden neuron count `n`.
    pub fn neurons(&self) -> usize {
        self.hidden().iter().sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Network parameters. Immutable once built; attack state lives elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    arch: Architecture,
    layers: Vec<Layer>,
}

impl ModelParameters {
    pub fn new(arch: Architecture, layers: Vec<Layer>) -> Result<Self, Error> {
        let dims = arch.dims();
        if layers.len() != dims.len() - 1 {
            return Err(Error::Shape {
                expected: dims.len() - 1,
                found: layers.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            let (inp, out) = (dims[i], dims[i + 1]);
            if layer.weights.rows() != out {
                return Err(Error::Shape {
                    expected: out,
                    found: layer.weights.rows(),
                });
            }
            if layer.weights.cols() != inp {
                return Err(Error::Shape {
                    expected: inp,
                    found: layer.weights.cols(),
                });
            }
            if layer.bias.len() != out {
                return Err(Error::Shape {
                    expected: out,
                    found: layer.bias.len(),
                });
            }
            if !layer
                .weights
                .as_slice()
                .iter()
                .chain(&layer.bias)
                .all(|x| x.is_finite())
            {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { arch, layers })
    }

    /// Draws every weight and bias uniformly from `[low, high)`.
    pub fn random<R: Rng + ?Sized>(arch: Architecture, rng: &mut R, low: f64, high: f64) -> Self {
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::from_row_major(
                    w[1],
                    w[0],
                    (0..w[0] * w[1])
                        .map(|_| rng.random_range(low..high))
                        .collect(),
                ),
                bias: (0..w[1]).map(|_| rng.random_range(low..high)).collect(),
            })
            .collect();
        Self { arch, layers }
    }

    #[inline]
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `i` in 1-based numbering (`1..=k+1`).
    #[inline]
    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i - 1]
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    fn check_input(&self, x: &[f64]) -> Result<(), Error> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Shape {
                expected: self.arch.input_dim(),
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Raw output `f(x)` without recording the activation pattern.
    pub fn output(&self, x: &[f64]) -> Result<f64, Error> {
        self.check_input(x)?;
        Ok(self.eval(x, None))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Evaluation, Error> {
        self.check_input(x)?;
        let mut pattern = Vec::with_capacity(self.arch.depth());
        let value = self.eval(x, Some(&mut pattern));
        Ok(Evaluation {
            value,
            pattern: ActivationPattern { layers: pattern },
        })
    }

    fn eval(&self, x: &[f64], mut pattern: Option<&mut Vec<Vec<bool>>>) -> f64 {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next: Vec<f64> = (0..layer.weights.rows())
                .map(|r| dot(layer.weights.row(r), &h) + layer.bias[r])
                .collect();
            if i < last {
                if let Some(p) = pattern.as_deref_mut() {
                    p.push(next.iter().map(|&v| v > 0.0).collect());
                }
                for v in &mut next {
                    // Strictly positive is active; zero maps to inactive.
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
            }
            h = next;
        }
        h[0]
    }

    /// The local affine map `(Γ_P, B_P)` of the region with activation pattern `pattern`.
    pub fn affine_for_pattern(&self, pattern: &ActivationPattern) -> Result<AffineTuple, Error> {
        pattern.check(&self.arch)?;
        let d0 = self.arch.input_dim();
        // Running map x ↦ M x + c for the current layer's output.
        let mut m = Matrix::identity(d0);
        let mut c = vec![0.0; d0];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next_m = layer.weights.mul(&m);
            let mut next_c = layer.weights.mul_vec(&c);
            for (v, b) in next_c.iter_mut().zip(&layer.bias) {
                *v += b;
            }
            if let Some(bits) = pattern.layers.get(i) {
                for (r, &on) in bits.iter().enumerate() {
                    if !on {
                        next_m.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                        next_c[r] = 0.0;
                    }
                }
            }
            m = next_m;
            c = next_c;
        }
        Ok(AffineTuple {
            gamma: m.row(0).to_vec(),
            beta: c[0],
        })
    }

    /// Normalized signature over the given patterns.
    pub fn model_signature<'a, I>(&self, patterns: I) -> Result<Vec<AffineTuple>, Error>
    where
        I: IntoIterator<Item = &'a ActivationPattern>,
    {
        patterns
            .into_iter()
            .map(|p| {
                self.affine_for_pattern(p)
                    .map(|t| t.normalized(ZERO_THRESHOLD).0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub pattern: ActivationPattern,
}

/// Per-hidden-layer neuron states; `true` means active.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn all_active(arch: &Architecture) -> Self {
        Self {
            layers: arch.hidden().iter().map(|&d| vec![true; d]).collect(),
        }
    }

    /// Builds a pattern from one integer per hidden layer, bit `j-1`
    /// standing for neuron `j` (so `2^{j-1}` activates only neuron `j`).
    pub fn from_masks(arch: &Architecture, masks: &[u64]) -> Result<Self, Error> {
        if masks.len() != arch.depth() {
            return Err(Error::Shape {
                expected: arch.depth(),
                found: masks.len(),
            });
        }
        let layers = arch
            .hidden()
            .iter()
            .zip(masks)
            .map(|(&d, &m)| (0..d).map(|j| j < 64 && (m >> j) & 1 == 1).collect())
            .collect();
        Ok(Self { layers })
    }

    /// Integer form of each layer; widths above 64 are truncated.
    pub fn masks(&self) -> Vec<u64> {
        self.layers
            .iter()
            .map(|l| {
                l.iter()
                    .take(64)
                    .enumerate()
                    .fold(0u64, |m, (j, &b)| m | ((b as u64) << j))
            })
            .collect()
    }

    pub fn check(&self, arch: &Architecture) -> Result<(), Error> {
        if self.layers.len() != arch.depth() {
            return Err(Error::Shape {
                expected: arch.depth(),
                found: self.layers.len(),
            });
        }
        for (l, &d) in self.layers.iter().zip(arch.hidden()) {
            if l.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    found: l.len(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ActivationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            // Highest neuron first, matching the integer notation.
            for &b in l.iter().rev() {
                f.write_str(if b { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

/// A local affine map `x ↦ γ·x + β`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTuple {
    pub gamma: Vec<f64>,
    pub beta: f64,
}

impl AffineTuple {
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.gamma, x) + self.beta
    }

    /// Index of the first coefficient with magnitude above `zero`.
    pub fn anchor(&self, zero: f64) -> Option<usize> {
        self.gamma.iter().position(|g| g.abs() > zero)
    }

    /// Divides by the magnitude of the first significant coefficient.
    /// Tuples with no significant coefficient are returned unchanged.
    pub fn normalized(&self, zero: f64) -> (AffineTuple, Option<usize>) {
        match self.anchor(zero) {
            Some(a) => {
                let s = self.gamma[a].abs();
                (
                    AffineTuple {
                        gamma: self.gamma.iter().map(|g| g / s).collect(),
                        beta: self.beta / s,
                    },
                    Some(a),
                )
            }
            None => (self.clone(), None),
        }
    }

    /// `γ ‖ β` as one vector, the form compared under the thresholded rule.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.gamma.clone();
        v.push(self.beta);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch(d: &[usize]) -> Architecture {
        Architecture::new(d.to_vec()).unwrap()
    }

    fn model(d: &[usize], layers: &[(&[&[f64]], &[f64])]) -> ModelParameters {
        ModelParameters::new(
            arch(d),
            layers
                .iter()
                .map(|(w, b)| Layer {
                    weights: Matrix::from_rows(w),
                    bias: b.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn architecture_invariants() {
        let a = arch(&[512, 2, 1]);
        assert_eq!(a.depth(), 1);
        assert_eq!(a.neurons(), 2);
        assert_eq!(a.parameter_count(), 1029);
        assert_eq!(arch(&[2, 1]).parameter_count(), 3);
        assert_eq!(arch(&[32, 2, 2, 1]).parameter_count(), 75);
        assert!(matches!(
            Architecture::new(vec![3, 2]),
            Err(Error::UnsupportedOutput { width: 2 })
        ));
        assert!(Architecture::new(vec![3]).is_err());
        assert!(Architecture::new(vec![3, 0, 1]).is_err());
        assert_eq!(alloc::format!("{a}"), "512-2-1");
    }

    #[test]
    fn forward_identity_layer() {
        let m = model(
            &[2, 2, 1],
            &[
                (&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]),
                (&[&[1.0, 1.0]], &[-1.0]),
            ],
        );
        let e = m.forward(&[2.0, -3.0]).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.pattern.masks(), vec![0b01]);
    }

    #[test]
    fn forward_zero_deep() {
        let m = model(&[2, 1], &[(&[&[2.0, -4.0]], &[6.0])]);
        let e = m.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(e.value, 6.0);
        assert!(e.pattern.layers.is_empty());
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = model(&[2, 1], &[(&[&[2.0, -4.0]], &[6.0])]);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::Shape {
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(m.forward(&[1.0, f64::NAN]), Err(Error::NonFinite)));
    }

    #[test]
    fn zero_preactivation_is_inactive() {
        let m = model(&[1, 1, 1], &[(&[&[1.0]], &[0.0]), (&[&[1.0]], &[0.0])]);
        assert_eq!(m.forward(&[0.0]).unwrap().pattern.masks(), vec![0]);
    }

    #[test]
    fn affine_for_pattern_examples() {
        let m = model(
            &[2, 2, 1],
            &[
                (&[&[1.0, 2.0], &[3.0, -1.0]], &[0.0, 0.0]),
                (&[&[2.0, 1.0]], &[0.0]),
            ],
        );
        let full = ActivationPattern::from_masks(m.arch(), &[0b11]).unwrap();
        assert_eq!(
            m.affine_for_pattern(&full).unwrap(),
            AffineTuple {
                gamma: vec![5.0, 3.0],
                beta: 0.0
            }
        );
        let dead = ActivationPattern::from_masks(m.arch(), &[0b00]).unwrap();
        assert_eq!(
            m.affine_for_pattern(&dead).unwrap(),
            AffineTuple {
                gamma: vec![0.0, 0.0],
                beta: 0.0
            }
        );
        let bad = ActivationPattern {
            layers: vec![vec![true]],
        };
        assert!(m.affine_for_pattern(&bad).is_err());
    }

    /// Explicit product `A^{(k+1)} I_P^{(k)} A^{(k)} ⋯ I_P^{(1)} A^{(1)}`, built
    /// by materializing the diagonal 0-1 matrices.
    fn gamma_by_diagonal_products(m: &ModelParameters, p: &ActivationPattern) -> Vec<f64> {
        let mut acc = Matrix::identity(m.arch().input_dim());
        for (i, layer) in m.layers().iter().enumerate() {
            acc = layer.weights.mul(&acc);
            if let Some(bits) = p.layers.get(i) {
                let mut diag = Matrix::zeros(bits.len(), bits.len());
                for (j, &b) in bits.iter().enumerate() {
                    diag[(j, j)] = if b { 1.0 } else { 0.0 };
                }
                acc = diag.mul(&acc);
            }
        }
        acc.row(0).to_vec()
    }

    #[test]
    fn forward_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [&[3usize, 2, 1][..], &[4, 3, 2, 1], &[5, 4, 1]] {
            let m = ModelParameters::random(arch(d), &mut rng, -1.0, 1.0);
            for _ in 0..50 {
                let x: Vec<f64> = (0..d[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
                let e = m.forward(&x).unwrap();
                let gamma = gamma_by_diagonal_products(&m, &e.pattern);
                let t = m.affine_for_pattern(&e.pattern).unwrap();
                for (a, b) in gamma.iter().zip(&t.gamma) {
                    assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
                }
                let v = t.eval(&x);
                assert!((v - e.value).abs() <= (1.0 + e.value.abs()) * 2f64.powi(-40));
            }
        }
    }

    #[test]
    fn signature_normalization() {
        let m = model(&[2, 1], &[(&[&[2.0, -4.0]], &[6.0])]);
        let sig = m
            .model_signature(&[ActivationPattern { layers: vec![] }])
            .unwrap();
        assert_eq!(
            sig,
            vec![AffineTuple {
                gamma: vec![1.0, -2.0],
                beta: 3.0
            }]
        );

        let q1 = AffineTuple {
            gamma: vec![0.0, 0.0],
            beta: 1.0,
        };
        assert_eq!(q1.normalized(ZERO_THRESHOLD), (q1.clone(), None));

        let t = AffineTuple {
            gamma: vec![-3.0, 6.0],
            beta: 9.0,
        };
        let (n, a) = t.normalized(ZERO_THRESHOLD);
        assert_eq!(
            n,
            AffineTuple {
                gamma: vec![-1.0, 2.0],
                beta: 3.0
            }
        );
        assert_eq!(a, Some(0));
        assert_eq!(n.normalized(ZERO_THRESHOLD).0, n);
    }

    #[test]
    fn pattern_masks_round_trip() {
        let a = arch(&[3, 4, 2, 1]);
        let p = ActivationPattern::from_masks(&a, &[0b1010, 0b01]).unwrap();
        assert_eq!(p.masks(), vec![0b1010, 0b01]);
        assert_eq!(alloc::format!("{p}"), "1010|01");
        assert!(ActivationPattern::from_masks(&a, &[1]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalization_idempotent(g in proptest::collection::vec(-10f64..10.0, 1..8), b in -10f64..10.0) {
            let t = AffineTuple { gamma: g, beta: b };
            let (n, a) = t.normalized(ZERO_THRESHOLD);
            if let Some(a) = a {
                proptest::prop_assert!((n.gamma[a].abs() - 1.0).abs() < 1e-15);
            }
            let (nn, _) = n.normalized(ZERO_THRESHOLD);
            proptest::prop_assert_eq!(nn, n);
        }
    }
}
