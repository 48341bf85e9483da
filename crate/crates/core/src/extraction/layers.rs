//! Layer-by-layer weight recovery and the joint bias solve.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{dot, solve, LinearSystem, Matrix};
use crate::model::{ActivationPattern, ZERO_THRESHOLD};

/// First coordinate that is significant in every vector, if any.
pub fn common_anchor<G: AsRef<[f64]>>(gammas: &[G]) -> Option<usize> {
    let d = gammas.first()?.as_ref().len();
    (0..d).find(|&c| gammas.iter().all(|g| g.as_ref()[c].abs() > ZERO_THRESHOLD))
}

/// Rescales `gamma` so that `|gamma[coord]| = 1`.
pub fn reanchor(gamma: &[f64], coord: usize) -> Option<Vec<f64>> {
    let a = gamma.get(coord)?.abs();
    if !(a > ZERO_THRESHOLD) {
        return None;
    }
    Some(gamma.iter().map(|g| g / a).collect())
}

/// Layer-1 rows are the guessed sign times the anchored tuple slopes.
pub fn recover_layer1<G: AsRef<[f64]>>(gammas: &[G], sign: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = gammas
        .iter()
        .map(|g| g.as_ref().iter().map(|v| sign * v).collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Rows of a deeper layer: each solves `w · Ĉ = sign · γ̂` in the least-squares
/// sense, where `Ĉ` is the product of the already recovered layers.
/// Returns the matrix and the largest residual.
pub fn recover_layer_weights<G: AsRef<[f64]>>(
    c_prev: &Matrix,
    gammas: &[G],
    sign: f64,
) -> Result<(Matrix, f64), Error> {
    let coeffs = c_prev.transpose();
    let mut rows = Vec::with_capacity(gammas.len());
    let mut worst = 0.0f64;
    for g in gammas {
        let rhs: Vec<f64> = g.as_ref().iter().map(|v| sign * v).collect();
        let sol = solve(&LinearSystem::new(coeffs.clone(), rhs)?)?;
        worst = worst.max(sol.residual_norm);
        rows.push(sol.solution);
    }
    Ok((Matrix::from_rows(&rows), worst))
}

/// Recovered weights so far and the cumulative product `Ĉ = Â⁽ⁱ⁻¹⁾ ⋯ Â⁽¹⁾`.
#[derive(Debug, Clone)]
pub struct ExtractionState {
    weights: Vec<Matrix>,
    c: Matrix,
    max_residual: f64,
}

impl ExtractionState {
    pub fn new(input_dim: usize) -> Self {
        Self {
            weights: Vec::new(),
            c: Matrix::identity(input_dim),
            max_residual: 0.0,
        }
    }

    pub fn cumulative(&self) -> &Matrix {
        &self.c
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Recovers the next layer from its anchored tuples and sign guess.
    pub fn push_layer<G: AsRef<[f64]>>(&mut self, gammas: &[G], sign: f64) -> Result<(), Error> {
        let w = if self.weights.is_empty() {
            recover_layer1(gammas, sign)
        } else {
            let (w, r) = recover_layer_weights(&self.c, gammas, sign)?;
            self.max_residual = self.max_residual.max(r);
            w
        };
        self.c = w.mul(&self.c);
        self.weights.push(w);
        Ok(())
    }

    pub fn into_weights(self) -> Vec<Matrix> {
        self.weights
    }
}

/// Under a fixed pattern the output at `x` is `lin + Σ coeffs · biases`,
/// with biases stacked layer by layer.
fn bias_equation(weights: &[Matrix], pattern: &ActivationPattern, x: &[f64]) -> (Vec<f64>, f64) {
    let k = weights.len() - 1;
    let mut z = x.to_vec();
    for (w, mask) in weights[..k].iter().zip(&pattern.layers) {
        z = (0..w.rows())
            .map(|r| if mask[r] { dot(w.row(r), &z) } else { 0.0 })
            .collect();
    }
    let lin = dot(weights[k].row(0), &z);

    let mut per_layer: Vec<Vec<f64>> = vec![vec![1.0]];
    let mut r = vec![1.0];
    for l in (0..k).rev() {
        let mut next = weights[l + 1].vec_mul(&r);
        for (v, &on) in next.iter_mut().zip(&pattern.layers[l]) {
            if !on {
                *v = 0.0;
            }
        }
        per_layer.push(next.clone());
        r = next;
    }
    per_layer.reverse();
    (per_layer.concat(), lin)
}

/// Solves `f̂(x_m) = 0` for all biases, one equation per boundary point under
/// its assigned pattern. Needs exactly as many points as biases.
pub fn recover_biases<P: AsRef<[f64]>>(
    weights: &[Matrix],
    points: &[P],
    patterns: &[ActivationPattern],
) -> Result<Vec<Vec<f64>>, Error> {
    if weights.is_empty() {
        return Err(Error::Architecture("no layers"));
    }
    let unknowns: usize = weights.iter().map(Matrix::rows).sum();
    if points.len() != unknowns || patterns.len() != unknowns {
        return Err(Error::Shape {
            expected: unknowns,
            found: points.len().min(patterns.len()),
        });
    }
    let mut rows = Vec::with_capacity(unknowns);
    let mut rhs = Vec::with_capacity(unknowns);
    for (x, p) in points.iter().zip(patterns) {
        let (coeffs, lin) = bias_equation(weights, p, x.as_ref());
        rows.push(coeffs);
        rhs.push(-lin);
    }
    let flat = solve(&LinearSystem::new(Matrix::from_rows(&rows), rhs)?)?.solution;
    let mut out = Vec::with_capacity(weights.len());
    let mut at = 0;
    for w in weights {
        out.push(flat[at..at + w.rows()].to_vec());
        at += w.rows();
    }
    Ok(out)
}
