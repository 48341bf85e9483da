use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::norm2;

/// Uniform point in the hypercube `[-radius, radius]^dim`.
pub fn uniform_cube<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-radius..=radius))
        .collect()
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_is_unit_and_cube_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1, 2, 17] {
            let v = unit_sphere(&mut rng, d);
            assert!((norm2(&v) - 1.0).abs() < 1e-12);
            let c = uniform_cube(&mut rng, d, 2.5);
            assert!(c.iter().all(|x| x.abs() <= 2.5));
        }
    }
}
