//! ℓ2 PGD on the embedded input.
//!
//! δ is one `len × d_model` matrix per example with a single Frobenius norm.
//! Each inner step re-evaluates the loss gradient at the current δ, moves by
//! `α · g/‖g‖` and projects back onto the ε-ball.

use rand_distr::{Distribution, Uniform};

use super::config::PgdConfig;
use crate::error::Result;
use crate::model::{input_gradient, Parameters, ScalarFn};
use crate::tensor::Matrix;

/// Random start: entries `Uniform(−ε, ε) / √L`.
///
/// The result may lie outside the ε-ball; the first projection brings it back.
pub fn init_delta<R: rand::Rng + ?Sized>(len: usize, d_model: usize, epsilon: f64, rng: &mut R) -> Matrix {
    assert!(len >= 1, "sequence length must be positive");
    if epsilon == 0.0 {
        return Matrix::zeros(len, d_model);
    }
    let scale = 1.0 / (len as f64).sqrt();
    let dist = Uniform::new_inclusive(-epsilon, epsilon).expect("finite epsilon");
    Matrix::from_fn(len, d_model, |_, _| dist.sample(rng) * scale)
}

/// `δ / max(1, ‖δ‖/ε)`.
pub fn project(delta: &mut Matrix, epsilon: f64) {
    if epsilon == 0.0 {
        delta.as_mut_slice().fill(0.0);
        return;
    }
    let n = delta.frobenius_norm();
    let denom = (n / epsilon).max(1.0);
    if denom > 1.0 {
        delta.scale(1.0 / denom);
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub delta: Matrix,
    /// ‖δ‖ after each projection.
    pub norms: Vec<f64>,
    /// ‖α · g/‖g‖‖ for each ascent step taken.
    pub increment_norms: Vec<f64>,
    /// Steps skipped because the gradient vanished.
    pub skipped: usize,
}

impl PgdOutcome {
    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Full attack from the random start.
pub fn pgd_attack<R: rand::Rng + ?Sized>(
    params: &Parameters,
    tokens: &[u32],
    label: usize,
    cfg: &PgdConfig,
    rng: &mut R,
) -> Result<PgdOutcome> {
    let delta0 = init_delta(tokens.len(), params.config.d_model, cfg.epsilon, rng);
    pgd_attack_from(params, tokens, label, cfg, delta0)
}

/// Attack from a caller-provided starting perturbation.
pub fn pgd_attack_from(
    params: &Parameters,
    tokens: &[u32],
    label: usize,
    cfg: &PgdConfig,
    mut delta: Matrix,
) -> Result<PgdOutcome> {
    cfg.validate()?;
    let mut norms = Vec::with_capacity(cfg.n_steps);
    let mut increment_norms = Vec::with_capacity(cfg.n_steps);
    let mut skipped = 0;
    if cfg.is_zero_radius() {
        delta.as_mut_slice().fill(0.0);
        return Ok(PgdOutcome {
            delta,
            norms: vec![0.0; cfg.n_steps],
            increment_norms,
            skipped: cfg.n_steps,
        });
    }
    for _ in 0..cfg.n_steps {
        let g = input_gradient(params, tokens, ScalarFn::ClassLoss(label), Some(&delta))?.input;
        let gn = g.frobenius_norm();
        if gn > 0.0 && gn.is_finite() {
            let step = cfg.alpha / gn;
            let mut inc_sq = 0.0;
            for (d, gi) in delta.as_mut_slice().iter_mut().zip(g.as_slice()) {
                let inc = step * gi;
                inc_sq += inc * inc;
                *d += inc;
            }
            increment_norms.push(inc_sq.sqrt());
        } else {
            skipped += 1;
        }
        project(&mut delta, cfg.epsilon);
        norms.push(delta.frobenius_norm());
    }
    Ok(PgdOutcome {
        delta,
        norms,
        increment_norms,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_radius_start_is_zero() {
        let mut r = rng::seeded(1);
        let d = init_delta(5, 4, 0.0, &mut r);
        assert!(d.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn start_entries_are_bounded() {
        let mut r = rng::seeded(2);
        let eps = 0.3;
        let len = 9;
        let d = init_delta(len, 16, eps, &mut r);
        let bound = eps / (len as f64).sqrt();
        assert!(d.as_slice().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn projection_rescales_onto_sphere() {
        let eps = 0.5;
        let mut d = Matrix::from_fn(3, 4, |i, j| (i + j) as f64 + 1.0);
        let n = d.frobenius_norm();
        d.scale(2.0 * eps / n);
        assert!((d.frobenius_norm() - 2.0 * eps).abs() < 1e-12);
        project(&mut d, eps);
        assert!((d.frobenius_norm() - eps).abs() < 1e-12);
        let before = d.clone();
        let mut inside = before.clone();
        inside.scale(0.5);
        let copy = inside.clone();
        project(&mut inside, eps);
        assert_eq!(inside, copy);
    }
}
