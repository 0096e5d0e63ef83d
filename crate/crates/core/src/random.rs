//! Seeded generators for valid random models.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::linalg::{self, Matrix};
use crate::model::{HmmKernel, HmmModel, InitialState, Measurement, QuantumModel, Stage};

/// Uniform `[0, 1)` from the top 53 bits of a 64-bit draw.
pub fn unit_interval(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic source of random numbers for model generation.
pub struct ModelRng {
    inner: ChaCha20Rng,
}

impl ModelRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self) -> f64 {
        unit_interval(&mut self.inner)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        lo + (self.inner.next_u64() % (hi - lo + 1) as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn complex_gaussian(&mut self) -> Complex64 {
        Complex64::new(self.gaussian(), self.gaussian())
    }
}

/// Haar-like random unitary from Gram-Schmidt on a complex Gaussian matrix.
pub fn random_unitary(rng: &mut ModelRng, n: usize) -> Matrix {
    loop {
        let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v: Vec<Complex64> = (0..n).map(|_| rng.complex_gaussian()).collect();
            // Two passes keep the columns orthogonal to working precision.
            for _ in 0..2 {
                for q in &cols {
                    let proj = linalg::inner(q, &v);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= proj * qi;
                    }
                }
            }
            let norm = libm::sqrt(linalg::norm_sqr(&v));
            if norm < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        if ok {
            return Matrix::from_fn(n, n, |r, c| cols[c][r]);
        }
    }
}

/// `outcomes` Kraus operators on dimension `n`, cut from an isometry.
pub fn random_kraus(rng: &mut ModelRng, n: usize, outcomes: usize) -> Vec<Matrix> {
    let v = random_unitary(rng, n * outcomes);
    (0..outcomes).map(|y| Matrix::from_fn(n, n, |r, c| v[(y * n + r, c)])).collect()
}

/// Random probability vector with strictly positive entries.
pub fn random_pmf(rng: &mut ModelRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_pure_state(rng: &mut ModelRng, n: usize) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..n).map(|_| rng.complex_gaussian()).collect();
    let norm = libm::sqrt(linalg::norm_sqr(&v));
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Shape of a generated model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub dimension: usize,
    pub steps: usize,
    /// Largest outcome alphabet of a general measurement.
    pub max_outcomes: usize,
}

impl ModelShape {
    pub fn new(dimension: usize, steps: usize) -> Self {
        Self { dimension, steps, max_outcomes: 3 }
    }
}

/// Random valid model mixing initial state kinds and measurement kinds.
pub fn random_model(rng: &mut ModelRng, shape: ModelShape) -> QuantumModel {
    let n = shape.dimension;
    let initial = match rng.range(0, 2) {
        0 => InitialState::BasisState(rng.range(0, n - 1)),
        1 => InitialState::BasisPmf(random_pmf(rng, n)),
        _ => InitialState::PureVector(random_pure_state(rng, n)),
    };
    let stages = (0..shape.steps)
        .map(|_| {
            let unitary = random_unitary(rng, n);
            let measurement = if rng.range(0, 1) == 0 {
                Measurement::Projection { basis: random_unitary(rng, n) }
            } else {
                let outcomes = rng.range(1, shape.max_outcomes.max(1));
                Measurement::general(random_kraus(rng, n, outcomes))
            };
            Stage { unitary, measurement }
        })
        .collect();
    QuantumModel::new(n, initial, stages).expect("generated model is well formed")
}

/// Random model whose measurements are all projections.
pub fn random_projective_model(rng: &mut ModelRng, dimension: usize, steps: usize) -> QuantumModel {
    let initial = InitialState::BasisPmf(random_pmf(rng, dimension));
    let stages = (0..steps)
        .map(|_| Stage {
            unitary: random_unitary(rng, dimension),
            measurement: Measurement::Projection { basis: random_unitary(rng, dimension) },
        })
        .collect();
    QuantumModel::new(dimension, initial, stages).expect("generated model is well formed")
}

/// Random hidden Markov model with `steps` kernels.
pub fn random_hmm(rng: &mut ModelRng, states: usize, outcomes: usize, steps: usize) -> HmmModel {
    let kernels = (0..steps)
        .map(|_| {
            let mut values = vec![0.0; states * outcomes * states];
            for x_prev in 0..states {
                let row = random_pmf(rng, outcomes * states);
                values[x_prev * outcomes * states..(x_prev + 1) * outcomes * states].copy_from_slice(&row);
            }
            HmmKernel::new(states, outcomes, states, values).expect("kernel shape")
        })
        .collect();
    HmmModel::new(random_pmf(rng, states), kernels).expect("generated hmm is well formed")
}
