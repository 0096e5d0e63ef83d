//! Reference implementation by direct matrix arithmetic.
//!
//! Nothing in this module may use the factor-graph engine: it is the
//! independent side of every equivalence check. It only builds on
//! `linalg`, `model` and `distribution`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use thiserror::Error;

use crate::distribution::OutcomeDistribution;
use crate::linalg::{self, Matrix};
use crate::model::{completeness_deviation, HmmModel, Measurement, QuantumModel};

/// Outcome probabilities at or below this have no defined post-state.
pub const ZERO_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("matrix is not unitary (max deviation {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("outcome {outcome} is outside 0..{outcomes}")]
    OutcomeOutOfRange { outcome: usize, outcomes: usize },
    #[error("outcome has probability {probability:e}; post-measurement state undefined")]
    ZeroProbabilityOutcome { probability: f64 },
    #[error("Kraus operators are incomplete (max deviation {deviation:e})")]
    IncompleteKraus { deviation: f64 },
    #[error("enumeration of {tuples} outcome tuples exceeds the cap of {cap}")]
    ResourceLimit { tuples: usize, cap: usize },
}

pub type OracleResult<T> = Result<T, OracleError>;

/// A normalized state together with the log-probability of the history that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    pub rho: Matrix,
    pub log_probability: f64,
}

impl OracleState {
    pub fn initial(model: &QuantumModel) -> Self {
        Self { rho: model.initial().density(model.dimension()), log_probability: 0.0 }
    }

    pub fn probability(&self) -> f64 {
        libm::exp(self.log_probability)
    }
}

/// `U rho U^H`.
pub fn oracle_evolve(rho: &Matrix, u: &Matrix, tolerance: f64) -> OracleResult<Matrix> {
    let deviation = u.unitarity_deviation();
    if !(deviation <= tolerance) {
        return Err(OracleError::NotUnitary { deviation });
    }
    Ok(u.mul(rho).mul(&u.adjoint()))
}

/// Projection onto column `y` of `basis`: returns `B(y)^H rho B(y)` and the
/// post-state `B(y) B(y)^H`, which does not depend on `rho`.
pub fn oracle_step_project(rho: &Matrix, basis: &Matrix, y: usize) -> OracleResult<(f64, Matrix)> {
    if y >= basis.cols() {
        return Err(OracleError::OutcomeOutOfRange { outcome: y, outcomes: basis.cols() });
    }
    let b = basis.column(y);
    let prob = linalg::inner(&b, &rho.mul_vec(&b)).re;
    Ok((prob, Matrix::outer(&b, &b)))
}

/// General measurement: `tr(A(y) rho A(y)^H)` and the renormalized post-state.
pub fn oracle_step_general(rho: &Matrix, kraus: &[Matrix], y: usize, tolerance: f64) -> OracleResult<(f64, Matrix)> {
    let deviation = completeness_deviation(kraus);
    if !(deviation <= tolerance) {
        return Err(OracleError::IncompleteKraus { deviation });
    }
    let a = kraus.get(y).ok_or(OracleError::OutcomeOutOfRange { outcome: y, outcomes: kraus.len() })?;
    let unnormalized = a.mul(rho).mul(&a.adjoint());
    let prob = unnormalized.trace().re;
    if !(prob > ZERO_PROBABILITY) {
        return Err(OracleError::ZeroProbabilityOutcome { probability: prob });
    }
    Ok((prob, unnormalized.scale(Complex64::new(1.0 / prob, 0.0))))
}

/// `||B(y)^H psi||^2`.
pub fn pure_state_probability(psi: &[Complex64], basis: &Matrix, y: usize) -> f64 {
    linalg::inner(&basis.column(y), psi).norm_sqr()
}

/// Outcome probabilities of one measurement on `rho`, with no post-state.
pub fn outcome_probabilities(rho: &Matrix, measurement: &Measurement) -> Vec<f64> {
    match measurement {
        Measurement::Projection { basis } => (0..basis.cols())
            .map(|y| {
                let b = basis.column(y);
                linalg::inner(&b, &rho.mul_vec(&b)).re
            })
            .collect(),
        Measurement::General { kraus, .. } => kraus.iter().map(|a| a.mul(rho).mul(&a.adjoint()).trace().re).collect(),
    }
}

/// Applies stage `k`'s measurement outcome `y` to `state`.
fn measure(state: &OracleState, measurement: &Measurement, y: usize, tolerance: f64) -> OracleResult<(f64, OracleState)> {
    let (prob, rho) = match measurement {
        Measurement::Projection { basis } => oracle_step_project(&state.rho, basis, y)?,
        Measurement::General { kraus, .. } => oracle_step_general(&state.rho, kraus, y, tolerance)?,
    };
    Ok((prob, OracleState { rho, log_probability: state.log_probability + libm::log(prob) }))
}

/// Joint distribution by enumerating outcome tuples and chaining the step
/// probabilities. Prefixes at or below [`ZERO_PROBABILITY`] are not extended;
/// their descendants keep the product of step probabilities reached so far
/// on the first tuple and 0 elsewhere.
pub fn oracle_joint(model: &QuantumModel, cap: usize) -> OracleResult<OutcomeDistribution> {
    let alphabets = model.outcome_alphabets();
    let tuples = alphabets.iter().try_fold(1usize, |acc, &a| acc.checked_mul(a)).unwrap_or(usize::MAX);
    if tuples > cap {
        return Err(OracleError::ResourceLimit { tuples, cap });
    }
    let tol = model.tolerances();
    let mut probs = vec![0.0; tuples];
    let root = OracleState::initial(model);
    let mut stack: Vec<(usize, usize, f64, OracleState)> = vec![(0, 0, 1.0, root)];
    while let Some((depth, flat, mass, state)) = stack.pop() {
        if depth == model.len() {
            probs[flat] = mass;
            continue;
        }
        let stage = &model.stages()[depth];
        let evolved = OracleState { rho: oracle_evolve(&state.rho, &stage.unitary, tol.unitarity)?, ..state };
        let span: usize = alphabets[depth + 1..].iter().product();
        let step = outcome_probabilities(&evolved.rho, &stage.measurement);
        for (y, &p) in step.iter().enumerate() {
            let child_flat = flat * alphabets[depth] + y;
            if p <= ZERO_PROBABILITY {
                probs[child_flat * span] = mass * p.max(0.0);
                continue;
            }
            let (prob, next) = measure(&evolved, &stage.measurement, y, tol.completeness)?;
            stack.push((depth + 1, child_flat, mass * prob, next));
        }
    }
    Ok(OutcomeDistribution::new(alphabets, probs))
}

/// Forward recursion for `p(y_1, ..., y_n)` with `n = outcomes.len()`.
pub fn hmm_forward(hmm: &HmmModel, outcomes: &[usize]) -> f64 {
    assert!(outcomes.len() <= hmm.len(), "more outcomes than kernels");
    let mut alpha: Vec<f64> = hmm.initial().to_vec();
    for (kernel, &y) in hmm.kernels().iter().zip(outcomes) {
        let mut next = vec![0.0; kernel.states_out()];
        for (x_prev, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (x, slot) in next.iter_mut().enumerate() {
                *slot += a * kernel.get(x_prev, y, x);
            }
        }
        alpha = next;
    }
    alpha.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HmmKernel, InitialState, Stage};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn hadamard() -> Matrix {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]]).unwrap()
    }

    #[test]
    fn oracle_stays_off_the_graph_engine() {
        let src = include_str!("oracle.rs");
        let code = &src[..src.find("#[cfg(test)]").unwrap()];
        for forbidden in ["crate::tensor", "crate::mirror", "crate::inference", "FactorGraph"] {
            assert!(!code.contains(forbidden), "oracle references {forbidden}");
        }
    }

    #[test]
    fn evolve_examples() {
        let rho = Matrix::diagonal(&[1.0, 0.0]);
        assert_eq!(oracle_evolve(&rho, &Matrix::identity(2), 1e-9).unwrap(), rho);
        let out = oracle_evolve(&rho, &hadamard(), 1e-9).unwrap();
        let half = Matrix::from_fn(2, 2, |_, _| c(0.5, 0.0));
        assert!(out.max_abs_diff(&half) < 1e-15);
        assert!(matches!(oracle_evolve(&rho, &Matrix::diagonal(&[1.0, 2.0]), 1e-9), Err(OracleError::NotUnitary { .. })));
    }

    #[test]
    fn classical_readout() {
        let rho = Matrix::diagonal(&[0.25, 0.75]);
        let (p, post) = oracle_step_project(&rho, &Matrix::identity(2), 1).unwrap();
        assert_eq!(p, 0.75);
        assert_eq!(post, Matrix::diagonal(&[0.0, 1.0]));
        assert!(matches!(oracle_step_project(&rho, &Matrix::identity(2), 2), Err(OracleError::OutcomeOutOfRange { .. })));
    }

    #[test]
    fn amplitude_damping_step() {
        let gamma: f64 = 0.25;
        let a0 = Matrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c((1.0 - gamma).sqrt(), 0.0)]]).unwrap();
        let a1 = Matrix::from_rows(&[vec![c(0.0, 0.0), c(gamma.sqrt(), 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let rho = Matrix::diagonal(&[0.0, 1.0]);
        let (p, post) = oracle_step_general(&rho, &[a0.clone(), a1.clone()], 1, 1e-9).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
        assert!(post.max_abs_diff(&Matrix::diagonal(&[1.0, 0.0])) < 1e-15);
        // A(0) on diag(0, 1) leaves the excited state with probability 1 - gamma.
        let (p0, _) = oracle_step_general(&rho, &[a0, a1.clone()], 0, 1e-9).unwrap();
        assert!((p0 - 0.75).abs() < 1e-15);
        assert!(matches!(oracle_step_general(&rho, &[a1], 0, 1e-9), Err(OracleError::IncompleteKraus { .. })));
    }

    #[test]
    fn trivial_measurement_keeps_state() {
        let rho = Matrix::from_rows(&[vec![c(0.3, 0.0), c(0.1, 0.2)], vec![c(0.1, -0.2), c(0.7, 0.0)]]).unwrap();
        let (p, post) = oracle_step_general(&rho, &[Matrix::identity(2)], 0, 1e-9).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        assert!(post.max_abs_diff(&rho) < 1e-15);
    }

    #[test]
    fn zero_probability_outcome() {
        let kraus = [Matrix::diagonal(&[1.0, 0.0]), Matrix::diagonal(&[0.0, 1.0])];
        let err = oracle_step_general(&Matrix::diagonal(&[1.0, 0.0]), &kraus, 1, 1e-9).unwrap_err();
        assert!(matches!(err, OracleError::ZeroProbabilityOutcome { .. }));
    }

    #[test]
    fn hadamard_twice_is_uniform() {
        let stage = Stage { unitary: hadamard(), measurement: Measurement::Projection { basis: Matrix::identity(2) } };
        let m = QuantumModel::new(2, InitialState::BasisState(0), vec![stage.clone(), stage]).unwrap();
        let d = oracle_joint(&m, 1_000).unwrap();
        for p in d.probabilities() {
            assert!((p - 0.25).abs() < 1e-15, "{p}");
        }
    }

    #[test]
    fn deterministic_model_is_a_point_mass() {
        let stage = Stage { unitary: Matrix::identity(3), measurement: Measurement::Projection { basis: Matrix::identity(3) } };
        let m = QuantumModel::new(3, InitialState::BasisState(2), vec![stage.clone(), stage]).unwrap();
        let d = oracle_joint(&m, 1_000).unwrap();
        assert_eq!(d.get(&[2, 2]), 1.0);
        assert_eq!(d.total(), 1.0);
        assert!(matches!(oracle_joint(&m, 8), Err(OracleError::ResourceLimit { tuples: 9, cap: 8 })));
    }

    #[test]
    fn hmm_single_step_unrolled() {
        let vals: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0) / 36.0 * 2.0).collect();
        let k = HmmKernel::new(2, 2, 2, vals).unwrap();
        let init = vec![0.3, 0.7];
        let h = HmmModel::new(init.clone(), vec![k.clone()]).unwrap();
        for y in 0..2 {
            let direct: f64 = (0..2).flat_map(|x0| (0..2).map(move |x1| (x0, x1))).map(|(x0, x1)| init[x0] * k.get(x0, y, x1)).sum();
            assert!((hmm_forward(&h, &[y]) - direct).abs() < 1e-15);
        }
    }
}
