//! Declarative measurement-sequence models.
//!
//! A [`QuantumModel`] is an `M`-dimensional system prepared in an initial
//! state, followed by `n` stages. Stage `k` applies the unitary `U_{k-1}` and
//! then performs measurement `k`. Outcome and state indices are 0-based.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model needs dimension >= 1")]
    ZeroDimension,
    #[error("model needs at least one stage")]
    NoStages,
    #[error("{what} is {rows}x{cols}, expected {expected}x{expected}")]
    MatrixShape { what: String, rows: usize, cols: usize, expected: usize },
    #[error("{what} has length {found}, expected {expected}")]
    VectorLength { what: String, found: usize, expected: usize },
    #[error("{what} contains a non-finite entry")]
    NonFinite { what: String },
    #[error("initial basis state {index} is outside 0..{dimension}")]
    BasisIndex { index: usize, dimension: usize },
    #[error("{what} has no outcomes")]
    NoOutcomes { what: String },
    #[error("{what} repeats outcome label {label:?}")]
    DuplicateLabel { what: String, label: String },
    #[error("matrix is not unitary (max deviation {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("HMM kernel {step} has shape inconsistent with its neighbours")]
    KernelShape { step: usize },
    #[error("HMM has {available} kernels but {requested} steps were requested")]
    TooFewKernels { available: usize, requested: usize },
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Numeric tolerances for the validity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub unitarity: f64,
    pub completeness: f64,
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { unitarity: 1e-9, completeness: 1e-9, normalization: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// `X_0 = index` is known.
    BasisState(usize),
    /// A probability mass function over the basis states.
    BasisPmf(Vec<f64>),
    /// A unit state vector.
    PureVector(Vec<Complex64>),
}

impl InitialState {
    /// The initial density matrix `rho_0`.
    pub fn density(&self, dimension: usize) -> Matrix {
        match self {
            InitialState::BasisState(i) => {
                let mut m = Matrix::zeros(dimension, dimension);
                m[(*i, *i)] = linalg::ONE;
                m
            }
            InitialState::BasisPmf(p) => Matrix::diagonal(p),
            InitialState::PureVector(psi) => Matrix::outer(psi, psi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    /// Projection onto the columns of a unitary basis matrix; outcome `y`
    /// selects column `y`.
    Projection { basis: Matrix },
    /// General measurement with one Kraus operator per labelled outcome.
    General { labels: Vec<String>, kraus: Vec<Matrix> },
}

impl Measurement {
    /// General measurement with labels `"0"`, `"1"`, ...
    pub fn general(kraus: Vec<Matrix>) -> Self {
        let labels = (0..kraus.len()).map(|i| i.to_string()).collect();
        Measurement::General { labels, kraus }
    }

    pub fn outcome_count(&self) -> usize {
        match self {
            Measurement::Projection { basis } => basis.cols(),
            Measurement::General { kraus, .. } => kraus.len(),
        }
    }

    /// Outcome labels in dense-index order.
    pub fn labels(&self) -> Vec<String> {
        match self {
            Measurement::Projection { basis } => (0..basis.cols()).map(|i| i.to_string()).collect(),
            Measurement::General { labels, .. } => labels.clone(),
        }
    }

    pub fn outcome_index(&self, label: &str) -> Option<usize> {
        match self {
            Measurement::Projection { basis } => label.parse::<usize>().ok().filter(|&i| i < basis.cols()),
            Measurement::General { labels, .. } => labels.iter().position(|l| l == label),
        }
    }

    /// Kraus operators of the measurement. Projections map to `B(y) B(y)^H`
    /// without checking unitarity.
    pub fn kraus_operators(&self) -> Vec<Matrix> {
        match self {
            Measurement::Projection { basis } => projectors(basis),
            Measurement::General { kraus, .. } => kraus.clone(),
        }
    }

    /// `max |sum_y A(y)^H A(y) - I|`.
    pub fn completeness_deviation(&self) -> f64 {
        completeness_deviation(&self.kraus_operators())
    }
}

/// `max |sum_y A(y)^H A(y) - I|` for a Kraus family.
pub fn completeness_deviation(kraus: &[Matrix]) -> f64 {
    let Some(first) = kraus.first() else {
        return f64::INFINITY;
    };
    let n = first.rows();
    let mut sum = Matrix::zeros(n, n);
    for a in kraus {
        if a.rows() != n || a.cols() != n {
            return f64::INFINITY;
        }
        sum = sum.add(&a.adjoint().mul(a));
    }
    sum.max_abs_diff(&Matrix::identity(n))
}

fn projectors(basis: &Matrix) -> Vec<Matrix> {
    (0..basis.cols())
        .map(|y| {
            let col = basis.column(y);
            Matrix::outer(&col, &col)
        })
        .collect()
}

/// Rewrites a projection in basis `B` as the Kraus family `A(y) = B(y) B(y)^H`.
pub fn projection_to_kraus(basis: &Matrix, tolerance: f64) -> ModelResult<Measurement> {
    let deviation = basis.unitarity_deviation();
    if !(deviation <= tolerance) {
        return Err(ModelError::NotUnitary { deviation });
    }
    Ok(Measurement::general(projectors(basis)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// Evolution applied before this stage's measurement.
    pub unitary: Matrix,
    pub measurement: Measurement,
}

/// A validated-shape measurement sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumModel {
    dimension: usize,
    initial: InitialState,
    stages: Vec<Stage>,
    tolerances: Tolerances,
}

impl QuantumModel {
    /// Checks shapes and finiteness. Numeric validity (unitarity,
    /// completeness, normalization) is reported by [`QuantumModel::validate`].
    pub fn new(dimension: usize, initial: InitialState, stages: Vec<Stage>) -> ModelResult<Self> {
        if dimension == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if stages.is_empty() {
            return Err(ModelError::NoStages);
        }
        match &initial {
            InitialState::BasisState(i) if *i >= dimension => {
                return Err(ModelError::BasisIndex { index: *i, dimension })
            }
            InitialState::BasisPmf(p) => {
                check_len("initial pmf", p.len(), dimension)?;
                if p.iter().any(|x| !x.is_finite()) {
                    return Err(ModelError::NonFinite { what: "initial pmf".into() });
                }
            }
            InitialState::PureVector(psi) => {
                check_len("initial state vector", psi.len(), dimension)?;
                if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(ModelError::NonFinite { what: "initial state vector".into() });
                }
            }
            _ => {}
        }
        for (k, stage) in stages.iter().enumerate() {
            check_square(&format!("stage {} unitary", k + 1), &stage.unitary, dimension)?;
            match &stage.measurement {
                Measurement::Projection { basis } => {
                    check_square(&format!("stage {} basis", k + 1), basis, dimension)?;
                }
                Measurement::General { labels, kraus } => {
                    let what = format!("stage {} measurement", k + 1);
                    if kraus.is_empty() {
                        return Err(ModelError::NoOutcomes { what });
                    }
                    check_len(&format!("{what} labels"), labels.len(), kraus.len())?;
                    for (i, l) in labels.iter().enumerate() {
                        if labels[..i].contains(l) {
                            return Err(ModelError::DuplicateLabel { what, label: l.clone() });
                        }
                    }
                    for (label, a) in labels.iter().zip(kraus) {
                        check_square(&format!("stage {} kraus[{label}]", k + 1), a, dimension)?;
                    }
                }
            }
        }
        Ok(Self { dimension, initial, stages, tolerances: Tolerances::default() })
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn initial(&self) -> &InitialState {
        &self.initial
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Number of measurements `n`.
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances
    }

    /// Outcome alphabet size of each measurement.
    pub fn outcome_alphabets(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.measurement.outcome_count()).collect()
    }

    /// The model keeping only the first `n` stages.
    pub fn truncated(&self, n: usize) -> Self {
        assert!(n >= 1 && n <= self.stages.len(), "truncation must keep 1..=len stages");
        Self { stages: self.stages[..n].to_vec(), ..self.clone() }
    }

    /// Same model with stage `k` (0-based) replaced.
    pub fn with_stage(&self, k: usize, stage: Stage) -> ModelResult<Self> {
        let mut stages = self.stages.clone();
        stages[k] = stage;
        Ok(Self::new(self.dimension, self.initial.clone(), stages)?.with_tolerances(self.tolerances))
    }

    /// Runs every numeric validity check against the model's tolerances.
    pub fn validate(&self) -> ValidationReport {
        let tol = self.tolerances;
        let mut checks = vec![Check::new("shape", None, 0.0, 0.0)];
        let mut notes = Vec::new();
        match &self.initial {
            InitialState::BasisState(_) => {
                checks.push(Check::new("initial normalization", None, 0.0, tol.normalization));
            }
            InitialState::BasisPmf(p) => {
                let neg = p.iter().fold(0.0f64, |m, &x| m.max(-x));
                let sum: f64 = p.iter().sum();
                checks.push(Check::new("initial nonnegativity", None, neg, tol.normalization));
                checks.push(Check::new("initial normalization", None, (sum - 1.0).abs(), tol.normalization));
            }
            InitialState::PureVector(psi) => {
                let norm = libm::sqrt(linalg::norm_sqr(psi));
                checks.push(Check::new("initial normalization", None, (norm - 1.0).abs(), tol.normalization));
                notes.push("initial state is a pure vector (extension beyond pmf / known basis state)".to_string());
            }
        }
        for (k, stage) in self.stages.iter().enumerate() {
            let stage_no = Some(k + 1);
            checks.push(Check::new("unitarity", stage_no, stage.unitary.unitarity_deviation(), tol.unitarity));
            match &stage.measurement {
                Measurement::Projection { basis } => {
                    checks.push(Check::new("basis unitarity", stage_no, basis.unitarity_deviation(), tol.unitarity));
                }
                Measurement::General { kraus, .. } => {
                    checks.push(Check::new("completeness", stage_no, completeness_deviation(kraus), tol.completeness));
                }
            }
        }
        ValidationReport { checks, notes }
    }
}

fn check_len(what: &str, found: usize, expected: usize) -> ModelResult<()> {
    if found != expected {
        return Err(ModelError::VectorLength { what: what.into(), found, expected });
    }
    Ok(())
}

fn check_square(what: &str, m: &Matrix, n: usize) -> ModelResult<()> {
    if m.rows() != n || m.cols() != n {
        return Err(ModelError::MatrixShape { what: what.into(), rows: m.rows(), cols: m.cols(), expected: n });
    }
    if !m.is_finite() {
        return Err(ModelError::NonFinite { what: what.into() });
    }
    Ok(())
}

/// One numeric check with its observed deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// 1-based stage number, when the check belongs to one stage.
    pub stage: Option<usize>,
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: &'static str, stage: Option<usize>, deviation: f64, tolerance: f64) -> Self {
        Self { name, stage, deviation, tolerance }
    }

    pub fn passed(&self) -> bool {
        self.deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// Largest deviation among checks called `name`.
    pub fn max_deviation(&self, name: &str) -> Option<f64> {
        self.checks.iter().filter(|c| c.name == name).map(|c| c.deviation).reduce(f64::max)
    }
}

/// One step `p(y_k, x_k | x_{k-1})` of a hidden Markov model, stored as
/// `[x_prev][y][x_next]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmKernel {
    states_in: usize,
    outcomes: usize,
    states_out: usize,
    values: Vec<f64>,
}

impl HmmKernel {
    pub fn new(states_in: usize, outcomes: usize, states_out: usize, values: Vec<f64>) -> ModelResult<Self> {
        if states_in == 0 || outcomes == 0 || states_out == 0 {
            return Err(ModelError::ZeroDimension);
        }
        check_len("HMM kernel", values.len(), states_in * outcomes * states_out)?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "HMM kernel".into() });
        }
        Ok(Self { states_in, outcomes, states_out, values })
    }

    pub fn states_in(&self) -> usize {
        self.states_in
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    pub fn states_out(&self) -> usize {
        self.states_out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x_prev: usize, y: usize, x_next: usize) -> f64 {
        self.values[(x_prev * self.outcomes + y) * self.states_out + x_next]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    initial: Vec<f64>,
    kernels: Vec<HmmKernel>,
    tolerance: f64,
}

impl HmmModel {
    pub fn new(initial: Vec<f64>, kernels: Vec<HmmKernel>) -> ModelResult<Self> {
        if initial.is_empty() {
            return Err(ModelError::ZeroDimension);
        }
        if kernels.is_empty() {
            return Err(ModelError::NoStages);
        }
        if initial.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "HMM initial pmf".into() });
        }
        let mut states = initial.len();
        for (k, kernel) in kernels.iter().enumerate() {
            if kernel.states_in != states {
                return Err(ModelError::KernelShape { step: k + 1 });
            }
            states = kernel.states_out;
        }
        Ok(Self { initial, kernels, tolerance: 1e-9 })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn kernels(&self) -> &[HmmKernel] {
        &self.kernels
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn validate(&self) -> ValidationReport {
        let tol = self.tolerance;
        let neg = |xs: &[f64]| xs.iter().fold(0.0f64, |m, &x| m.max(-x));
        let mut checks = vec![Check::new("shape", None, 0.0, 0.0)];
        checks.push(Check::new("initial nonnegativity", None, neg(&self.initial), tol));
        let sum: f64 = self.initial.iter().sum();
        checks.push(Check::new("initial normalization", None, (sum - 1.0).abs(), tol));
        for (k, kernel) in self.kernels.iter().enumerate() {
            checks.push(Check::new("kernel nonnegativity", Some(k + 1), neg(&kernel.values), tol));
            let block = kernel.outcomes * kernel.states_out;
            let dev = kernel
                .values
                .chunks(block)
                .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
            checks.push(Check::new("kernel normalization", Some(k + 1), dev, tol));
        }
        ValidationReport { checks, notes: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn hadamard() -> Matrix {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![c(s), c(s)], vec![c(s), c(-s)]]).unwrap()
    }

    fn qubit(measurement: Measurement) -> QuantumModel {
        QuantumModel::new(2, InitialState::BasisState(0), vec![Stage { unitary: hadamard(), measurement }]).unwrap()
    }

    #[test]
    fn hadamard_projection_model_validates() {
        let m = qubit(Measurement::Projection { basis: Matrix::identity(2) });
        let report = m.validate();
        assert!(report.passed(), "{report:?}");
        assert!(report.checks.iter().all(|c| c.deviation <= 1e-15));
    }

    #[test]
    fn diagonal_kraus_pair_is_complete() {
        let m = qubit(Measurement::general(vec![Matrix::diagonal(&[1.0, 0.0]), Matrix::diagonal(&[0.0, 1.0])]));
        assert_eq!(m.validate().max_deviation("completeness"), Some(0.0));
    }

    #[test]
    fn missing_outcome_fails_completeness() {
        let m = qubit(Measurement::general(vec![Matrix::diagonal(&[1.0, 0.0])]));
        let report = m.validate();
        assert!(!report.passed());
        assert_eq!(report.max_deviation("completeness"), Some(1.0));
    }

    #[test]
    fn standard_basis_projectors() {
        let Measurement::General { kraus, .. } = projection_to_kraus(&Matrix::identity(2), 1e-9).unwrap() else {
            panic!("expected general measurement");
        };
        assert_eq!(kraus, vec![Matrix::diagonal(&[1.0, 0.0]), Matrix::diagonal(&[0.0, 1.0])]);
    }

    #[test]
    fn hadamard_projectors_are_rank_one_and_complete() {
        let meas = projection_to_kraus(&hadamard(), 1e-9).unwrap();
        assert!(meas.completeness_deviation() <= 1e-15);
        let kraus = meas.kraus_operators();
        let half = Matrix::from_rows(&[vec![c(0.5), c(0.5)], vec![c(0.5), c(0.5)]]).unwrap();
        assert!(kraus[0].max_abs_diff(&half) <= 1e-15);
        for a in &kraus {
            assert!(a.mul(a).max_abs_diff(a) <= 1e-12);
        }
    }

    #[test]
    fn non_unitary_basis_rejected() {
        let err = projection_to_kraus(&Matrix::diagonal(&[1.0, 2.0]), 1e-9).unwrap_err();
        assert!(matches!(err, ModelError::NotUnitary { .. }));
    }

    #[test]
    fn pure_vector_is_flagged() {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let m = QuantumModel::new(
            2,
            InitialState::PureVector(vec![c(s), c(s)]),
            vec![Stage { unitary: Matrix::identity(2), measurement: Measurement::Projection { basis: Matrix::identity(2) } }],
        )
        .unwrap();
        let report = m.validate();
        assert!(report.passed());
        assert_eq!(report.notes.len(), 1);
    }

    #[test]
    fn structural_errors() {
        let stage = Stage { unitary: Matrix::identity(2), measurement: Measurement::Projection { basis: Matrix::identity(2) } };
        assert_eq!(QuantumModel::new(2, InitialState::BasisState(0), vec![]), Err(ModelError::NoStages));
        assert!(matches!(
            QuantumModel::new(3, InitialState::BasisState(0), vec![stage.clone()]),
            Err(ModelError::MatrixShape { .. })
        ));
        assert!(matches!(
            QuantumModel::new(2, InitialState::BasisState(2), vec![stage.clone()]),
            Err(ModelError::BasisIndex { .. })
        ));
        let dup = Stage {
            unitary: Matrix::identity(2),
            measurement: Measurement::General {
                labels: vec!["a".into(), "a".into()],
                kraus: vec![Matrix::identity(2), Matrix::identity(2)],
            },
        };
        assert!(matches!(QuantumModel::new(2, InitialState::BasisState(0), vec![dup]), Err(ModelError::DuplicateLabel { .. })));
    }

    #[test]
    fn hmm_normalization_checks() {
        let k = HmmKernel::new(2, 2, 2, vec![0.25; 8]).unwrap();
        let h = HmmModel::new(vec![0.5, 0.5], vec![k]).unwrap();
        assert!(h.validate().passed());
        let bad = HmmKernel::new(2, 2, 2, vec![0.5; 8]).unwrap();
        let h = HmmModel::new(vec![0.5, 0.5], vec![bad]).unwrap();
        assert_eq!(h.validate().max_deviation("kernel normalization"), Some(1.0));
        let mismatched = HmmKernel::new(3, 2, 2, vec![0.0; 12]).unwrap();
        assert_eq!(HmmModel::new(vec![0.5, 0.5], vec![mismatched]), Err(ModelError::KernelShape { step: 1 }));
    }
}
