//! Compiles models into factor graphs.
//!
//! A quantum model becomes a two-rail graph. The upper rail carries the
//! factors `U_k` and `A_k(y)`, and the lower rail carries their entrywise
//! complex conjugates over the primed variables. Each measurement is a gadget
//! with `A_k` on the upper rail, `conj(A_k)` on the lower rail and a
//! three-way equality node joining both copies of the outcome to `Y_k`. The
//! rails meet at the initial state and at a terminal equality node.
//!
//! ```text
//!   p(x0) - = - U0 - [A1] - U1 - [A2] - =
//!           |         |           |     |
//!           +-- U0* - [A1*] - U1* - [A2*]+
//!                     |           |
//!                     Y1          Y2
//! ```

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::{HmmModel, InitialState, Measurement, ModelError, QuantumModel};
use crate::tensor::{FactorGraph, FactorId, TensorError, VariableId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("outcome {value} at measurement {stage} is outside the alphabet of size {alphabet}")]
    InvalidObservation { stage: usize, value: usize, alphabet: usize },
    #[error("got {found} observation slots for {expected} measurements")]
    ObservationLength { expected: usize, found: usize },
    #[error("builder used out of order: {0}")]
    Order(&'static str),
}

pub type BuildResult<T> = Result<T, BuildError>;

/// How one outcome variable `Y_k` is treated in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Left as a half edge of the graph.
    Free,
    /// Clamped by a unary indicator factor.
    Clamp(usize),
    /// Summed out by an all-ones unary factor.
    SumOut,
}

/// Variables and factors of one measurement gadget.
#[derive(Debug, Clone, PartialEq)]
pub struct GadgetHandles {
    /// `(X_k, X_k')`, the rails entering the measurement.
    pub before: (VariableId, VariableId),
    /// `(X~_k, X~_k')`, the rails leaving it.
    pub after: (VariableId, VariableId),
    pub outcome: VariableId,
    /// Factors added to the graph before this gadget.
    pub factors_before: usize,
    /// Factors added up to and including this gadget and its clamp.
    pub factors_through: usize,
}

#[derive(Debug, Clone)]
pub struct MirrorGraph {
    pub graph: FactorGraph,
    pub gadgets: Vec<GadgetHandles>,
    /// `(upper, lower)` pairs whose values are entrywise conjugates.
    pub mirror_pairs: Vec<(FactorId, FactorId)>,
}

impl MirrorGraph {
    /// Outcome variables `Y_1..Y_n` in measurement order.
    pub fn outcomes(&self) -> Vec<VariableId> {
        self.gadgets.iter().map(|g| g.outcome).collect()
    }

    /// Factors strictly left of measurement `k` (0-based).
    pub fn box_before(&self, k: usize) -> Vec<FactorId> {
        self.graph.factor_ids().take(self.gadgets[k].factors_before).collect()
    }

    /// Factors up to and including measurement `k` (0-based).
    pub fn box_through(&self, k: usize) -> Vec<FactorId> {
        self.graph.factor_ids().take(self.gadgets[k].factors_through).collect()
    }

    /// Largest `|upper - conj(lower)|` over all mirror pairs.
    pub fn mirror_asymmetry(&self) -> f64 {
        self.mirror_pairs
            .iter()
            .map(|&(u, l)| {
                let upper = self.graph.factor(u).expect("pair refers to graph");
                let lower = self.graph.factor(l).expect("pair refers to graph");
                upper
                    .values()
                    .iter()
                    .zip(lower.values())
                    .map(|(a, b)| (a - b.conj()).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Incremental two-rail builder. Call a start method, then any sequence of
/// `unitary` and `measurement`, then `terminate`.
#[derive(Debug)]
pub struct MirrorBuilder {
    dimension: usize,
    graph: FactorGraph,
    rails: Option<(VariableId, VariableId)>,
    gadgets: Vec<GadgetHandles>,
    mirror_pairs: Vec<(FactorId, FactorId)>,
}

impl MirrorBuilder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, graph: FactorGraph::default(), rails: None, gadgets: Vec::new(), mirror_pairs: Vec::new() }
    }

    fn rail_pair(&mut self) -> BuildResult<(VariableId, VariableId)> {
        Ok((self.graph.add_variable(self.dimension)?, self.graph.add_variable(self.dimension)?))
    }

    fn current(&self) -> BuildResult<(VariableId, VariableId)> {
        self.rails.ok_or(BuildError::Order("no initial state"))
    }

    /// Starts from `X_0`: a pmf or known-state indicator fanned out to both
    /// rails by a three-way equality node, or a pure vector and its conjugate.
    pub fn initial(mut self, state: &InitialState) -> BuildResult<Self> {
        if self.rails.is_some() {
            return Err(BuildError::Order("initial state given twice"));
        }
        match state {
            InitialState::BasisState(x0) => {
                let x = self.graph.add_variable(self.dimension)?;
                self.graph.add_indicator(x, *x0)?;
                let (u, l) = self.rail_pair()?;
                self.graph.add_equality(&[x, u, l])?;
                self.rails = Some((u, l));
            }
            InitialState::BasisPmf(p) => {
                let x = self.graph.add_variable(self.dimension)?;
                self.graph.add_factor(&[x], p.iter().map(|&v| Complex64::new(v, 0.0)).collect())?;
                let (u, l) = self.rail_pair()?;
                self.graph.add_equality(&[x, u, l])?;
                self.rails = Some((u, l));
            }
            InitialState::PureVector(psi) => {
                let (u, l) = self.rail_pair()?;
                let fu = self.graph.add_factor(&[u], psi.clone())?;
                let fl = self.graph.add_factor(&[l], psi.iter().map(|z| z.conj()).collect())?;
                self.mirror_pairs.push((fu, fl));
                self.rails = Some((u, l));
            }
        }
        Ok(self)
    }

    /// Starts from a density matrix `rho(x, x')` bridging the rails.
    pub fn density(mut self, rho: &Matrix) -> BuildResult<Self> {
        if self.rails.is_some() {
            return Err(BuildError::Order("initial state given twice"));
        }
        let (u, l) = self.rail_pair()?;
        self.graph.add_factor(&[u, l], rho.as_slice().to_vec())?;
        self.rails = Some((u, l));
        Ok(self)
    }

    /// Starts from a bare pair of rails; they stay half edges of the graph.
    pub fn open(mut self) -> BuildResult<Self> {
        if self.rails.is_some() {
            return Err(BuildError::Order("initial state given twice"));
        }
        self.rails = Some(self.rail_pair()?);
        Ok(self)
    }

    /// Current `(upper, lower)` rail variables.
    pub fn rails(&self) -> Option<(VariableId, VariableId)> {
        self.rails
    }

    /// Returns the graph without joining the rails, so they remain half edges.
    pub fn finish_open(self) -> (FactorGraph, Vec<GadgetHandles>) {
        (self.graph, self.gadgets)
    }

    /// Applies `U` on the upper rail and `conj(U)` on the lower rail.
    pub fn unitary(mut self, u: &Matrix) -> BuildResult<Self> {
        let (pu, pl) = self.current()?;
        let (nu, nl) = self.rail_pair()?;
        let fu = self.graph.add_factor(&[nu, pu], u.as_slice().to_vec())?;
        let fl = self.graph.add_factor(&[nl, pl], u.conj().into_vec())?;
        self.mirror_pairs.push((fu, fl));
        self.rails = Some((nu, nl));
        Ok(self)
    }

    /// Adds the measurement gadget. Projections enter through their Kraus
    /// form `B(y) B(y)^H`.
    pub fn measurement(mut self, m: &Measurement, obs: Observation) -> BuildResult<Self> {
        let stage = self.gadgets.len() + 1;
        let outcomes = m.outcome_count();
        if let Observation::Clamp(v) = obs {
            if v >= outcomes {
                return Err(BuildError::InvalidObservation { stage, value: v, alphabet: outcomes });
            }
        }
        let (xu, xl) = self.current()?;
        let factors_before = self.graph.factor_count();
        let (tu, tl) = self.rail_pair()?;
        let yu = self.graph.add_variable(outcomes)?;
        let yl = self.graph.add_variable(outcomes)?;
        let y = self.graph.add_variable(outcomes)?;

        let kraus = m.kraus_operators();
        let d = self.dimension;
        let mut upper = Vec::with_capacity(d * d * outcomes);
        for row in 0..d {
            for col in 0..d {
                for a in &kraus {
                    upper.push(a[(row, col)]);
                }
            }
        }
        let lower = upper.iter().map(|z| z.conj()).collect();
        let fu = self.graph.add_factor(&[tu, xu, yu], upper)?;
        let fl = self.graph.add_factor(&[tl, xl, yl], lower)?;
        self.mirror_pairs.push((fu, fl));
        self.graph.add_equality(&[yu, yl, y])?;
        match obs {
            Observation::Free => {}
            Observation::Clamp(v) => {
                self.graph.add_indicator(y, v)?;
            }
            Observation::SumOut => {
                self.graph.add_marginalizer(y)?;
            }
        }
        self.gadgets.push(GadgetHandles {
            before: (xu, xl),
            after: (tu, tl),
            outcome: y,
            factors_before,
            factors_through: self.graph.factor_count(),
        });
        self.rails = Some((tu, tl));
        Ok(self)
    }

    /// Closes the rails with an equality node.
    pub fn terminate(mut self) -> BuildResult<MirrorGraph> {
        let (u, l) = self.current()?;
        self.graph.add_equality(&[u, l])?;
        Ok(MirrorGraph { graph: self.graph, gadgets: self.gadgets, mirror_pairs: self.mirror_pairs })
    }
}

/// Builds the full mirror graph of `model`, one observation slot per measurement.
pub fn build_mirror_graph(model: &QuantumModel, observed: &[Observation]) -> BuildResult<MirrorGraph> {
    if observed.len() != model.len() {
        return Err(BuildError::ObservationLength { expected: model.len(), found: observed.len() });
    }
    let mut b = MirrorBuilder::new(model.dimension()).initial(model.initial())?;
    for (stage, &obs) in model.stages().iter().zip(observed) {
        b = b.unitary(&stage.unitary)?.measurement(&stage.measurement, obs)?;
    }
    b.terminate()
}

#[derive(Debug, Clone)]
pub struct HmmGraph {
    pub graph: FactorGraph,
    pub outcomes: Vec<VariableId>,
}

/// Chain graph `p(x0) prod_k p(y_k, x_k | x_{k-1})` over the first `steps`
/// kernels. The last state is summed out, so the external function is
/// `p(y_1, ..., y_n)`.
pub fn build_hmm_graph(hmm: &HmmModel, steps: usize) -> BuildResult<HmmGraph> {
    if steps == 0 || steps > hmm.len() {
        return Err(ModelError::TooFewKernels { available: hmm.len(), requested: steps }.into());
    }
    let mut g = FactorGraph::default();
    let mut x = g.add_variable(hmm.initial().len())?;
    g.add_factor(&[x], hmm.initial().iter().map(|&p| Complex64::new(p, 0.0)).collect())?;
    let mut outcomes = Vec::with_capacity(steps);
    for kernel in &hmm.kernels()[..steps] {
        let y = g.add_variable(kernel.outcomes())?;
        let next = g.add_variable(kernel.states_out())?;
        g.add_factor(&[x, y, next], kernel.values().iter().map(|&p| Complex64::new(p, 0.0)).collect())?;
        outcomes.push(y);
        x = next;
    }
    g.add_marginalizer(x)?;
    Ok(HmmGraph { graph: g, outcomes })
}

/// Observation slots with every outcome left free.
pub fn all_free(n: usize) -> Vec<Observation> {
    vec![Observation::Free; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HmmKernel, Stage};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn hadamard() -> Matrix {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]]).unwrap()
    }

    fn phase_basis() -> Matrix {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_rows(&[vec![c(s, 0.0), c(0.0, s)], vec![c(0.0, s), c(s, 0.0)]]).unwrap()
    }

    fn two_stage(initial: InitialState) -> QuantumModel {
        QuantumModel::new(
            2,
            initial,
            vec![
                Stage { unitary: hadamard(), measurement: Measurement::Projection { basis: phase_basis() } },
                Stage { unitary: phase_basis(), measurement: Measurement::Projection { basis: Matrix::identity(2) } },
            ],
        )
        .unwrap()
    }

    #[test]
    fn two_measurement_layout() {
        let mg = build_mirror_graph(&two_stage(InitialState::BasisState(0)), &all_free(2)).unwrap();
        assert_eq!(mg.gadgets.len(), 2);
        assert_eq!(mg.graph.half_edges(), mg.outcomes());
        // indicator + fan-out, then per stage U, U*, A, A*, and the outcome equality, then the terminal node.
        assert_eq!(mg.graph.factor_count(), 2 + 2 * 5 + 1);
        let last = mg.graph.factor(mg.graph.factor_ids().last().unwrap()).unwrap();
        assert_eq!(last.scope(), &[mg.gadgets[1].after.0, mg.gadgets[1].after.1]);
        assert_eq!(mg.mirror_asymmetry(), 0.0);
        mg.graph.check().unwrap();
    }

    #[test]
    fn single_projection_matches_born_rule() {
        let model = QuantumModel::new(
            2,
            InitialState::BasisState(1),
            vec![Stage { unitary: hadamard(), measurement: Measurement::Projection { basis: phase_basis() } }],
        )
        .unwrap();
        let mg = build_mirror_graph(&model, &all_free(1)).unwrap();
        let f = mg.graph.external_function().unwrap();
        let psi = hadamard().column(1);
        let b = phase_basis();
        for y in 0..2 {
            let amp = crate::linalg::inner(&b.column(y), &psi);
            assert!((f.get(&[y]) - c(amp.norm_sqr(), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn classical_readout_of_diagonal_state() {
        let p = vec![0.2, 0.3, 0.5];
        let model = QuantumModel::new(
            3,
            InitialState::BasisPmf(p.clone()),
            vec![Stage { unitary: Matrix::identity(3), measurement: Measurement::Projection { basis: Matrix::identity(3) } }],
        )
        .unwrap();
        let f = build_mirror_graph(&model, &all_free(1)).unwrap().graph.external_function().unwrap();
        for (y, &py) in p.iter().enumerate() {
            assert_eq!(f.get(&[y]), c(py, 0.0));
        }
    }

    #[test]
    fn pure_basis_vector_coincides_with_known_state() {
        let known = build_mirror_graph(&two_stage(InitialState::BasisState(1)), &all_free(2)).unwrap();
        let pure = build_mirror_graph(&two_stage(InitialState::PureVector(vec![c(0.0, 0.0), c(1.0, 0.0)])), &all_free(2)).unwrap();
        let a = known.graph.external_function().unwrap();
        let b = pure.graph.external_function().unwrap();
        assert_eq!(a.dims(), b.dims());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn invalid_observations() {
        let model = two_stage(InitialState::BasisState(0));
        assert_eq!(
            build_mirror_graph(&model, &[Observation::Clamp(2), Observation::Free]).unwrap_err(),
            BuildError::InvalidObservation { stage: 1, value: 2, alphabet: 2 }
        );
        assert!(matches!(build_mirror_graph(&model, &all_free(1)), Err(BuildError::ObservationLength { .. })));
    }

    #[test]
    fn deterministic_hmm_is_a_point_mass() {
        // Two states that swap every step; the emission reveals the new state.
        let mut vals = vec![0.0; 8];
        for x in 0..2 {
            let next = 1 - x;
            vals[(x * 2 + next) * 2 + next] = 1.0;
        }
        let k = HmmKernel::new(2, 2, 2, vals).unwrap();
        let h = HmmModel::new(vec![1.0, 0.0], vec![k.clone(), k.clone(), k]).unwrap();
        let hg = build_hmm_graph(&h, 3).unwrap();
        let f = hg.graph.external_function().unwrap();
        for y1 in 0..2 {
            for y2 in 0..2 {
                for y3 in 0..2 {
                    let expected = if (y1, y2, y3) == (1, 0, 1) { 1.0 } else { 0.0 };
                    assert_eq!(f.get(&[y1, y2, y3]), c(expected, 0.0));
                }
            }
        }
        assert!(build_hmm_graph(&h, 4).is_err());
    }

    #[test]
    fn single_step_hmm_marginal() {
        let vals: Vec<f64> = (0..12).map(|i| (i + 1) as f64).collect();
        let raw = HmmKernel::new(2, 3, 2, vals.clone()).unwrap();
        let h = HmmModel::new(vec![1.0, 0.0], vec![raw.clone()]).unwrap();
        let f = build_hmm_graph(&h, 1).unwrap().graph.external_function().unwrap();
        for y in 0..3 {
            let expected = raw.get(0, y, 0) + raw.get(0, y, 1);
            assert_eq!(f.get(&[y]), c(expected, 0.0));
        }
    }
}
