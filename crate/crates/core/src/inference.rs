//! Probabilistic queries answered by contracting mirror graphs.
//!
//! Unobserved measurements to the right of everything a query asks about are
//! dropped from the graph and the rails are joined by an equality node: with
//! its outcome summed out, a complete measurement gadget closes to the
//! identity, so the truncated graph has the same external function. Setting
//! [`InferenceOptions::full_contraction`] keeps those gadgets and sums their
//! outcomes numerically instead.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

pub use crate::distribution::{empirical_distribution, OutcomeDistribution, Trajectory};
use crate::linalg::Matrix;
use crate::mirror::{self, BuildError, MirrorBuilder, MirrorGraph, Observation};
use crate::model::{Measurement, QuantumModel};
use crate::tensor::{ContractionOptions, Factor, TensorError, VariableId};

/// Default ceiling on the number of outcome tuples a query may enumerate.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Prefix probabilities at or below this are treated as zero.
pub const ZERO_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("observed prefix has probability {probability:e}, conditioning is undefined")]
    ZeroProbabilityPrefix { probability: f64 },
    #[error("query enumerates {tuples} outcome tuples, above the cap of {cap}")]
    ResourceLimit { tuples: usize, cap: usize },
    #[error("measurement {requested} requested but the model has {stages}")]
    StageOutOfRange { requested: usize, stages: usize },
}

pub type InferenceResult<T> = Result<T, InferenceError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub contraction: ContractionOptions,
    pub enumeration_cap: usize,
    /// Contract future measurements numerically instead of dropping them.
    pub full_contraction: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self { contraction: ContractionOptions::default(), enumeration_cap: DEFAULT_ENUMERATION_CAP, full_contraction: false }
    }
}

/// A trace-normalized density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityDiagnostics {
    pub hermiticity: f64,
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl DensityDiagnostics {
    /// Hermitian within 1e-10, eigenvalues >= -1e-9 and trace 1 within 1e-9.
    pub fn is_valid(&self) -> bool {
        self.hermiticity <= 1e-10 && self.min_eigenvalue >= -1e-9 && self.trace_deviation <= 1e-9
    }
}

impl DensityMatrix {
    /// Divides by the trace; `None` when the trace is at most [`ZERO_PROBABILITY`].
    pub fn normalized(m: Matrix) -> Option<Self> {
        let tr = m.trace().re;
        (tr > ZERO_PROBABILITY).then(|| Self(m.scale(Complex64::new(1.0 / tr, 0.0))))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diagnostics(&self) -> DensityDiagnostics {
        let eig = self.0.hermitian_eigenvalues();
        DensityDiagnostics {
            hermiticity: self.0.hermiticity_deviation(),
            trace_deviation: (self.0.trace() - Complex64::new(1.0, 0.0)).norm(),
            min_eigenvalue: eig.first().copied().unwrap_or(0.0),
            max_eigenvalue: eig.last().copied().unwrap_or(0.0),
        }
    }
}

/// Distribution of one outcome given observations of others.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    /// `P(Y_k = y | observations)` for each `y`.
    pub probabilities: Vec<f64>,
    /// Probability of the observations themselves.
    pub evidence: f64,
    /// True when the observation pattern is not a plain prefix `y_1..y_{k-1}`.
    pub non_prefix_evidence: bool,
}

/// Builds the graph for `observed`, leaving out trailing measurements that are
/// summed out unless `full_contraction` is set.
fn query_graph(model: &QuantumModel, observed: &[Observation], opts: &InferenceOptions) -> InferenceResult<MirrorGraph> {
    let keep = if opts.full_contraction {
        model.len()
    } else {
        observed.iter().rposition(|o| *o != Observation::SumOut).map_or(1, |i| i + 1)
    };
    let truncated = model.truncated(keep);
    Ok(mirror::build_mirror_graph(&truncated, &observed[..keep])?)
}

fn distribution_from_factor(f: &Factor) -> OutcomeDistribution {
    let probabilities = f.values().iter().map(|z| z.re).collect();
    let max_imaginary = f.values().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    OutcomeDistribution::new(f.dims().to_vec(), probabilities).with_max_imaginary(max_imaginary)
}

fn check_cap(alphabets: &[usize], opts: &InferenceOptions) -> InferenceResult<()> {
    let tuples = alphabets.iter().try_fold(1usize, |acc, &a| acc.checked_mul(a)).unwrap_or(usize::MAX);
    if tuples > opts.enumeration_cap {
        return Err(InferenceError::ResourceLimit { tuples, cap: opts.enumeration_cap });
    }
    Ok(())
}

/// External function of the mirror graph under `observed`, as a distribution
/// over the free outcomes in measurement order.
pub fn observed_function(model: &QuantumModel, observed: &[Observation], opts: &InferenceOptions) -> InferenceResult<OutcomeDistribution> {
    if observed.len() != model.len() {
        return Err(BuildError::ObservationLength { expected: model.len(), found: observed.len() }.into());
    }
    let alphabets = model.outcome_alphabets();
    let free: Vec<usize> = (0..model.len()).filter(|&k| observed[k] == Observation::Free).map(|k| alphabets[k]).collect();
    check_cap(&free, opts)?;
    let mg = query_graph(model, observed, opts)?;
    let order: Vec<VariableId> =
        mg.gadgets.iter().zip(observed).filter(|(_, o)| **o == Observation::Free).map(|(g, _)| g.outcome).collect();
    let f = mg.graph.external_function_with(&opts.contraction)?.permuted(&order)?;
    Ok(distribution_from_factor(&f))
}

/// `p(y_1, ..., y_n)` from the external function with every outcome free.
pub fn joint_distribution(model: &QuantumModel, opts: &InferenceOptions) -> InferenceResult<OutcomeDistribution> {
    observed_function(model, &mirror::all_free(model.len()), opts)
}

/// `P(Y_k = y | Y_1..Y_{k-1} = prefix)` with `k = prefix.len() + 1`.
pub fn conditional_distribution(model: &QuantumModel, prefix: &[usize], opts: &InferenceOptions) -> InferenceResult<Conditional> {
    let k = prefix.len();
    if k >= model.len() {
        return Err(InferenceError::StageOutOfRange { requested: k + 1, stages: model.len() });
    }
    let mut observed: Vec<Option<usize>> = prefix.iter().copied().map(Some).collect();
    observed.resize(model.len(), None);
    conditional_given(model, &observed, k, opts)
}

/// Distribution of measurement `target` (0-based) given any pattern of
/// observed outcomes. Unobserved measurements other than the target are
/// summed out. Ignores `observed[target]`.
pub fn conditional_given(
    model: &QuantumModel,
    observed: &[Option<usize>],
    target: usize,
    opts: &InferenceOptions,
) -> InferenceResult<Conditional> {
    if target >= model.len() {
        return Err(InferenceError::StageOutOfRange { requested: target + 1, stages: model.len() });
    }
    if observed.len() != model.len() {
        return Err(BuildError::ObservationLength { expected: model.len(), found: observed.len() }.into());
    }
    let slots: Vec<Observation> = observed
        .iter()
        .enumerate()
        .map(|(k, o)| match (k == target, o) {
            (true, _) => Observation::Free,
            (false, Some(y)) => Observation::Clamp(*y),
            (false, None) => Observation::SumOut,
        })
        .collect();
    let non_prefix_evidence = observed.iter().enumerate().any(|(k, o)| (k < target && o.is_none()) || (k > target && o.is_some()));
    let unnormalized = observed_function(model, &slots, opts)?;
    let evidence = unnormalized.total();
    if !(evidence > ZERO_PROBABILITY) {
        return Err(InferenceError::ZeroProbabilityPrefix { probability: evidence });
    }
    Ok(Conditional {
        probabilities: unnormalized.probabilities().iter().map(|p| p / evidence).collect(),
        evidence,
        non_prefix_evidence,
    })
}

fn prefix_graph(model: &QuantumModel, prefix: &[usize], through: usize, opts: &InferenceOptions) -> InferenceResult<MirrorGraph> {
    let mut observed: Vec<Observation> = prefix.iter().map(|&y| Observation::Clamp(y)).collect();
    observed.resize(model.len(), Observation::SumOut);
    if !opts.full_contraction {
        let keep = through + 1;
        return Ok(mirror::build_mirror_graph(&model.truncated(keep), &observed[..keep])?);
    }
    Ok(mirror::build_mirror_graph(model, &observed)?)
}

fn closed_density(mg: &MirrorGraph, members: &[crate::tensor::FactorId], rails: (VariableId, VariableId), opts: &InferenceOptions) -> InferenceResult<DensityMatrix> {
    let raw = mg.graph.close_box_with(members, &opts.contraction)?.to_matrix(rails.0, rails.1)?;
    let probability = raw.trace().re;
    DensityMatrix::normalized(raw).ok_or(InferenceError::ZeroProbabilityPrefix { probability })
}

/// `rho_k` with `k = prefix.len() + 1`: the closed box of everything left of
/// measurement `k`, prefix clamped, normalized to trace 1.
pub fn density_before(model: &QuantumModel, prefix: &[usize], opts: &InferenceOptions) -> InferenceResult<DensityMatrix> {
    let k = prefix.len();
    if k >= model.len() {
        return Err(InferenceError::StageOutOfRange { requested: k + 1, stages: model.len() });
    }
    let mg = prefix_graph(model, prefix, k, opts)?;
    closed_density(&mg, &mg.box_before(k), mg.gadgets[k].before, opts)
}

/// `rho~_k` with `k = prefix.len()`: the closed box through measurement `k`
/// with `Y_k` clamped to the last prefix entry, normalized to trace 1.
pub fn density_after(model: &QuantumModel, prefix: &[usize], opts: &InferenceOptions) -> InferenceResult<DensityMatrix> {
    let k = prefix.len();
    if k == 0 || k > model.len() {
        return Err(InferenceError::StageOutOfRange { requested: k, stages: model.len() });
    }
    let mg = prefix_graph(model, prefix, k - 1, opts)?;
    closed_density(&mg, &mg.box_through(k - 1), mg.gadgets[k - 1].after, opts)
}

/// Closes a measurement gadget (optionally preceded by a unitary) with its
/// outcome summed out and its output rails joined, then returns the largest
/// entrywise deviation from the two-variable equality constraint.
pub fn backward_reduction_deviation(
    dimension: usize,
    preceding: Option<&Matrix>,
    measurement: &Measurement,
    opts: &InferenceOptions,
) -> InferenceResult<f64> {
    let mut b = MirrorBuilder::new(dimension).open()?;
    let entry = b.rails().expect("open builder has rails");
    if let Some(u) = preceding {
        b = b.unitary(u)?;
    }
    let mg = b.measurement(measurement, Observation::SumOut)?.terminate()?;
    let closed = mg.graph.external_function_with(&opts.contraction)?.to_matrix(entry.0, entry.1)?;
    Ok(closed.max_abs_diff(&Matrix::identity(dimension)))
}

struct PrefixNode {
    /// `rho_k` for the measurement following this prefix.
    rho: Matrix,
    probabilities: Vec<f64>,
}

/// Memo of prefix states shared by trajectories drawn from one sampler.
#[derive(Default)]
pub struct SamplerCache {
    nodes: BTreeMap<Vec<usize>, PrefixNode>,
}

impl SamplerCache {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Ancestral sampler over measurement outcomes.
///
/// Trajectory `i` under seed `s` draws from ChaCha20 seeded with
/// `seed_from_u64(s)` on stream `i`. Each draw takes one `next_u64`, keeps
/// the top 53 bits as a uniform `u` in `[0, 1)`, and returns the first
/// outcome whose cumulative conditional probability exceeds `u`. Output is
/// identical on every platform and independent of how trajectories are split
/// across threads.
pub struct TrajectorySampler<'a> {
    model: &'a QuantumModel,
    opts: InferenceOptions,
    root: Matrix,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(model: &'a QuantumModel, opts: InferenceOptions) -> InferenceResult<Self> {
        let root = density_before(model, &[], &opts)?.into_matrix();
        Ok(Self { model, opts, root })
    }

    fn distribution_for(&self, rho: &Matrix, k: usize) -> InferenceResult<Vec<f64>> {
        let mg = MirrorBuilder::new(self.model.dimension())
            .density(rho)?
            .measurement(&self.model.stages()[k].measurement, Observation::Free)?
            .terminate()?;
        let f = mg.graph.external_function_with(&self.opts.contraction)?;
        let probs: Vec<f64> = f.values().iter().map(|z| z.re.max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        Ok(probs.into_iter().map(|p| p / total).collect())
    }

    /// `rho_{k+1}` from `rho_k` after observing `y` at measurement `k`.
    fn next_state(&self, rho: &Matrix, k: usize, y: usize) -> InferenceResult<Matrix> {
        let stage = &self.model.stages()[k];
        let mg = MirrorBuilder::new(self.model.dimension())
            .density(rho)?
            .measurement(&stage.measurement, Observation::Clamp(y))?
            .terminate()?;
        let post = closed_density(&mg, &mg.box_through(0), mg.gadgets[0].after, &self.opts)?;
        let next = &self.model.stages()[k + 1].unitary;
        let b = MirrorBuilder::new(self.model.dimension()).density(post.matrix())?.unitary(next)?;
        let rails = b.rails().expect("rails exist after a unitary");
        let (graph, _) = b.finish_open();
        let evolved = graph.external_function_with(&self.opts.contraction)?.to_matrix(rails.0, rails.1)?;
        Ok(evolved)
    }

    fn node<'c>(&self, prefix: &[usize], cache: &'c mut SamplerCache) -> InferenceResult<&'c PrefixNode> {
        if !cache.nodes.contains_key(prefix) {
            let rho = match prefix.split_last() {
                None => self.root.clone(),
                Some((&y, parent)) => {
                    let parent_rho = self.node(parent, cache)?.rho.clone();
                    self.next_state(&parent_rho, parent.len(), y)?
                }
            };
            let probabilities = self.distribution_for(&rho, prefix.len())?;
            cache.nodes.insert(prefix.to_vec(), PrefixNode { rho, probabilities });
        }
        Ok(&cache.nodes[prefix])
    }

    /// Draws trajectory number `index` for `seed`.
    pub fn trajectory(&self, seed: u64, index: u64, cache: &mut SamplerCache) -> InferenceResult<Trajectory> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut outcomes = Vec::with_capacity(self.model.len());
        let mut probability = 1.0;
        for _ in 0..self.model.len() {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let probs = &self.node(&outcomes, cache)?.probabilities;
            let y = pick(probs, u);
            probability *= probs[y];
            outcomes.push(y);
        }
        Ok(Trajectory { outcomes, probability })
    }
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (y, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return y;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws `count` trajectories, numbered `0..count`, for `seed`.
pub fn sample_trajectories(model: &QuantumModel, count: usize, seed: u64, opts: &InferenceOptions) -> InferenceResult<Vec<Trajectory>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let sampler = TrajectorySampler::new(model, *opts)?;
    let mut cache = SamplerCache::default();
    (0..count as u64).map(|i| sampler.trajectory(seed, i, &mut cache)).collect()
}
