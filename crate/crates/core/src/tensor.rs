//! Complex-valued Forney factor graphs over finite alphabets.
//!
//! Edges are variables and boxes are factors. Every variable touches at most
//! two factor slots: a variable with one slot is a half edge, and a variable
//! with none is rejected when the graph is evaluated. Branching is done with
//! explicit equality factors.
//!
//! Closing a box multiplies the factors inside it and sums over the variables
//! whose two slots both lie inside. The external function of a graph is the
//! closed box of all factors and is a function of the half edges only.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{Matrix, ONE, ZERO};

/// Default ceiling on the element count of any intermediate tensor.
pub const DEFAULT_ELEMENT_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("variable {variable} has alphabet size 0")]
    InvalidAlphabet { variable: usize },
    #[error("unknown variable {0}")]
    UnknownVariable(VariableId),
    #[error("unknown factor {0}")]
    UnknownFactor(FactorId),
    #[error("variable {0} appears twice in one scope")]
    DuplicateVariable(VariableId),
    #[error("factor {0} listed twice in one box")]
    DuplicateFactor(FactorId),
    #[error("variable {0} would be attached to more than two factor slots")]
    DegreeViolation(VariableId),
    #[error("factor values have length {found}, scope requires {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("factor contains a non-finite entry")]
    NonFinite,
    #[error("box contains no factors")]
    EmptyBox,
    #[error("equality factor needs arity >= 1 and alphabet size >= 1")]
    InvalidArity,
    #[error("variable {0} is not attached to any factor")]
    DanglingVariable(VariableId),
    #[error("matrix dimensions do not agree")]
    DimensionMismatch,
    #[error("intermediate tensor of {elements} elements exceeds the cap of {cap}")]
    ResourceLimit { elements: usize, cap: usize },
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Handle of a variable (edge) within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId(usize);

impl VariableId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Handle of a factor (node) within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorId(usize);

impl FactorId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// A dense complex array bound to an ordered scope of variables.
///
/// Values are row-major in scope order: the last variable varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<VariableId>,
    dims: Vec<usize>,
    values: Vec<Complex64>,
}

impl Factor {
    pub fn new(scope: Vec<VariableId>, dims: Vec<usize>, values: Vec<Complex64>) -> TensorResult<Self> {
        assert_eq!(scope.len(), dims.len(), "one dimension per scope variable");
        for (i, v) in scope.iter().enumerate() {
            if scope[..i].contains(v) {
                return Err(TensorError::DuplicateVariable(*v));
            }
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(TensorError::ShapeMismatch { expected, found: values.len() });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { scope, dims, values })
    }

    pub fn scalar(value: Complex64) -> Self {
        Self { scope: Vec::new(), dims: Vec::new(), values: vec![value] }
    }

    pub fn scope(&self) -> &[VariableId] {
        &self.scope
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The single value of a factor with empty scope.
    pub fn as_scalar(&self) -> Option<Complex64> {
        self.scope.is_empty().then(|| self.values[0])
    }

    /// Looks up the value at one index per scope variable.
    pub fn get(&self, index: &[usize]) -> Complex64 {
        assert_eq!(index.len(), self.dims.len(), "index rank must match scope");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "factor index out of range");
            flat = flat * d + i;
        }
        self.values[flat]
    }

    /// Entrywise complex conjugate over the same scope.
    pub fn conj(&self) -> Self {
        Self { scope: self.scope.clone(), dims: self.dims.clone(), values: self.values.iter().map(|z| z.conj()).collect() }
    }

    /// Reorders the axes to follow `order`, which must be a permutation of the scope.
    pub fn permuted(&self, order: &[VariableId]) -> TensorResult<Self> {
        if order == self.scope.as_slice() {
            return Ok(self.clone());
        }
        let axes: Vec<usize> = order
            .iter()
            .map(|v| self.scope.iter().position(|s| s == v).ok_or(TensorError::UnknownVariable(*v)))
            .collect::<TensorResult<_>>()?;
        if axes.len() != self.scope.len() {
            return Err(TensorError::ShapeMismatch { expected: self.scope.len(), found: axes.len() });
        }
        let strides = row_major_strides(&self.dims);
        let new_dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let new_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let mut values = Vec::with_capacity(self.values.len());
        for_each_offset(&new_dims, &new_strides, |off| values.push(self.values[off]));
        Ok(Self { scope: order.to_vec(), dims: new_dims, values })
    }

    /// Largest entrywise modulus difference after aligning `other` to this scope.
    pub fn max_abs_diff(&self, other: &Factor) -> f64 {
        match other.permuted(&self.scope) {
            Ok(o) if o.dims == self.dims => {
                self.values.iter().zip(&o.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
            }
            _ => f64::INFINITY,
        }
    }

    /// Reads a two-variable factor as a matrix with `row` indexing rows.
    pub fn to_matrix(&self, row: VariableId, col: VariableId) -> TensorResult<Matrix> {
        let f = self.permuted(&[row, col])?;
        Ok(Matrix::from_row_major(f.dims[0], f.dims[1], f.values).expect("dims match values"))
    }
}

/// Values of the equality constraint: 1 where all indices agree, 0 elsewhere.
pub fn equality_values(arity: usize, alphabet_size: usize) -> TensorResult<Vec<Complex64>> {
    if arity == 0 || alphabet_size == 0 {
        return Err(TensorError::InvalidArity);
    }
    let len = alphabet_size.checked_pow(arity as u32).ok_or(TensorError::ResourceLimit { elements: usize::MAX, cap: DEFAULT_ELEMENT_CAP })?;
    let mut values = vec![ZERO; len];
    // The all-equal index (i, i, ..., i) sits at i * (1 + d + d^2 + ...).
    let step: usize = (0..arity).map(|k| alphabet_size.pow(k as u32)).sum();
    for i in 0..alphabet_size {
        values[i * step] = ONE;
    }
    Ok(values)
}

/// Equality factor over `scope`, each variable with `alphabet_size` values.
pub fn equality_factor(scope: Vec<VariableId>, alphabet_size: usize) -> TensorResult<Factor> {
    let values = equality_values(scope.len(), alphabet_size)?;
    let dims = vec![alphabet_size; scope.len()];
    Factor::new(scope, dims, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContractionStrategy {
    /// Pairwise greedy: always merge the pair with the smallest result,
    /// preferring pairs that share a variable.
    #[default]
    Greedy,
    /// Fold the factors left to right in box order.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionOptions {
    pub strategy: ContractionStrategy,
    pub element_cap: usize,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self { strategy: ContractionStrategy::Greedy, element_cap: DEFAULT_ELEMENT_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub factor: FactorId,
    pub position: usize,
}

/// A Forney factor graph. Graphs only grow; factors are never removed.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    alphabets: Vec<usize>,
    factors: Vec<Factor>,
    incidence: Vec<Vec<Slot>>,
}

impl FactorGraph {
    /// Declares one variable per entry of `alphabets`, with no factors.
    pub fn new(alphabets: &[usize]) -> TensorResult<Self> {
        let mut g = Self::default();
        for &a in alphabets {
            g.add_variable(a)?;
        }
        Ok(g)
    }

    pub fn add_variable(&mut self, alphabet_size: usize) -> TensorResult<VariableId> {
        if alphabet_size == 0 {
            return Err(TensorError::InvalidAlphabet { variable: self.alphabets.len() });
        }
        self.alphabets.push(alphabet_size);
        self.incidence.push(Vec::new());
        Ok(VariableId(self.alphabets.len() - 1))
    }

    pub fn variable_count(&self) -> usize {
        self.alphabets.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = VariableId> + '_ {
        (0..self.alphabets.len()).map(VariableId)
    }

    pub fn alphabet_size(&self, v: VariableId) -> TensorResult<usize> {
        self.alphabets.get(v.0).copied().ok_or(TensorError::UnknownVariable(v))
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_ids(&self) -> impl Iterator<Item = FactorId> + '_ {
        (0..self.factors.len()).map(FactorId)
    }

    pub fn factor(&self, id: FactorId) -> TensorResult<&Factor> {
        self.factors.get(id.0).ok_or(TensorError::UnknownFactor(id))
    }

    pub fn incidence(&self, v: VariableId) -> TensorResult<&[Slot]> {
        self.incidence.get(v.0).map(Vec::as_slice).ok_or(TensorError::UnknownVariable(v))
    }

    /// Variables attached to exactly one slot, in id order.
    pub fn half_edges(&self) -> Vec<VariableId> {
        self.variables().filter(|v| self.incidence[v.0].len() == 1).collect()
    }

    /// Attaches a factor with row-major `values` over `scope`.
    pub fn add_factor(&mut self, scope: &[VariableId], values: Vec<Complex64>) -> TensorResult<FactorId> {
        let dims = scope.iter().map(|&v| self.alphabet_size(v)).collect::<TensorResult<Vec<_>>>()?;
        let factor = Factor::new(scope.to_vec(), dims, values)?;
        self.insert(factor)
    }

    /// Attaches an already-built factor; its dims must match the declared alphabets.
    pub fn insert(&mut self, factor: Factor) -> TensorResult<FactorId> {
        for (&v, &d) in factor.scope.iter().zip(&factor.dims) {
            let a = self.alphabet_size(v)?;
            if a != d {
                return Err(TensorError::ShapeMismatch { expected: a, found: d });
            }
            if self.incidence[v.0].len() >= 2 {
                return Err(TensorError::DegreeViolation(v));
            }
        }
        let id = FactorId(self.factors.len());
        for (position, &v) in factor.scope.iter().enumerate() {
            self.incidence[v.0].push(Slot { factor: id, position });
        }
        self.factors.push(factor);
        Ok(id)
    }

    /// Attaches an equality constraint tying all of `scope` together.
    pub fn add_equality(&mut self, scope: &[VariableId]) -> TensorResult<FactorId> {
        let size = match scope.first() {
            Some(&v) => self.alphabet_size(v)?,
            None => return Err(TensorError::InvalidArity),
        };
        for &v in scope {
            if self.alphabet_size(v)? != size {
                return Err(TensorError::ShapeMismatch { expected: size, found: self.alphabets[v.0] });
            }
        }
        self.insert(equality_factor(scope.to_vec(), size)?)
    }

    /// Clamps `v` to `value` with a unary indicator factor.
    pub fn add_indicator(&mut self, v: VariableId, value: usize) -> TensorResult<FactorId> {
        let size = self.alphabet_size(v)?;
        if value >= size {
            return Err(TensorError::ShapeMismatch { expected: size, found: value + 1 });
        }
        let mut values = vec![ZERO; size];
        values[value] = ONE;
        self.add_factor(&[v], values)
    }

    /// Sums `v` out by attaching an all-ones unary factor.
    pub fn add_marginalizer(&mut self, v: VariableId) -> TensorResult<FactorId> {
        self.add_equality(&[v])
    }

    /// Fails on the first variable that no factor touches.
    pub fn check(&self) -> TensorResult<()> {
        match self.variables().find(|v| self.incidence[v.0].is_empty()) {
            Some(v) => Err(TensorError::DanglingVariable(v)),
            None => Ok(()),
        }
    }

    /// Closes the box holding `members` with default options.
    pub fn close_box(&self, members: &[FactorId]) -> TensorResult<Factor> {
        self.close_box_with(members, &ContractionOptions::default())
    }

    /// Multiplies the factors in `members` and sums over every variable whose
    /// slots all lie inside the box.
    ///
    /// The result's scope lists the boundary variables in order of first
    /// appearance while walking `members` and their scopes.
    pub fn close_box_with(&self, members: &[FactorId], opts: &ContractionOptions) -> TensorResult<Factor> {
        if members.is_empty() {
            return Err(TensorError::EmptyBox);
        }
        for (i, id) in members.iter().enumerate() {
            self.factor(*id)?;
            if members[..i].contains(id) {
                return Err(TensorError::DuplicateFactor(*id));
            }
        }
        let mut boundary = Vec::new();
        for id in members {
            for &v in &self.factors[id.0].scope {
                let inside = self.incidence[v.0].iter().filter(|s| members.contains(&s.factor)).count();
                if inside < self.incidence[v.0].len() || self.incidence[v.0].len() == 1 {
                    boundary.push(v);
                }
            }
        }
        let work: Vec<Work> = members.iter().map(|id| Work::from_factor(&self.factors[id.0])).collect();
        let merged = contract_all(work, opts)?;
        let result = Factor { scope: merged.vars, dims: merged.dims, values: merged.data };
        result.permuted(&boundary)
    }

    /// Closed box of every factor: a factor over the half edges (in id order),
    /// or a scalar factor when there are none.
    pub fn external_function(&self) -> TensorResult<Factor> {
        self.external_function_with(&ContractionOptions::default())
    }

    pub fn external_function_with(&self, opts: &ContractionOptions) -> TensorResult<Factor> {
        self.check()?;
        if self.factors.is_empty() {
            return Ok(Factor::scalar(ONE));
        }
        let all: Vec<FactorId> = self.factor_ids().collect();
        let f = self.close_box_with(&all, opts)?;
        f.permuted(&self.half_edges())
    }
}

/// Matrix product computed as the external function of a two-node chain.
pub fn graph_matmul(a: &Matrix, b: &Matrix) -> TensorResult<Matrix> {
    if a.cols() != b.rows() {
        return Err(TensorError::DimensionMismatch);
    }
    let mut g = FactorGraph::new(&[a.rows(), a.cols(), b.cols()])?;
    let (x, y, z) = (VariableId(0), VariableId(1), VariableId(2));
    g.add_factor(&[x, y], a.as_slice().to_vec())?;
    g.add_factor(&[y, z], b.as_slice().to_vec())?;
    g.external_function()?.to_matrix(x, z)
}

/// `tr(M_0 M_1 ... M_{n-1})` as the partition function of a closed ring.
pub fn graph_trace(ms: &[Matrix]) -> TensorResult<Complex64> {
    if ms.is_empty() {
        return Err(TensorError::EmptyBox);
    }
    let n = ms.len();
    for (i, m) in ms.iter().enumerate() {
        if m.cols() != ms[(i + 1) % n].rows() {
            return Err(TensorError::DimensionMismatch);
        }
    }
    let mut g = FactorGraph::default();
    let vars: Vec<VariableId> = ms.iter().map(|m| g.add_variable(m.rows())).collect::<TensorResult<_>>()?;
    if n == 1 {
        // A single matrix cannot carry the same variable twice; close the
        // loop through an equality node instead.
        let back = g.add_variable(ms[0].cols())?;
        g.add_factor(&[vars[0], back], ms[0].as_slice().to_vec())?;
        g.add_equality(&[back, vars[0]])?;
    } else {
        for (i, m) in ms.iter().enumerate() {
            g.add_factor(&[vars[i], vars[(i + 1) % n]], m.as_slice().to_vec())?;
        }
    }
    Ok(g.external_function()?.as_scalar().expect("closed ring has no half edges"))
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Visits `sum_k idx_k * strides_k` for every multi-index over `dims`, last axis fastest.
fn for_each_offset(dims: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    if dims.iter().any(|&d| d == 0) {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    let mut off = 0usize;
    loop {
        f(off);
        let mut axis = dims.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            off += strides[axis];
            if idx[axis] < dims[axis] {
                break;
            }
            off -= strides[axis] * dims[axis];
            idx[axis] = 0;
        }
    }
}

/// Intermediate tensor during contraction.
struct Work {
    vars: Vec<VariableId>,
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

impl Work {
    fn from_factor(f: &Factor) -> Self {
        Self { vars: f.scope.clone(), dims: f.dims.clone(), data: f.values.clone() }
    }

    fn dim_of(&self, v: VariableId) -> Option<usize> {
        self.vars.iter().position(|&w| w == v).map(|i| self.dims[i])
    }
}

/// Element count of the pairwise product of `a` and `b`, and whether they share a variable.
fn merged_size(a: &Work, b: &Work) -> (usize, bool) {
    let mut size = 1usize;
    let mut shared = false;
    for (v, &d) in a.vars.iter().zip(&a.dims) {
        if b.vars.contains(v) {
            shared = true;
        } else {
            size = size.saturating_mul(d);
        }
    }
    for (v, &d) in b.vars.iter().zip(&b.dims) {
        if !a.vars.contains(v) {
            size = size.saturating_mul(d);
        }
    }
    (size, shared)
}

fn contract_all(mut work: Vec<Work>, opts: &ContractionOptions) -> TensorResult<Work> {
    while work.len() > 1 {
        let (i, j) = match opts.strategy {
            ContractionStrategy::Sequential => (0, 1),
            ContractionStrategy::Greedy => {
                let mut best: Option<((bool, usize), usize, usize)> = None;
                for i in 0..work.len() {
                    for j in (i + 1)..work.len() {
                        let (size, shared) = merged_size(&work[i], &work[j]);
                        // Rank connected pairs ahead of outer products.
                        let key = (!shared, size);
                        if best.is_none_or(|(k, _, _)| key < k) {
                            best = Some((key, i, j));
                        }
                    }
                }
                let (_, i, j) = best.expect("at least two tensors");
                (i, j)
            }
        };
        let (size, _) = merged_size(&work[i], &work[j]);
        if size > opts.element_cap {
            return Err(TensorError::ResourceLimit { elements: size, cap: opts.element_cap });
        }
        let b = work.remove(j);
        let a = work.remove(i);
        work.insert(i, contract_pair(&a, &b));
    }
    Ok(work.pop().expect("box is nonempty"))
}

/// Multiplies `a` and `b`, summing over every variable they share. The result
/// carries `a`'s free variables followed by `b`'s.
fn contract_pair(a: &Work, b: &Work) -> Work {
    let sa = row_major_strides(&a.dims);
    let sb = row_major_strides(&b.dims);

    let mut out_vars = Vec::new();
    let mut out_dims = Vec::new();
    let mut out_sa = Vec::new();
    let mut out_sb = Vec::new();
    let mut sum_dims = Vec::new();
    let mut sum_sa = Vec::new();
    let mut sum_sb = Vec::new();

    for (k, &v) in a.vars.iter().enumerate() {
        match b.vars.iter().position(|&w| w == v) {
            Some(kb) => {
                debug_assert_eq!(Some(a.dims[k]), b.dim_of(v));
                sum_dims.push(a.dims[k]);
                sum_sa.push(sa[k]);
                sum_sb.push(sb[kb]);
            }
            None => {
                out_vars.push(v);
                out_dims.push(a.dims[k]);
                out_sa.push(sa[k]);
                out_sb.push(0);
            }
        }
    }
    for (k, &v) in b.vars.iter().enumerate() {
        if !a.vars.contains(&v) {
            out_vars.push(v);
            out_dims.push(b.dims[k]);
            out_sa.push(0);
            out_sb.push(sb[k]);
        }
    }

    let mut sum_offsets = Vec::new();
    {
        let mut off_a = Vec::new();
        let mut off_b = Vec::new();
        for_each_offset(&sum_dims, &sum_sa, |o| off_a.push(o));
        for_each_offset(&sum_dims, &sum_sb, |o| off_b.push(o));
        sum_offsets.extend(off_a.into_iter().zip(off_b));
    }

    let mut base_a = Vec::new();
    let mut base_b = Vec::new();
    for_each_offset(&out_dims, &out_sa, |o| base_a.push(o));
    for_each_offset(&out_dims, &out_sb, |o| base_b.push(o));

    let data = base_a
        .iter()
        .zip(&base_b)
        .map(|(&ba, &bb)| {
            let mut acc = ZERO;
            for &(oa, ob) in &sum_offsets {
                acc += a.data[ba + oa] * b.data[bb + ob];
            }
            acc
        })
        .collect();
    Work { vars: out_vars, dims: out_dims, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ramp(len: usize, seed: f64) -> Vec<Complex64> {
        (0..len).map(|i| c((i as f64 + seed).sin(), (i as f64 * 0.7 - seed).cos())).collect()
    }

    #[test]
    fn new_graph_declares_variables() {
        let g = FactorGraph::new(&[3, 5, 2]).unwrap();
        assert_eq!(g.variable_count(), 3);
        assert_eq!(g.factor_count(), 0);
        assert_eq!(g.alphabet_size(VariableId(1)), Ok(5));
        assert_eq!(FactorGraph::new(&[]).unwrap().variable_count(), 0);
        assert_eq!(FactorGraph::new(&[2, 0]).unwrap_err(), TensorError::InvalidAlphabet { variable: 1 });
    }

    #[test]
    fn third_slot_is_a_degree_violation() {
        let mut g = FactorGraph::new(&[2]).unwrap();
        let x = VariableId(0);
        g.add_factor(&[x], vec![ONE, ZERO]).unwrap();
        g.add_factor(&[x], vec![ONE, ONE]).unwrap();
        assert_eq!(g.add_factor(&[x], vec![ONE, ONE]), Err(TensorError::DegreeViolation(x)));
        // A rejected factor leaves the incidence untouched.
        assert_eq!(g.incidence(x).unwrap().len(), 2);
        assert_eq!(g.factor_count(), 2);
    }

    #[test]
    fn shape_and_scope_errors() {
        let mut g = FactorGraph::new(&[2, 3]).unwrap();
        let (x, y) = (VariableId(0), VariableId(1));
        assert_eq!(g.add_factor(&[x, y], vec![ONE; 5]), Err(TensorError::ShapeMismatch { expected: 6, found: 5 }));
        assert_eq!(g.add_factor(&[x, x], vec![ONE; 4]), Err(TensorError::DuplicateVariable(x)));
        assert_eq!(g.add_factor(&[VariableId(7)], vec![ONE]), Err(TensorError::UnknownVariable(VariableId(7))));
        assert_eq!(g.add_factor(&[x], vec![ONE, c(f64::NAN, 0.0)]), Err(TensorError::NonFinite));
    }

    #[test]
    fn equality_factor_shapes() {
        let id = equality_values(2, 3).unwrap();
        assert_eq!(Matrix::from_row_major(3, 3, id).unwrap(), Matrix::identity(3));
        let e3 = equality_values(3, 2).unwrap();
        let ones: Vec<usize> = e3.iter().enumerate().filter(|(_, z)| **z == ONE).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![0, 7]);
        assert_eq!(equality_values(1, 4).unwrap(), vec![ONE; 4]);
        assert_eq!(equality_values(0, 4), Err(TensorError::InvalidArity));
    }

    #[test]
    fn single_factor_box_is_unchanged() {
        let mut g = FactorGraph::new(&[2, 3]).unwrap();
        let vals = ramp(6, 0.3);
        let f = g.add_factor(&[VariableId(1), VariableId(0)], ramp(6, 0.3)).unwrap();
        let closed = g.close_box(&[f]).unwrap();
        assert_eq!(closed.scope(), &[VariableId(1), VariableId(0)]);
        assert_eq!(closed.values(), vals.as_slice());
    }

    #[test]
    fn empty_and_duplicate_boxes_rejected() {
        let mut g = FactorGraph::new(&[2]).unwrap();
        let f = g.add_factor(&[VariableId(0)], vec![ONE, ONE]).unwrap();
        assert_eq!(g.close_box(&[]), Err(TensorError::EmptyBox));
        assert_eq!(g.close_box(&[f, f]), Err(TensorError::DuplicateFactor(f)));
        assert_eq!(g.close_box(&[FactorId(4)]), Err(TensorError::UnknownFactor(FactorId(4))));
    }

    #[test]
    fn dangling_variable_rejected_on_evaluation() {
        let mut g = FactorGraph::new(&[2, 2]).unwrap();
        g.add_factor(&[VariableId(0)], vec![ONE, ONE]).unwrap();
        assert_eq!(g.external_function(), Err(TensorError::DanglingVariable(VariableId(1))));
    }

    #[test]
    fn trace_of_identity_loop() {
        let mut g = FactorGraph::new(&[3, 3]).unwrap();
        g.add_factor(&[VariableId(0), VariableId(1)], Matrix::identity(3).into_vec()).unwrap();
        g.add_equality(&[VariableId(1), VariableId(0)]).unwrap();
        assert_eq!(g.external_function().unwrap().as_scalar(), Some(c(3.0, 0.0)));
        assert_eq!(graph_trace(&[Matrix::identity(4)]), Ok(c(4.0, 0.0)));
    }

    #[test]
    fn trace_of_diagonal() {
        let mut d = Matrix::zeros(3, 3);
        d[(0, 0)] = ONE;
        d[(1, 1)] = c(0.0, 2.0);
        d[(2, 2)] = c(-1.0, 0.0);
        assert_eq!(graph_trace(&[d]), Ok(c(0.0, 2.0)));
    }

    #[test]
    fn matmul_small_cases() {
        let swap = Matrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap();
        assert_eq!(graph_matmul(&swap, &swap).unwrap(), Matrix::identity(2));
        let b = Matrix::from_row_major(3, 2, ramp(6, 1.1)).unwrap();
        assert_eq!(graph_matmul(&Matrix::identity(3), &b).unwrap(), b);
        assert_eq!(graph_matmul(&b, &b), Err(TensorError::DimensionMismatch));
        assert_eq!(graph_trace(&[b.clone()]), Err(TensorError::DimensionMismatch));
    }

    #[test]
    fn resource_limit_guard() {
        let mut g = FactorGraph::new(&[10, 10, 10, 10]).unwrap();
        g.add_factor(&[VariableId(0), VariableId(1)], vec![ONE; 100]).unwrap();
        g.add_factor(&[VariableId(2), VariableId(3)], vec![ONE; 100]).unwrap();
        let opts = ContractionOptions { element_cap: 1000, ..Default::default() };
        assert_eq!(
            g.external_function_with(&opts),
            Err(TensorError::ResourceLimit { elements: 10_000, cap: 1000 })
        );
        assert!(g.external_function().is_ok());
    }

    #[test]
    fn permutation_round_trip() {
        let f = Factor::new(vec![VariableId(0), VariableId(1), VariableId(2)], vec![2, 3, 4], ramp(24, 0.1)).unwrap();
        let p = f.permuted(&[VariableId(2), VariableId(0), VariableId(1)]).unwrap();
        assert_eq!(p.get(&[3, 1, 2]), f.get(&[1, 2, 3]));
        assert_eq!(p.permuted(f.scope()).unwrap(), f);
    }
}
