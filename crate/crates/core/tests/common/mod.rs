#![allow(dead_code)]

use std::collections::HashMap;

use qfg_core::random::ModelRng;
use qfg_core::{Complex64, FactorGraph, FactorId, Matrix, VariableId};

/// Random Forney-form graph: up to `max_factors` factors, alphabets up to
/// `max_alphabet`, every variable in one or two slots.
pub fn random_graph(rng: &mut ModelRng, max_factors: usize, max_alphabet: usize) -> FactorGraph {
    let nf = rng.range(1, max_factors);
    let nv = rng.range(1, 7);
    let mut scopes: Vec<Vec<usize>> = vec![Vec::new(); nf];
    let mut alphabets = Vec::new();
    for _ in 0..nv {
        let a = rng.range(1, max_alphabet);
        let first = rng.range(0, nf - 1);
        if scopes[first].len() >= 4 {
            continue;
        }
        alphabets.push(a);
        let id = alphabets.len() - 1;
        scopes[first].push(id);
        if nf > 1 && rng.range(0, 1) == 1 {
            let second = (first + rng.range(1, nf - 1)) % nf;
            if scopes[second].len() < 4 {
                scopes[second].push(id);
            }
        }
    }
    let mut g = FactorGraph::new(&alphabets).unwrap();
    let vars: Vec<VariableId> = g.variables().collect();
    for scope in scopes {
        let ids: Vec<VariableId> = scope.iter().map(|&i| vars[i]).collect();
        let len: usize = scope.iter().map(|&i| alphabets[i]).product();
        let values = (0..len).map(|_| rng.complex_gaussian()).collect();
        g.add_factor(&ids, values).unwrap();
    }
    g
}

/// Exhaustive nested-loop summation of the box `members`, read out over the
/// given `scope`.
pub fn brute_force_box(g: &FactorGraph, members: &[FactorId], scope: &[VariableId]) -> HashMap<Vec<usize>, Complex64> {
    let mut vars: Vec<VariableId> = Vec::new();
    for &id in members {
        for &v in g.factor(id).unwrap().scope() {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    let sizes: Vec<usize> = vars.iter().map(|&v| g.alphabet_size(v).unwrap()).collect();
    let total: usize = sizes.iter().product();
    let mut out: HashMap<Vec<usize>, Complex64> = HashMap::new();
    let mut assignment = vec![0usize; vars.len()];
    for _ in 0..total {
        let value_of = |v: VariableId| assignment[vars.iter().position(|&w| w == v).unwrap()];
        let mut prod = Complex64::new(1.0, 0.0);
        for &id in members {
            let f = g.factor(id).unwrap();
            let idx: Vec<usize> = f.scope().iter().map(|&v| value_of(v)).collect();
            prod *= f.get(&idx);
        }
        let key: Vec<usize> = scope.iter().map(|&v| value_of(v)).collect();
        *out.entry(key).or_insert(Complex64::new(0.0, 0.0)) += prod;
        for (slot, &size) in assignment.iter_mut().zip(&sizes).rev() {
            *slot += 1;
            if *slot < size {
                break;
            }
            *slot = 0;
        }
    }
    out
}

/// Every assignment of `dims` in row-major order.
pub fn assignments(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut all = vec![Vec::new()];
    for &d in dims {
        all = all.into_iter().flat_map(|p| (0..d).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    all
}

pub fn random_matrix(rng: &mut ModelRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.complex_gaussian())
}

/// Triple-loop product.
pub fn naive_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            for k in 0..a.cols() {
                out[(i, j)] += a[(i, k)] * b[(k, j)];
            }
        }
    }
    out
}

pub fn naive_trace(ms: &[Matrix]) -> Complex64 {
    let p = ms[1..].iter().fold(ms[0].clone(), |acc, m| naive_mul(&acc, m));
    (0..p.rows()).map(|i| p[(i, i)]).sum()
}
