//! Outcome distributions over tuples of measurement results.

use alloc::vec;
use alloc::vec::Vec;

/// One sampled sequence of outcomes and its probability under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub outcomes: Vec<usize>,
    pub probability: f64,
}

/// Probabilities over outcome tuples, row-major with the last measurement fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    alphabets: Vec<usize>,
    probabilities: Vec<f64>,
    max_imaginary: f64,
}

impl OutcomeDistribution {
    pub fn new(alphabets: Vec<usize>, probabilities: Vec<f64>) -> Self {
        assert_eq!(alphabets.iter().product::<usize>(), probabilities.len(), "one probability per tuple");
        Self { alphabets, probabilities, max_imaginary: 0.0 }
    }

    pub fn with_max_imaginary(mut self, max_imaginary: f64) -> Self {
        self.max_imaginary = max_imaginary;
        self
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Largest imaginary residue seen before taking real parts.
    pub fn max_imaginary(&self) -> f64 {
        self.max_imaginary
    }

    pub fn get(&self, outcomes: &[usize]) -> f64 {
        self.probabilities[self.flat_index(outcomes)]
    }

    /// Row-major position of an outcome tuple.
    pub fn flat_index(&self, outcomes: &[usize]) -> usize {
        assert_eq!(outcomes.len(), self.alphabets.len(), "one outcome per measurement");
        outcomes.iter().zip(&self.alphabets).fold(0, |acc, (&y, &a)| {
            assert!(y < a, "outcome out of range");
            acc * a + y
        })
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Tuples in lexicographic order with their probabilities.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let alphabets = self.alphabets.clone();
        self.probabilities.iter().enumerate().map(move |(mut flat, &p)| {
            let mut tuple = vec![0; alphabets.len()];
            for (slot, &a) in tuple.iter_mut().zip(&alphabets).rev() {
                *slot = flat % a;
                flat /= a;
            }
            (tuple, p)
        })
    }

    /// Marginal over all but the last measurement.
    pub fn drop_last(&self) -> Self {
        let last = *self.alphabets.last().expect("nonempty distribution");
        Self {
            alphabets: self.alphabets[..self.alphabets.len() - 1].to_vec(),
            probabilities: self.probabilities.chunks(last).map(|c| c.iter().sum()).collect(),
            max_imaginary: self.max_imaginary,
        }
    }

    /// Largest entrywise difference; infinite when the alphabets disagree.
    pub fn max_abs_diff(&self, other: &OutcomeDistribution) -> f64 {
        if self.alphabets != other.alphabets {
            return f64::INFINITY;
        }
        self.probabilities.iter().zip(&other.probabilities).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Relative frequency of each outcome tuple among `trajectories`.
pub fn empirical_distribution(alphabets: &[usize], trajectories: &[Trajectory]) -> OutcomeDistribution {
    let mut dist = OutcomeDistribution::new(alphabets.to_vec(), vec![0.0; alphabets.iter().product()]);
    if trajectories.is_empty() {
        return dist;
    }
    let weight = 1.0 / trajectories.len() as f64;
    for t in trajectories {
        let i = dist.flat_index(&t.outcomes);
        dist.probabilities[i] += weight;
    }
    dist
}

