//! Absorbed chains on a finite labeled state space.
//!
//! The cemetery state is never stored: a kernel keeps the surviving part of
//! the one-step transition matrix and derives the absorption probability of
//! each row as its deficit from one.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::periodicity;

/// Row sums may exceed one by this much before a kernel is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Entries in `[-NEGATIVE_CLAMP, 0)` are treated as serialization round-off and clamped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// Largest misplaced surviving mass accepted by [`AbsorbedKernel::restrict_iterated`].
pub const PARTITION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbedKernel {
    states: Vec<String>,
    matrix: Matrix,
    absorption: Vec<f64>,
}

impl AbsorbedKernel {
    /// Validates a raw transition matrix given as rows.
    pub fn new<S: Into<String>>(rows: Vec<Vec<f64>>, labels: Vec<S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rows.len() });
        }
        let mut data = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_matrix(Matrix::from_row_major(n, n, data), labels)
    }

    pub fn from_matrix(mut matrix: Matrix, labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyStateSpace);
        }
        if !matrix.is_square() || matrix.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.rows() });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let v = matrix[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: i * n + j });
                }
                if v < 0.0 {
                    if v < -NEGATIVE_CLAMP {
                        return Err(Error::NegativeEntry { row: i, col: j, value: v });
                    }
                    matrix[(i, j)] = 0.0;
                }
            }
        }
        let mut absorption = Vec::with_capacity(n);
        for (row, sum) in matrix.row_sums().into_iter().enumerate() {
            if sum > 1.0 + ROW_SUM_TOLERANCE {
                return Err(Error::RowSumExceedsOne { row, sum });
            }
            absorption.push((1.0 - sum).max(0.0));
        }
        Ok(AbsorbedKernel { states: labels, matrix, absorption })
    }

    /// Wraps a product of validated kernels; only round-off needs cleaning.
    fn from_trusted(matrix: Matrix, states: Vec<String>) -> Self {
        let absorption = matrix.row_sums().into_iter().map(|s| (1.0 - s).max(0.0)).collect();
        AbsorbedKernel { states, matrix, absorption }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn absorption(&self) -> &[f64] {
        &self.absorption
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    /// True when no state can jump to the cemetery.
    pub fn is_stochastic(&self) -> bool {
        self.absorption.iter().all(|&a| a <= ROW_SUM_TOLERANCE)
    }

    /// `P_n = P_1^n`; `n = 0` gives the identity.
    pub fn power(&self, n: usize) -> AbsorbedKernel {
        AbsorbedKernel::from_trusted(self.matrix.pow(n), self.states.clone())
    }

    /// The iterated kernel `Q_1 = P_t` restricted to the class `A_0`.
    pub fn restrict_iterated(&self, cyclic: &CyclicStructure) -> Result<AbsorbedKernel> {
        self.check_len(cyclic.len())?;
        let residual = periodicity::verify_partition(self, cyclic);
        if residual > PARTITION_TOLERANCE {
            return Err(Error::InvalidPartition { residual, tolerance: PARTITION_TOLERANCE });
        }
        if cyclic.period() == 1 {
            return Ok(self.clone());
        }
        let a0 = cyclic.members(0);
        let pt = self.matrix.pow(cyclic.period());
        let labels = a0.iter().map(|&i| self.states[i].clone()).collect();
        Ok(AbsorbedKernel::from_trusted(pt.submatrix(&a0, &a0), labels))
    }

    /// `μ P_1`.
    pub fn act_left(&self, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        self.check_len(mu.len())?;
        Ok(DiscreteMeasure::from_trusted(self.matrix.vec_mul(mu.weights())))
    }

    /// `P_1 f`.
    pub fn act_right(&self, f: &StateFunction) -> Result<StateFunction> {
        self.check_len(f.len())?;
        Ok(StateFunction::from_trusted(self.matrix.mul_vec(f.values())))
    }

    /// `μ P_n 𝟙_E`, the probability of surviving `n` steps from `μ`.
    pub fn survival_probability(&self, mu: &DiscreteMeasure, n: usize) -> Result<f64> {
        self.check_len(mu.len())?;
        let mut w = mu.weights().to_vec();
        for _ in 0..n {
            w = self.matrix.vec_mul(&w);
        }
        Ok(w.iter().sum())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: len });
        }
        Ok(())
    }
}

/// Nonnegative weights indexed by states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        for (i, w) in weights.iter_mut().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if *w < 0.0 {
                if *w < -NEGATIVE_CLAMP {
                    return Err(Error::InvalidMeasure(format!("weight {i} is negative ({w})")));
                }
                *w = 0.0;
            }
        }
        Ok(DiscreteMeasure { weights })
    }

    /// A probability measure; the weights must sum to one within `1e-12`.
    pub fn probability(weights: Vec<f64>) -> Result<Self> {
        let m = Self::new(weights)?;
        let mass = m.mass();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("total mass {mass} is not 1")));
        }
        Ok(m)
    }

    pub(crate) fn from_trusted(mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        DiscreteMeasure { weights }
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        DiscreteMeasure { weights }
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteMeasure { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `μ(f)`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        linalg::dot(&self.weights, f)
    }

    pub fn normalized(&self) -> Result<DiscreteMeasure> {
        let mass = self.mass();
        if mass <= 0.0 {
            return Err(Error::InvalidMeasure("cannot normalize a zero measure".into()));
        }
        Ok(DiscreteMeasure { weights: linalg::scale(&self.weights, 1.0 / mass) })
    }

    pub fn l1_distance(&self, other: &DiscreteMeasure) -> f64 {
        linalg::l1_distance(&self.weights, &other.weights)
    }

    /// `μ(· ∩ A_i)` as a measure on the full state space.
    pub fn restricted_to(&self, members: &[usize]) -> DiscreteMeasure {
        let mut weights = vec![0.0; self.len()];
        for &i in members {
            weights[i] = self.weights[i];
        }
        DiscreteMeasure { weights }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StateFunction {
    values: Vec<f64>,
}

impl StateFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(StateFunction { values })
    }

    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        StateFunction { values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        StateFunction { values: vec![c; n] }
    }

    pub fn indicator(n: usize, members: &[usize]) -> Self {
        let mut values = vec![0.0; n];
        for &i in members {
            values[i] = 1.0;
        }
        StateFunction { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        linalg::sup_norm(&self.values)
    }
}

/// Period `t` and the class index of every state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicStructure {
    period: usize,
    class_of: Vec<usize>,
}

impl CyclicStructure {
    pub fn new(period: usize, class_of: Vec<usize>) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidCyclicStructure("period must be positive".into()));
        }
        let mut populated = vec![false; period];
        for (x, &c) in class_of.iter().enumerate() {
            if c >= period {
                return Err(Error::InvalidCyclicStructure(format!(
                    "state {x} has class {c} but the period is {period}"
                )));
            }
            populated[c] = true;
        }
        if let Some(empty) = populated.iter().position(|p| !p) {
            return Err(Error::InvalidCyclicStructure(format!("class {empty} is empty")));
        }
        Ok(CyclicStructure { period, class_of })
    }

    /// The single-class structure of an aperiodic chain.
    pub fn trivial(n: usize) -> Self {
        CyclicStructure { period: 1, class_of: vec![0; n] }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn class_of(&self, x: usize) -> usize {
        self.class_of[x]
    }

    pub fn classes(&self) -> &[usize] {
        &self.class_of
    }

    /// States of class `A_i`, in increasing index order. `i` is taken mod `t`.
    pub fn members(&self, i: usize) -> Vec<usize> {
        let i = i % self.period;
        (0..self.class_of.len()).filter(|&x| self.class_of[x] == i).collect()
    }

    /// Extends a vector indexed by the members of `A_i` to the whole space by zero.
    pub fn embed(&self, i: usize, values: &[f64]) -> Vec<f64> {
        let members = self.members(i);
        assert_eq!(members.len(), values.len(), "vector does not match class size");
        let mut out = vec![0.0; self.len()];
        for (&x, &v) in members.iter().zip(values) {
            out[x] = v;
        }
        out
    }

    /// Restricts a full-space vector to the members of `A_i`.
    pub fn restrict(&self, i: usize, values: &[f64]) -> Vec<f64> {
        self.members(i).into_iter().map(|x| values[x]).collect()
    }
}
