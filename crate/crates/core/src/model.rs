//! The attacked system: the last linear layer, labeled embeddings, class
//! centroids and the thresholded Siamese verification head.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, NORM_EPS};

/// Last-layer weights: `d` output features by `m` penultimate units, `d < m`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: Matrix,
}

impl WeightMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows == 0 || rows >= cols {
            return Err(Error::NotWide { rows, cols });
        }
        linalg::check_finite(&matrix)?;
        Ok(Self { matrix })
    }

    /// Feature dimension (rows).
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    /// Penultimate dimension (columns).
    pub fn m(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Left-composes a `d x d` feature-space transform: returns `T * W`.
    pub fn compose(&self, transform: &Matrix) -> Result<Self> {
        if transform.shape() != (self.d(), self.d()) {
            return Err(Error::DimensionMismatch { expected: self.d(), got: transform.nrows() });
        }
        Self::new(transform * &self.matrix)
    }

    pub fn forward(&self, y: &Vector) -> Result<Vector> {
        if y.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), got: y.len() });
        }
        Ok(&self.matrix * y)
    }

    /// Maps many penultimate vectors at once, one output per input.
    pub fn forward_all<'a, I>(&self, ys: I) -> Result<Vec<Vector>>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let ys: Vec<&Vector> = ys.into_iter().collect();
        if let Some(bad) = ys.iter().find(|y| y.len() != self.m()) {
            return Err(Error::DimensionMismatch { expected: self.m(), got: bad.len() });
        }
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        let stacked = Matrix::from_columns(&ys.iter().map(|y| (*y).clone()).collect::<Vec<_>>());
        let out = &self.matrix * stacked;
        Ok(out.column_iter().map(|c| c.into_owned()).collect())
    }
}

pub fn forward(w: &WeightMatrix, y: &Vector) -> Result<Vector> {
    w.forward(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Penultimate,
    Feature,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Penultimate => "penultimate",
            Space::Feature => "feature",
        }
    }
}

/// Labeled vectors sharing one dimension and one space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    space: Space,
    dim: usize,
    records: Vec<(u32, Vector)>,
}

impl EmbeddingSet {
    pub fn new(space: Space, dim: usize, records: Vec<(u32, Vector)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for (_, v) in &records {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig("embedding contains a non-finite entry".into()));
            }
        }
        Ok(Self { space, dim, records })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(u32, Vector)] {
        &self.records
    }

    pub fn vectors(&self) -> impl Iterator<Item = &Vector> {
        self.records.iter().map(|(_, v)| v)
    }

    /// Distinct class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|(c, _)| *c).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Record indices grouped by class, classes ascending, indices in record order.
    pub fn indices_by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, (c, _)) in self.records.iter().enumerate() {
            out.entry(*c).or_default().push(i);
        }
        out
    }

    pub fn samples_of(&self, class_id: u32) -> Vec<Vector> {
        self.records
            .iter()
            .filter(|(c, _)| *c == class_id)
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Sub-set holding the records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            space: self.space,
            dim: self.dim,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Sub-set holding only `class_id`.
    pub fn only_class(&self, class_id: u32) -> Result<Self> {
        let records: Vec<_> = self.records.iter().filter(|(c, _)| *c == class_id).cloned().collect();
        if records.is_empty() {
            return Err(Error::UnknownClass(class_id));
        }
        Ok(Self { space: self.space, dim: self.dim, records })
    }

    /// The single class id of this set, or an error naming the mix.
    pub fn single_class(&self) -> Result<u32> {
        match self.class_ids().as_slice() {
            [] => Err(Error::EmptySamples),
            [one] => Ok(*one),
            many => Err(Error::MultipleClasses(many.to_vec())),
        }
    }
}

/// `normalize(mean(normalize(s_i)))`: direction of the class cone.
pub fn centroid_direction(samples: &[Vector]) -> Result<Vector> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    let mut sum = Vector::zeros(first.len());
    for s in samples {
        if s.len() != first.len() {
            return Err(Error::DimensionMismatch { expected: first.len(), got: s.len() });
        }
        sum += linalg::normalize(s)?;
    }
    let mean = sum / samples.len() as f64;
    linalg::normalize(&mean)
}

/// Squared Euclidean distance between the normalized vectors, `2(1 - cos)`.
pub fn pair_distance(f1: &Vector, f2: &Vector) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::DimensionMismatch { expected: f1.len(), got: f2.len() });
    }
    let n1 = f1.norm();
    let n2 = f2.norm();
    if !(n1 > NORM_EPS) {
        return Err(Error::ZeroVector { norm: n1 });
    }
    if !(n2 > NORM_EPS) {
        return Err(Error::ZeroVector { norm: n2 });
    }
    let diff = f1 / n1 - f2 / n2;
    Ok(diff.norm_squared().clamp(0.0, 4.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationHead {
    threshold: f64,
}

impl VerificationHead {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=4.0).contains(&threshold) {
            return Err(Error::InvalidThreshold(threshold));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Matched iff the pair distance is at most the threshold.
    pub fn verify(&self, f1: &Vector, f2: &Vector) -> Result<bool> {
        Ok(pair_distance(f1, f2)? <= self.threshold)
    }
}

pub fn verify(head: &VerificationHead, f1: &Vector, f2: &Vector) -> Result<bool> {
    head.verify(f1, f2)
}
