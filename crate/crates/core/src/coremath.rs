//! Dense matrix primitives shared by every objective.
//!
//! Matrices are `ndarray` arrays of `f64`; samples are rows. Parameter sets
//! are exchanged with the optimizer as one flat vector whose ordering is
//! fixed by a [`ParamLayout`]: segments in declaration order, each matrix
//! row-major, biases as single-column segments.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

/// Logistic sigmoid evaluated without overflowing `exp` for large |x|.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.mapv(sigmoid_scalar)
}

pub fn sigmoid_inplace(x: &mut Matrix) {
    x.mapv_inplace(sigmoid_scalar);
}

/// `x · wᵀ + b` with `b` broadcast over rows: the affine part of a layer
/// whose weights are stored outputs × inputs.
pub fn affine(x: ArrayView2<f64>, w: &Matrix, b: &Vector) -> Matrix {
    let mut z = x.dot(&w.t());
    z += b;
    z
}

pub fn sum_of_squares<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    mats.into_iter().map(|m| m.iter().map(|w| w * w).sum::<f64>()).sum()
}

pub fn column_means(x: &Matrix) -> Option<Vector> {
    x.mean_axis(Axis(0))
}

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, rows: usize, cols: usize) -> Self {
        self.segments.push(Segment {
            name: name.into(),
            rows,
            cols,
        });
        self
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Start offset of each segment, followed by the total length.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut acc = 0;
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        for seg in &self.segments {
            out.push(acc);
            acc += seg.len();
        }
        out.push(acc);
        out
    }

    pub fn flatten(&self, parts: &[ArrayView2<f64>]) -> Result<Vector> {
        if parts.len() != self.segments.len() {
            return Err(Error::shape(
                "flatten",
                format!("{} segments", self.segments.len()),
                format!("{} matrices", parts.len()),
            ));
        }
        let mut flat = Vec::with_capacity(self.total_len());
        for (seg, part) in self.segments.iter().zip(parts) {
            if part.dim() != (seg.rows, seg.cols) {
                return Err(Error::Segment {
                    segment: seg.name.clone(),
                    expected: (seg.rows, seg.cols),
                    actual: part.dim(),
                });
            }
            // iter() walks logical row-major order regardless of memory layout
            flat.extend(part.iter().copied());
        }
        Ok(Vector::from(flat))
    }

    pub fn unflatten(&self, flat: ArrayView1<f64>) -> Result<Vec<Matrix>> {
        if flat.len() != self.total_len() {
            return Err(Error::FlatLength {
                expected: self.total_len(),
                actual: flat.len(),
            });
        }
        let mut out = Vec::with_capacity(self.segments.len());
        let mut offset = 0;
        for seg in &self.segments {
            let block = flat.slice(ndarray::s![offset..offset + seg.len()]);
            let m = Matrix::from_shape_vec((seg.rows, seg.cols), block.to_vec()).expect("segment length matches shape");
            out.push(m);
            offset += seg.len();
        }
        Ok(out)
    }
}

/// Views a bias vector as a single-column matrix for flattening.
pub fn as_column(v: &Vector) -> ArrayView2<'_, f64> {
    v.view().insert_axis(Axis(1))
}

/// Takes ownership of a single-column matrix as a vector.
pub fn into_vector(m: Matrix) -> Vector {
    let n = m.len();
    m.into_shape_with_order(n).expect("contiguous column")
}
