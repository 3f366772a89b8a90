//! Nonnegative matrix factorization V ≈ WH by multiplicative updates.
//!
//! Samples are the columns of V, so a [`Dataset`](crate::autoencoder::Dataset)
//! is transposed on the way in (see [`samples_as_columns`]).

use ndarray::Zip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::reconstruction_cost;
use crate::coremath::Matrix;
use crate::error::{Error, Result};

/// Added to every update denominator.
pub const DENOMINATOR_EPS: f64 = 1e-9;

/// Basis images are the columns of `w` (n × r); `h` (r × m) holds encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    pub w: Matrix,
    pub h: Matrix,
}

impl NmfModel {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruction(&self) -> Matrix {
        self.w.dot(&self.h)
    }
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    pub model: NmfModel,
    /// ½‖V−WH‖²_F at initialisation and after every iteration.
    pub objective_trace: Vec<f64>,
}

pub fn samples_as_columns(x: &Matrix) -> Matrix {
    x.t().to_owned()
}

pub fn frobenius_objective(v: &Matrix, w: &Matrix, h: &Matrix) -> f64 {
    let wh = w.dot(h);
    0.5 * Zip::from(v).and(&wh).fold(0.0, |acc, a, b| acc + (a - b) * (a - b))
}

fn check_nonnegative(v: &Matrix) -> Result<()> {
    match v.iter().find(|&&x| !(x >= 0.0)) {
        Some(x) => Err(Error::Data(format!(
            "NMF input contains negative or non-finite entry {x}"
        ))),
        None => Ok(()),
    }
}

fn positive_uniform<R: Rng>(shape: (usize, usize), rng: &mut R) -> Matrix {
    // (0, 1]: 1 − U[0,1)
    Matrix::from_shape_simple_fn(shape, || 1.0 - rng.random::<f64>())
}

/// H ← H ⊙ (WᵀV) / (WᵀWH + ε)
fn update_h(v: &Matrix, w: &Matrix, h: &mut Matrix) {
    let num = w.t().dot(v);
    let den = w.t().dot(w).dot(&*h);
    Zip::from(h)
        .and(&num)
        .and(&den)
        .for_each(|h, &n, &d| *h *= n / (d + DENOMINATOR_EPS));
}

/// W ← W ⊙ (VHᵀ) / (WHHᵀ + ε)
fn update_w(v: &Matrix, w: &mut Matrix, h: &Matrix) {
    let num = v.dot(&h.t());
    let den = w.dot(&h.dot(&h.t()));
    Zip::from(w)
        .and(&num)
        .and(&den)
        .for_each(|w, &n, &d| *w *= n / (d + DENOMINATOR_EPS));
}

/// Alternating updates (H then W) for exactly `iters` iterations.
pub fn nmf_factorize(v: &Matrix, rank: usize, iters: usize, seed: u64) -> Result<NmfFit> {
    check_nonnegative(v)?;
    let (n, m) = v.dim();
    if rank == 0 || rank > n.min(m) {
        return Err(Error::Config(format!("NMF rank {rank} must lie in [1, {}]", n.min(m))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = positive_uniform((n, rank), &mut rng);
    let mut h = positive_uniform((rank, m), &mut rng);
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(frobenius_objective(v, &w, &h));
    for _ in 0..iters {
        update_h(v, &w, &mut h);
        update_w(v, &mut w, &h);
        trace.push(frobenius_objective(v, &w, &h));
    }
    Ok(NmfFit {
        model: NmfModel { w, h },
        objective_trace: trace,
    })
}

/// Encodes new samples against a frozen basis by running only the H update,
/// stopping once the relative objective change drops below `tolerance`.
pub fn nmf_encode(w: &Matrix, v: &Matrix, max_iters: usize, tolerance: f64, seed: u64) -> Result<Matrix> {
    check_nonnegative(v)?;
    check_nonnegative(w)?;
    if w.nrows() != v.nrows() {
        return Err(Error::shape("NMF encode rows", w.nrows(), v.nrows()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = positive_uniform((w.ncols(), v.ncols()), &mut rng);
    let mut prev = frobenius_objective(v, w, &h);
    for _ in 0..max_iters {
        update_h(v, w, &mut h);
        let cur = frobenius_objective(v, w, &h);
        if (prev - cur).abs() <= tolerance * prev.max(f64::MIN_POSITIVE) {
            break;
        }
        prev = cur;
    }
    Ok(h)
}

/// Mean over samples of ½‖v − Wh‖², comparable with the autoencoder's
/// reconstruction cost.
pub fn nmf_reconstruction_error(model: &NmfModel, v: &Matrix) -> Result<f64> {
    let wh = model.reconstruction();
    if wh.dim() != v.dim() {
        return Err(Error::shape(
            "NMF reconstruction",
            format!("{:?}", wh.dim()),
            format!("{:?}", v.dim()),
        ));
    }
    reconstruction_cost(&v.t().to_owned(), &wh.t().to_owned())
}
