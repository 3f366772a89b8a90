//! Three-layer autoencoder: forward maps, the sparse (SAE) and
//! nonnegativity-constrained (NCAE) objectives with analytic gradients, and
//! a finite-difference gradient oracle.

use log::warn;
use ndarray::{s, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coremath::{affine, as_column, into_vector, sigmoid_inplace, sum_of_squares, Matrix, ParamLayout, Vector};
use crate::error::{Error, Result};
use crate::optimizer::{self, OptimizerConfig, OptimizerReport, Termination};
use crate::par::{Exec, CHUNK_ROWS};

/// Mean activations are clamped into this margin before taking logs during
/// training so a saturated unit cannot produce an infinite cost.
pub const SATURATION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    /// Reconstruction + KL sparsity + weight decay.
    Sae,
    /// Reconstruction + KL sparsity + asymmetric penalty on negative weights.
    Ncae,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Sae => "sae",
            ObjectiveKind::Ncae => "ncae",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sae" => Ok(ObjectiveKind::Sae),
            "ncae" => Ok(ObjectiveKind::Ncae),
            other => Err(Error::Config(format!(
                "unknown objective `{other}` (expected sae or ncae)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    /// Weight of the KL sparsity term.
    pub beta: f64,
    /// Target mean activation of each hidden unit, strictly inside (0,1).
    pub sparsity_target: f64,
    /// Weight decay; must be zero for NCAE.
    pub lambda: f64,
    /// Nonnegativity penalty; must be zero for SAE.
    pub alpha: f64,
    pub hidden_size: usize,
    pub input_corruption_rate: f64,
    pub hidden_dropout_rate: f64,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// Sparse autoencoder with β=3, p=0.05, λ=0.003.
    pub fn sae(hidden_size: usize) -> Self {
        Self {
            objective: ObjectiveKind::Sae,
            beta: 3.0,
            sparsity_target: 0.05,
            lambda: 0.003,
            alpha: 0.0,
            hidden_size,
            input_corruption_rate: 0.0,
            hidden_dropout_rate: 0.0,
            rng_seed: 0,
        }
    }

    /// Nonnegativity-constrained autoencoder with β=3, p=0.05, α=0.003.
    pub fn ncae(hidden_size: usize) -> Self {
        Self {
            objective: ObjectiveKind::Ncae,
            lambda: 0.0,
            alpha: 0.003,
            ..Self::sae(hidden_size)
        }
    }

    /// Denoising variant: weight decay, 50% input dropout, no sparsity term.
    pub fn dae(hidden_size: usize) -> Self {
        Self {
            beta: 0.0,
            input_corruption_rate: 0.5,
            ..Self::sae(hidden_size)
        }
    }

    /// Dropout variant: weight decay, 50% hidden dropout, no sparsity term.
    pub fn dpae(hidden_size: usize) -> Self {
        Self {
            beta: 0.0,
            hidden_dropout_rate: 0.5,
            ..Self::sae(hidden_size)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive".into());
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative finite number, got {v}"));
            }
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return bad(format!(
                "sparsity target must lie in (0,1), got {}",
                self.sparsity_target
            ));
        }
        for (name, v) in [
            ("input_corruption_rate", self.input_corruption_rate),
            ("hidden_dropout_rate", self.hidden_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        match self.objective {
            ObjectiveKind::Sae if self.alpha != 0.0 => bad("SAE objective takes no alpha; set it to 0".into()),
            ObjectiveKind::Ncae if self.lambda != 0.0 => bad("NCAE objective takes no lambda; set it to 0".into()),
            _ => Ok(()),
        }
    }
}

/// Samples are rows with features in [0,1]; labels are 0-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Option<Vec<usize>>,
    pub class_count: usize,
}

impl Dataset {
    pub fn unlabeled(x: Matrix) -> Result<Self> {
        Self::check_range(&x)?;
        Ok(Self {
            x,
            labels: None,
            class_count: 0,
        })
    }

    /// `class_count` of `None` infers k as one past the largest label.
    pub fn labeled(x: Matrix, labels: Vec<usize>, class_count: Option<usize>) -> Result<Self> {
        Self::check_range(&x)?;
        if labels.len() != x.nrows() {
            return Err(Error::shape("dataset labels", x.nrows(), labels.len()));
        }
        let k = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Label {
                index,
                label,
                classes: k,
            });
        }
        Ok(Self {
            x,
            labels: Some(labels),
            class_count: k,
        })
    }

    fn check_range(x: &Matrix) -> Result<()> {
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("feature value {v} outside [0,1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn labels_required(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data("dataset has no labels".into()))
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
        }
    }
}

/// Encoder weights are hidden × input, decoder weights input × hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

/// Half-width of the uniform initialisation range for a layer.
pub fn init_radius(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out + 1) as f64).sqrt()
}

pub(crate) fn uniform_matrix<R: Rng>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-radius..=radius))
}

impl AutoencoderParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros((hidden, input)),
            b1: Vector::zeros(hidden),
            w2: Matrix::zeros((input, hidden)),
            b2: Vector::zeros(input),
        }
    }

    /// Weights uniform in ±√(6/(n+n'+1)), biases zero.
    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let r = init_radius(input, hidden);
        let w1 = uniform_matrix(hidden, input, r, rng);
        let w2 = uniform_matrix(input, hidden, r, rng);
        Self {
            w1,
            b1: Vector::zeros(hidden),
            w2,
            b2: Vector::zeros(input),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w1.nrows()
    }

    pub fn layout_for(input: usize, hidden: usize) -> ParamLayout {
        ParamLayout::new()
            .with("W1", hidden, input)
            .with("b1", hidden, 1)
            .with("W2", input, hidden)
            .with("b2", input, 1)
    }

    pub fn layout(&self) -> ParamLayout {
        Self::layout_for(self.input_size(), self.hidden_size())
    }

    pub fn validate(&self) -> Result<()> {
        let (h, n) = self.w1.dim();
        if self.b1.len() != h {
            return Err(Error::shape("b1", h, self.b1.len()));
        }
        if self.w2.dim() != (n, h) {
            return Err(Error::shape("W2", format!("{n}x{h}"), format!("{:?}", self.w2.dim())));
        }
        if self.b2.len() != n {
            return Err(Error::shape("b2", n, self.b2.len()));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vector {
        self.layout()
            .flatten(&[self.w1.view(), as_column(&self.b1), self.w2.view(), as_column(&self.b2)])
            .expect("params are self-consistent")
    }

    pub fn from_flat(input: usize, hidden: usize, flat: &Vector) -> Result<Self> {
        let mut parts = Self::layout_for(input, hidden).unflatten(flat.view())?.into_iter();
        let mut next = || parts.next().expect("four segments");
        let w1 = next();
        let b1 = into_vector(next());
        let w2 = next();
        let b2 = into_vector(next());
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn weights(&self) -> [&Matrix; 2] {
        [&self.w1, &self.w2]
    }
}

pub fn encode(params: &AutoencoderParams, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != params.input_size() {
        return Err(Error::shape("encode input width", params.input_size(), x.ncols()));
    }
    let mut z = affine(x.view(), &params.w1, &params.b1);
    sigmoid_inplace(&mut z);
    Ok(z)
}

pub fn decode(params: &AutoencoderParams, h: &Matrix) -> Result<Matrix> {
    if h.ncols() != params.hidden_size() {
        return Err(Error::shape("decode input width", params.hidden_size(), h.ncols()));
    }
    let mut z = affine(h.view(), &params.w2, &params.b2);
    sigmoid_inplace(&mut z);
    Ok(z)
}

pub fn reconstruct(params: &AutoencoderParams, x: &Matrix) -> Result<Matrix> {
    decode(params, &encode(params, x)?)
}

/// Mean over samples of half the squared reconstruction error.
pub fn reconstruction_cost(x: &Matrix, xhat: &Matrix) -> Result<f64> {
    if x.dim() != xhat.dim() {
        return Err(Error::shape(
            "reconstruction",
            format!("{:?}", x.dim()),
            format!("{:?}", xhat.dim()),
        ));
    }
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let sq: f64 = Zip::from(x).and(xhat).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
    Ok(0.5 * sq / x.nrows() as f64)
}

pub fn mean_hidden_activation(h: &Matrix) -> Result<Vector> {
    h.mean_axis(Axis(0))
        .ok_or_else(|| Error::Data("mean activation of an empty dataset".into()))
}

fn kl_term(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Sum over units of the Bernoulli KL divergence between `p` and each mean
/// activation.
pub fn kl_sparsity(p: f64, phat: &Vector) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("sparsity target {p} outside (0,1)")));
    }
    let mut total = 0.0;
    for (unit, &q) in phat.iter().enumerate() {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Saturated { unit, value: q });
        }
        total += kl_term(p, q);
    }
    Ok(total)
}

fn clamp_activation(q: f64) -> f64 {
    q.clamp(SATURATION_GUARD, 1.0 - SATURATION_GUARD)
}

/// KL sparsity with mean activations clamped away from 0 and 1.
pub fn kl_sparsity_guarded(p: f64, phat: &Vector) -> f64 {
    phat.iter().map(|&q| kl_term(p, clamp_activation(q))).sum()
}

/// f(w): w² for negative weights, zero otherwise.
#[inline]
pub fn nonneg_penalty_value(w: f64) -> f64 {
    if w < 0.0 {
        w * w
    } else {
        0.0
    }
}

/// g(w): w for negative weights, zero otherwise (including w = 0).
#[inline]
pub fn nonneg_penalty_grad(w: f64) -> f64 {
    if w < 0.0 {
        w
    } else {
        0.0
    }
}

/// Σ f(w) over every entry of the given weight matrices.
pub fn nonneg_penalty<'a>(weights: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    weights
        .into_iter()
        .map(|m| m.iter().map(|&w| nonneg_penalty_value(w)).sum::<f64>())
        .sum()
}

/// Σ w² over every entry. The λ/2 factor belongs to the objective.
pub fn weight_decay<'a>(weights: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    sum_of_squares(weights)
}

/// Each entry zeroed independently with probability `rate`.
pub fn corrupt_input<R: Rng>(x: &Matrix, rate: f64, rng: &mut R) -> Matrix {
    if rate <= 0.0 {
        return x.clone();
    }
    x.mapv(|v| if rng.random::<f64>() < rate { 0.0 } else { v })
}

/// Inverted-dropout mask: 0 with probability `rate`, else 1/(1−rate).
pub fn dropout_mask<R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub fn dropout_hidden<R: Rng>(h: &Matrix, rate: f64, rng: &mut R) -> Matrix {
    if rate <= 0.0 {
        return h.clone();
    }
    h * &dropout_mask(h.dim(), rate, rng)
}

/// The three components of a training objective, unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub reconstruction: f64,
    /// KL divergence (guarded) before multiplying by β.
    pub sparsity: f64,
    /// Σw² (SAE) or Σf(w) (NCAE) before multiplying by λ/2 or α/2.
    pub regularizer: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        let weight = match cfg.objective {
            ObjectiveKind::Sae => cfg.lambda,
            ObjectiveKind::Ncae => cfg.alpha,
        };
        self.reconstruction + cfg.beta * self.sparsity + 0.5 * weight * self.regularizer
    }
}

/// Evaluates each term independently through the public forward maps.
pub fn objective_terms(params: &AutoencoderParams, x: &Matrix, cfg: &TrainConfig) -> Result<ObjectiveTerms> {
    let h = encode(params, x)?;
    let xhat = decode(params, &h)?;
    let phat = mean_hidden_activation(&h)?;
    let regularizer = match cfg.objective {
        ObjectiveKind::Sae => weight_decay(params.weights()),
        ObjectiveKind::Ncae => nonneg_penalty(params.weights()),
    };
    Ok(ObjectiveTerms {
        reconstruction: reconstruction_cost(x, &xhat)?,
        sparsity: kl_sparsity_guarded(cfg.sparsity_target, &phat),
        regularizer,
    })
}

/// Batch objective bound to one dataset. The encoder sees `input` (possibly
/// corrupted) while the reconstruction target is always the clean data; an
/// optional fixed inverted-dropout mask multiplies the hidden layer.
pub struct AutoencoderObjective<'a> {
    input: &'a Matrix,
    target: &'a Matrix,
    hidden_mask: Option<&'a Matrix>,
    cfg: TrainConfig,
    exec: Exec,
}

struct ForwardChunk {
    rows: std::ops::Range<usize>,
    reconstruction: f64,
    grad_w2: Matrix,
    grad_b2: Vector,
    hidden: Matrix,
    /// ∂(m·J_E)/∂h after the dropout mask has been applied.
    hidden_error: Matrix,
    hidden_sum: Vector,
}

impl<'a> AutoencoderObjective<'a> {
    pub fn new(x: &'a Matrix, cfg: &TrainConfig) -> Self {
        Self {
            input: x,
            target: x,
            hidden_mask: None,
            cfg: cfg.clone(),
            exec: Exec::Sequential,
        }
    }

    pub fn with_corrupted_input(mut self, input: &'a Matrix) -> Self {
        assert_eq!(
            input.dim(),
            self.target.dim(),
            "corrupted input must match target shape"
        );
        self.input = input;
        self
    }

    pub fn with_hidden_mask(mut self, mask: &'a Matrix) -> Self {
        self.hidden_mask = Some(mask);
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    /// Cost and gradient at the flat parameter vector `theta`.
    pub fn evaluate(&self, theta: &Vector) -> (f64, Vector) {
        let n = self.target.ncols();
        let hidden = self.cfg.hidden_size;
        let params = AutoencoderParams::from_flat(n, hidden, theta).expect("theta matches layout");
        self.evaluate_params(&params)
    }

    pub fn evaluate_params(&self, params: &AutoencoderParams) -> (f64, Vector) {
        let m = self.target.nrows();
        let (hidden, n) = params.w1.dim();
        let cfg = &self.cfg;
        let mask = self.hidden_mask;

        let chunks = self.exec.map_chunks(m, CHUNK_ROWS, |rows| {
            let xin = self.input.slice(s![rows.clone(), ..]);
            let target = self.target.slice(s![rows.clone(), ..]);
            let mut h = affine(xin, &params.w1, &params.b1);
            sigmoid_inplace(&mut h);
            let hd = match mask {
                Some(mk) => &h * &mk.slice(s![rows.clone(), ..]),
                None => h.clone(),
            };
            let mut xhat = affine(hd.view(), &params.w2, &params.b2);
            sigmoid_inplace(&mut xhat);
            let mut delta = &xhat - &target;
            let reconstruction = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();
            Zip::from(&mut delta).and(&xhat).for_each(|d, &y| *d *= y * (1.0 - y));
            let grad_w2 = delta.t().dot(&hd);
            let grad_b2 = delta.sum_axis(Axis(0));
            let mut hidden_error = delta.dot(&params.w2);
            if let Some(mk) = mask {
                hidden_error *= &mk.slice(s![rows.clone(), ..]);
            }
            let hidden_sum = h.sum_axis(Axis(0));
            ForwardChunk {
                rows,
                reconstruction,
                grad_w2,
                grad_b2,
                hidden: h,
                hidden_error,
                hidden_sum,
            }
        });

        let mf = m as f64;
        let mut reconstruction = 0.0;
        let mut grad_w2 = Matrix::zeros((n, hidden));
        let mut grad_b2 = Vector::zeros(n);
        let mut hidden_sum = Vector::zeros(hidden);
        for c in &chunks {
            reconstruction += c.reconstruction;
            grad_w2 += &c.grad_w2;
            grad_b2 += &c.grad_b2;
            hidden_sum += &c.hidden_sum;
        }
        let phat = hidden_sum / mf;
        let p = cfg.sparsity_target;
        let sparsity_signal: Vector = phat.mapv(|q| {
            let q = clamp_activation(q);
            cfg.beta * (-p / q + (1.0 - p) / (1.0 - q))
        });

        let back = self.exec.map(chunks, |c| {
            let xin = self.input.slice(s![c.rows.clone(), ..]);
            let mut delta = c.hidden_error;
            if cfg.beta != 0.0 {
                delta += &sparsity_signal;
            }
            Zip::from(&mut delta)
                .and(&c.hidden)
                .for_each(|d, &a| *d *= a * (1.0 - a));
            (delta.t().dot(&xin), delta.sum_axis(Axis(0)))
        });
        let mut grad_w1 = Matrix::zeros((hidden, n));
        let mut grad_b1 = Vector::zeros(hidden);
        for (gw, gb) in &back {
            grad_w1 += gw;
            grad_b1 += gb;
        }
        grad_w1 /= mf;
        grad_b1 /= mf;
        grad_w2 /= mf;
        grad_b2 /= mf;

        let mut cost = reconstruction / mf;
        if cfg.beta != 0.0 {
            cost += cfg.beta * kl_sparsity_guarded(p, &phat);
        }
        match cfg.objective {
            ObjectiveKind::Sae if cfg.lambda != 0.0 => {
                cost += 0.5 * cfg.lambda * weight_decay(params.weights());
                grad_w1.scaled_add(cfg.lambda, &params.w1);
                grad_w2.scaled_add(cfg.lambda, &params.w2);
            }
            ObjectiveKind::Ncae if cfg.alpha != 0.0 => {
                cost += 0.5 * cfg.alpha * nonneg_penalty(params.weights());
                let a = cfg.alpha;
                Zip::from(&mut grad_w1)
                    .and(&params.w1)
                    .for_each(|g, &w| *g += a * nonneg_penalty_grad(w));
                Zip::from(&mut grad_w2)
                    .and(&params.w2)
                    .for_each(|g, &w| *g += a * nonneg_penalty_grad(w));
            }
            _ => {}
        }

        let grad = AutoencoderParams {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        };
        (cost, grad.flatten())
    }
}

/// Cost and flat gradient of the configured objective on clean inputs.
pub fn objective_and_gradient(params: &AutoencoderParams, x: &Matrix, cfg: &TrainConfig) -> Result<(f64, Vector)> {
    params.validate()?;
    cfg.validate()?;
    if x.ncols() != params.input_size() {
        return Err(Error::shape("objective input width", params.input_size(), x.ncols()));
    }
    if params.hidden_size() != cfg.hidden_size {
        return Err(Error::shape("hidden size", cfg.hidden_size, params.hidden_size()));
    }
    if x.nrows() == 0 {
        return Err(Error::Data("objective over an empty dataset".into()));
    }
    Ok(AutoencoderObjective::new(x, cfg).evaluate_params(params))
}

/// Central differences (J(θ+εeᵢ) − J(θ−εeᵢ)) / 2ε for every coordinate.
pub fn numerical_gradient<F: Fn(&Vector) -> f64>(cost: F, theta: &Vector, eps: f64) -> Vector {
    let mut probe = theta.clone();
    let mut grad = Vector::zeros(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = cost(&probe);
        probe[i] = orig - eps;
        let down = cost(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// [`numerical_gradient`] with coordinates split across `exec`.
pub fn numerical_gradient_with<F>(exec: Exec, cost: F, theta: &Vector, eps: f64) -> Vector
where
    F: Fn(&Vector) -> f64 + Sync + Send,
{
    let parts = exec.map_chunks(theta.len(), 64, |range| {
        let mut probe = theta.clone();
        range
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + eps;
                let up = cost(&probe);
                probe[i] = orig - eps;
                let down = cost(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * eps)
            })
            .collect::<Vec<_>>()
    });
    Vector::from(parts.concat())
}

/// Largest coordinate-wise discrepancy |a−n| / max(|a|, |n|, floor).
pub fn max_relative_error(analytic: &Vector, numeric: &Vector, floor: f64) -> f64 {
    Zip::from(analytic).and(numeric).fold(0.0f64, |acc, &a, &n| {
        acc.max((a - n).abs() / a.abs().max(n.abs()).max(floor))
    })
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub params: AutoencoderParams,
    pub report: OptimizerReport,
}

/// Trains one autoencoder on the full batch. Corruption and dropout masks are
/// drawn once from the config seed and held fixed so the objective seen by
/// the line search is deterministic.
pub fn train_autoencoder(data: &Dataset, cfg: &TrainConfig, opt: &OptimizerConfig) -> Result<TrainedAutoencoder> {
    cfg.validate()?;
    opt.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let x = &data.x;
    let n = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let init = AutoencoderParams::random(n, cfg.hidden_size, &mut rng);

    let corrupted = (cfg.input_corruption_rate > 0.0).then(|| corrupt_input(x, cfg.input_corruption_rate, &mut rng));
    let mask = (cfg.hidden_dropout_rate > 0.0)
        .then(|| dropout_mask((x.nrows(), cfg.hidden_size), cfg.hidden_dropout_rate, &mut rng));

    let mut objective = AutoencoderObjective::new(x, cfg).with_exec(opt.exec);
    if let Some(c) = &corrupted {
        objective = objective.with_corrupted_input(c);
    }
    if let Some(mk) = &mask {
        objective = objective.with_hidden_mask(mk);
    }

    let (theta, report) = optimizer::minimize(|t| objective.evaluate(t), init.flatten(), opt)?;
    if report.termination == Termination::LineSearchFailure {
        warn!(
            "{} training stopped early: line search failed after {} iterations (cost {:.6})",
            cfg.objective.name(),
            report.iterations_used,
            report.final_cost
        );
    }
    let params = AutoencoderParams::from_flat(n, cfg.hidden_size, &theta)?;
    Ok(TrainedAutoencoder { params, report })
}
