//! Stacked encoders topped by a softmax classifier: greedy layer-wise
//! pretraining, the (nonnegativity-constrained) softmax head, joint
//! fine-tuning and prediction.

use log::info;
use ndarray::{s, Axis, Zip};

use crate::autoencoder::{
    nonneg_penalty, nonneg_penalty_grad, train_autoencoder, AutoencoderParams, Dataset, TrainConfig,
};
use crate::coremath::{affine, as_column, into_vector, sigmoid_inplace, Matrix, ParamLayout, Vector};
use crate::error::{Error, Result};
use crate::optimizer::{self, OptimizerConfig, OptimizerReport};
use crate::par::{Exec, CHUNK_ROWS};

/// One encoder half: weights are outputs × inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub w: Matrix,
    pub b: Vector,
}

impl EncoderLayer {
    pub fn input_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = affine(x.view(), &self.w, &self.b);
        sigmoid_inplace(&mut z);
        z
    }
}

/// `softmax_w` holds one column of input weights per class. A network fresh
/// out of pretraining has zero classes and an empty head.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepNetwork {
    pub encoders: Vec<EncoderLayer>,
    pub softmax_w: Matrix,
    pub class_count: usize,
}

impl DeepNetwork {
    pub fn from_encoders(encoders: Vec<EncoderLayer>) -> Result<Self> {
        let top = encoders
            .last()
            .map(EncoderLayer::output_size)
            .ok_or_else(|| Error::Config("a deep network needs at least one encoder".into()))?;
        let net = Self {
            encoders,
            softmax_w: Matrix::zeros((top, 0)),
            class_count: 0,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn input_size(&self) -> usize {
        self.encoders[0].input_size()
    }

    pub fn top_size(&self) -> usize {
        self.encoders.last().map_or(0, EncoderLayer::output_size)
    }

    /// Layer widths from the input through the top encoder.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![self.input_size()];
        out.extend(self.encoders.iter().map(EncoderLayer::output_size));
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.encoders.windows(2).enumerate() {
            if pair[1].input_size() != pair[0].output_size() {
                return Err(Error::shape(
                    format!("encoder {} input", i + 2),
                    pair[0].output_size(),
                    pair[1].input_size(),
                ));
            }
        }
        for (i, e) in self.encoders.iter().enumerate() {
            if e.b.len() != e.output_size() {
                return Err(Error::shape(
                    format!("encoder {} bias", i + 1),
                    e.output_size(),
                    e.b.len(),
                ));
            }
        }
        if self.softmax_w.dim() != (self.top_size(), self.class_count) {
            return Err(Error::shape(
                "softmax weights",
                format!("{}x{}", self.top_size(), self.class_count),
                format!("{:?}", self.softmax_w.dim()),
            ));
        }
        Ok(())
    }

    pub fn layout_for(sizes: &[usize], classes: usize) -> ParamLayout {
        let mut layout = ParamLayout::new();
        for (l, pair) in sizes.windows(2).enumerate() {
            layout = layout
                .with(format!("W{}", l + 1), pair[1], pair[0])
                .with(format!("b{}", l + 1), pair[1], 1);
        }
        layout.with("softmax", *sizes.last().unwrap_or(&0), classes)
    }

    pub fn layout(&self) -> ParamLayout {
        Self::layout_for(&self.sizes(), self.class_count)
    }

    /// Flat ordering [W1; b1; …; WL; bL; softmax].
    pub fn flatten(&self) -> Vector {
        let mut views = Vec::with_capacity(2 * self.encoders.len() + 1);
        for e in &self.encoders {
            views.push(e.w.view());
            views.push(as_column(&e.b));
        }
        views.push(self.softmax_w.view());
        self.layout().flatten(&views).expect("network is self-consistent")
    }

    pub fn from_flat(sizes: &[usize], classes: usize, flat: &Vector) -> Result<Self> {
        let parts = Self::layout_for(sizes, classes).unflatten(flat.view())?;
        let mut it = parts.into_iter();
        let mut encoders = Vec::with_capacity(sizes.len() - 1);
        for _ in 1..sizes.len() {
            let w = it.next().expect("weight segment");
            let b = into_vector(it.next().expect("bias segment"));
            encoders.push(EncoderLayer { w, b });
        }
        let softmax_w = it.next().expect("softmax segment");
        Ok(Self {
            encoders,
            softmax_w,
            class_count: classes,
        })
    }

    /// Top-layer hidden activations.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_size() {
            return Err(Error::shape("network input width", self.input_size(), x.ncols()));
        }
        let mut a = x.clone();
        for e in &self.encoders {
            a = e.forward(&a);
        }
        Ok(a)
    }

    /// Class scores wᵀₚ·a for every sample.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.features(x)?.dot(&self.softmax_w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    /// Penalty on negative softmax weights. Encoder weights are never penalised.
    pub alpha: f64,
    pub optimizer: OptimizerConfig,
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "fine-tune alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        self.optimizer.validate()
    }
}

fn check_labels(y: &[usize], m: usize, k: usize) -> Result<()> {
    if y.len() != m {
        return Err(Error::shape("labels", m, y.len()));
    }
    match y.iter().enumerate().find(|(_, &l)| l >= k) {
        Some((index, &label)) => Err(Error::Label {
            index,
            label,
            classes: k,
        }),
        None => Ok(()),
    }
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_probabilities(scores: &Matrix) -> Matrix {
    let mut p = scores.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    p
}

/// Σ_r [logsumexp(scores_r) − scores_r,y_r], and scores are overwritten with
/// the unnormalised gradient P − Y.
fn softmax_loss_in_place(scores: &mut Matrix, y: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (mut row, &label) in scores.rows_mut().into_iter().zip(y) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let target = row[label];
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        loss += max + total.ln() - target;
        row /= total;
        row[label] -= 1.0;
    }
    loss
}

/// Mean cross-entropy of a bias-free softmax layer and its gradient with
/// respect to `w` (features × classes).
pub fn softmax_cost_grad(w: &Matrix, x: &Matrix, y: &[usize], k: usize) -> Result<(f64, Matrix)> {
    if w.dim() != (x.ncols(), k) {
        return Err(Error::shape(
            "softmax weights",
            format!("{}x{k}", x.ncols()),
            format!("{:?}", w.dim()),
        ));
    }
    check_labels(y, x.nrows(), k)?;
    if x.nrows() == 0 {
        return Err(Error::Data("softmax cost over an empty dataset".into()));
    }
    let m = x.nrows() as f64;
    let mut scores = x.dot(w);
    let loss = softmax_loss_in_place(&mut scores, y);
    let grad = x.t().dot(&scores) / m;
    Ok((loss / m, grad))
}

/// Softmax cost plus (α/2)·Σf(w) on the softmax weights.
pub fn nc_softmax_cost_grad(w: &Matrix, x: &Matrix, y: &[usize], k: usize, alpha: f64) -> Result<(f64, Matrix)> {
    let (mut cost, mut grad) = softmax_cost_grad(w, x, y, k)?;
    if alpha != 0.0 {
        cost += 0.5 * alpha * nonneg_penalty([w]);
        Zip::from(&mut grad)
            .and(w)
            .for_each(|g, &v| *g += alpha * nonneg_penalty_grad(v));
    }
    Ok((cost, grad))
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub network: DeepNetwork,
    /// Full encoder/decoder pair of every layer, decoders included.
    pub autoencoders: Vec<AutoencoderParams>,
    pub reports: Vec<OptimizerReport>,
}

/// One autoencoder per entry of `layer_sizes`, each trained on the hidden
/// activations of the previous one. `cfg.hidden_size` is overridden per
/// layer and the seed is offset by the layer index.
pub fn greedy_pretrain(
    data: &Dataset,
    layer_sizes: &[usize],
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<Pretrained> {
    let per_layer: Vec<TrainConfig> = layer_sizes
        .iter()
        .enumerate()
        .map(|(l, &size)| TrainConfig {
            hidden_size: size,
            rng_seed: cfg.rng_seed.wrapping_add(l as u64),
            ..cfg.clone()
        })
        .collect();
    greedy_pretrain_layers(data, &per_layer, opt)
}

/// Greedy pretraining with an explicit config for every layer.
pub fn greedy_pretrain_layers(data: &Dataset, layers: &[TrainConfig], opt: &OptimizerConfig) -> Result<Pretrained> {
    if layers.is_empty() {
        return Err(Error::Config("greedy pretraining needs at least one layer".into()));
    }
    let mut input = Dataset::unlabeled(data.x.clone())?;
    let mut encoders = Vec::with_capacity(layers.len());
    let mut reports = Vec::with_capacity(layers.len());
    let mut autoencoders = Vec::with_capacity(layers.len());
    for (l, cfg) in layers.iter().enumerate() {
        info!(
            "pretraining layer {} ({} -> {}, {})",
            l + 1,
            input.dim(),
            cfg.hidden_size,
            cfg.objective.name()
        );
        let trained = train_autoencoder(&input, cfg, opt)?;
        let layer = EncoderLayer {
            w: trained.params.w1.clone(),
            b: trained.params.b1.clone(),
        };
        autoencoders.push(trained.params);
        if l + 1 < layers.len() {
            input = Dataset {
                x: layer.forward(&input.x),
                labels: None,
                class_count: 0,
            };
        }
        encoders.push(layer);
        reports.push(trained.report);
    }
    Ok(Pretrained {
        network: DeepNetwork::from_encoders(encoders)?,
        autoencoders,
        reports,
    })
}

/// Fits the softmax head on top-layer features with the encoders frozen.
/// Starts from zero weights.
pub fn train_softmax_head(
    net: &DeepNetwork,
    data: &Dataset,
    alpha: f64,
    opt: &OptimizerConfig,
) -> Result<(DeepNetwork, OptimizerReport)> {
    let y = data.labels_required()?;
    let k = data.class_count;
    if k == 0 {
        return Err(Error::Data("labeled dataset declares zero classes".into()));
    }
    check_labels(y, data.len(), k)?;
    let features = net.features(&data.x)?;
    let s = features.ncols();
    let objective = |theta: &Vector| {
        let w = theta
            .view()
            .into_shape_with_order((s, k))
            .expect("head shape")
            .to_owned();
        let (c, g) = nc_softmax_cost_grad(&w, &features, y, k, alpha).expect("validated inputs");
        (c, into_vector(g.into_shape_with_order((s * k, 1)).expect("contiguous")))
    };
    let (theta, report) = optimizer::minimize(objective, Vector::zeros(s * k), opt)?;
    let mut out = net.clone();
    out.softmax_w = theta.into_shape_with_order((s, k)).expect("head shape");
    out.class_count = k;
    Ok((out, report))
}

/// Joint objective over every encoder and the softmax head.
pub struct FineTuneObjective<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    sizes: Vec<usize>,
    classes: usize,
    alpha: f64,
    exec: Exec,
}

struct ChunkGrad {
    loss: f64,
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    softmax: Matrix,
}

impl<'a> FineTuneObjective<'a> {
    pub fn new(net: &DeepNetwork, x: &'a Matrix, y: &'a [usize], alpha: f64) -> Self {
        Self {
            x,
            y,
            sizes: net.sizes(),
            classes: net.class_count,
            alpha,
            exec: Exec::Sequential,
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn evaluate(&self, theta: &Vector) -> (f64, Vector) {
        let net = DeepNetwork::from_flat(&self.sizes, self.classes, theta).expect("theta matches layout");
        self.evaluate_network(&net)
    }

    pub fn evaluate_network(&self, net: &DeepNetwork) -> (f64, Vector) {
        let m = self.x.nrows();
        let chunks = self.exec.map_chunks(m, CHUNK_ROWS, |rows| {
            let mut acts = Vec::with_capacity(net.encoders.len() + 1);
            acts.push(self.x.slice(s![rows.clone(), ..]).to_owned());
            for e in &net.encoders {
                let next = e.forward(acts.last().expect("nonempty"));
                acts.push(next);
            }
            let top = acts.last().expect("nonempty");
            let mut d_scores = top.dot(&net.softmax_w);
            let loss = softmax_loss_in_place(&mut d_scores, &self.y[rows]);
            let softmax = top.t().dot(&d_scores);
            let mut upstream = d_scores.dot(&net.softmax_w.t());
            let mut weights = Vec::with_capacity(net.encoders.len());
            let mut biases = Vec::with_capacity(net.encoders.len());
            for l in (0..net.encoders.len()).rev() {
                let a = &acts[l + 1];
                Zip::from(&mut upstream).and(a).for_each(|d, &v| *d *= v * (1.0 - v));
                weights.push(upstream.t().dot(&acts[l]));
                biases.push(upstream.sum_axis(Axis(0)));
                if l > 0 {
                    upstream = upstream.dot(&net.encoders[l].w);
                }
            }
            weights.reverse();
            biases.reverse();
            ChunkGrad {
                loss,
                weights,
                biases,
                softmax,
            }
        });

        let mf = m as f64;
        let mut iter = chunks.into_iter();
        let mut acc = iter.next().expect("at least one sample");
        for c in iter {
            acc.loss += c.loss;
            acc.softmax += &c.softmax;
            for (a, b) in acc.weights.iter_mut().zip(&c.weights) {
                *a += b;
            }
            for (a, b) in acc.biases.iter_mut().zip(&c.biases) {
                *a += b;
            }
        }
        let mut cost = acc.loss / mf;
        acc.softmax /= mf;
        if self.alpha != 0.0 {
            cost += 0.5 * self.alpha * nonneg_penalty([&net.softmax_w]);
            let a = self.alpha;
            Zip::from(&mut acc.softmax)
                .and(&net.softmax_w)
                .for_each(|g, &v| *g += a * nonneg_penalty_grad(v));
        }
        let encoders = acc
            .weights
            .into_iter()
            .zip(acc.biases)
            .map(|(w, b)| EncoderLayer { w: w / mf, b: b / mf })
            .collect();
        let grad = DeepNetwork {
            encoders,
            softmax_w: acc.softmax,
            class_count: self.classes,
        };
        (cost, grad.flatten())
    }
}

/// Cost and flat gradient of the fine-tuning objective at `net`.
pub fn fine_tune_cost_grad(net: &DeepNetwork, x: &Matrix, y: &[usize], alpha: f64) -> Result<(f64, Vector)> {
    net.validate()?;
    if net.class_count == 0 {
        return Err(Error::Config("softmax head has not been trained".into()));
    }
    if x.ncols() != net.input_size() {
        return Err(Error::shape("network input width", net.input_size(), x.ncols()));
    }
    check_labels(y, x.nrows(), net.class_count)?;
    if x.nrows() == 0 {
        return Err(Error::Data("fine-tuning over an empty dataset".into()));
    }
    Ok(FineTuneObjective::new(net, x, y, alpha).evaluate_network(net))
}

/// Supervised fine-tuning of all encoder weights, biases and the softmax head.
pub fn fine_tune(net: &DeepNetwork, data: &Dataset, cfg: &FineTuneConfig) -> Result<(DeepNetwork, OptimizerReport)> {
    cfg.validate()?;
    let y = data.labels_required()?;
    fine_tune_cost_grad(net, &data.x, y, cfg.alpha)?;
    let objective = FineTuneObjective::new(net, &data.x, y, cfg.alpha).with_exec(cfg.optimizer.exec);
    let (theta, report) = optimizer::minimize(|t| objective.evaluate(t), net.flatten(), &cfg.optimizer)?;
    let tuned = DeepNetwork::from_flat(&net.sizes(), net.class_count, &theta)?;
    Ok((tuned, report))
}

/// Index of the largest score per row, lowest index on ties.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn predict(net: &DeepNetwork, x: &Matrix) -> Result<Vec<usize>> {
    if net.class_count == 0 {
        return Err(Error::Config("softmax head has not been trained".into()));
    }
    Ok(argmax_rows(&net.scores(x)?))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("accuracy", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
