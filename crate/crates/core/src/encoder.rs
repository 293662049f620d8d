//! Embedding network: ReLU MLP trunk, linear embedding layer, linear
//! classifier head over pseudo-labels. Forward and backward passes are written
//! out by hand and parameters are updated with Adam.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sq_dist, Matrix, Rng};
use crate::subclass::SubClassMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Norm below which a vector is treated as zero when normalizing or
/// differentiating a distance.
const NORM_EPS: f64 = 1e-12;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Project embeddings onto the unit sphere before the head and the triplet term.
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden: vec![64, 64],
            embed_dim: 16,
            normalize: false,
        }
    }
}

/// Which samples count as negatives when mining triplets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// Negatives must belong to a different parent class.
    #[default]
    OtherParent,
    /// Any sample with a different pseudo-label, including sibling clusters.
    OtherPseudo,
}

/// Fully connected layer `y = W x + b` with its Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    m_weight: Vec<f64>,
    v_weight: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

impl Dense {
    fn from_params(weight: Matrix, bias: Vec<f64>) -> Self {
        let n = weight.data().len();
        let o = bias.len();
        Self {
            weight,
            bias,
            m_weight: vec![0.0; n],
            v_weight: vec![0.0; n],
            m_bias: vec![0.0; o],
            v_bias: vec![0.0; o],
        }
    }

    fn he(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / inputs.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..inputs * outputs)
            .map(|_| std * rng.next_gaussian())
            .collect();
        Self::from_params(
            Matrix::from_vec(outputs, inputs, w).expect("shape"),
            vec![0.0; outputs],
        )
    }

    fn head_row(inputs: usize, rng: &mut Rng) -> Vec<f64> {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        (0..inputs)
            .map(|_| bound * (2.0 * rng.next_f64() - 1.0))
            .collect()
    }

    fn inputs(&self) -> usize {
        self.weight.cols()
    }

    fn outputs(&self) -> usize {
        self.weight.rows()
    }

    /// `x · Wᵀ + b` for a batch of row vectors.
    fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        for (i, xi) in x.iter_rows().enumerate() {
            let row = out.row_mut(i);
            for (o, slot) in row.iter_mut().enumerate() {
                let w = self.weight.row(o);
                *slot = self.bias[o] + xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    fn backprop(&self, x: &Matrix, dy: &Matrix, grad: &mut DenseGrad, need_dx: bool) -> Option<Matrix> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        for i in 0..x.rows() {
            let xi = x.row(i);
            let dyi = dy.row(i);
            for o in 0..n_out {
                let g = dyi[o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let gw = &mut grad.weight[o * n_in..(o + 1) * n_in];
                for (slot, xv) in gw.iter_mut().zip(xi) {
                    *slot += g * xv;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = Matrix::zeros(x.rows(), n_in);
        for i in 0..x.rows() {
            let dyi = dy.row(i);
            let dxi = dx.row_mut(i);
            for (o, &g) in dyi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (slot, w) in dxi.iter_mut().zip(self.weight.row(o)) {
                    *slot += g * w;
                }
            }
        }
        Some(dx)
    }

    fn adam_update(&mut self, grad: &DenseGrad, lr: f64, step: u64) {
        let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
        adam(self.weight.data_mut(), &grad.weight, &mut self.m_weight, &mut self.v_weight, lr, bc1, bc2);
        adam(&mut self.bias, &grad.bias, &mut self.m_bias, &mut self.v_bias, lr, bc1, bc2);
    }

    fn copy_row_from(&mut self, dst: usize, src: &Dense, src_row: usize) {
        let n = self.inputs();
        let (d, s) = (dst * n, src_row * n);
        self.weight.row_mut(dst).copy_from_slice(src.weight.row(src_row));
        self.m_weight[d..d + n].copy_from_slice(&src.m_weight[s..s + n]);
        self.v_weight[d..d + n].copy_from_slice(&src.v_weight[s..s + n]);
        self.bias[dst] = src.bias[src_row];
        self.m_bias[dst] = src.m_bias[src_row];
        self.v_bias[dst] = src.v_bias[src_row];
    }

    fn is_consistent(&self) -> bool {
        let n = self.weight.rows() * self.weight.cols();
        self.weight.data().len() == n
            && self.m_weight.len() == n
            && self.v_weight.len() == n
            && self.bias.len() == self.weight.rows()
            && self.m_bias.len() == self.bias.len()
            && self.v_bias.len() == self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

fn adam(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Gradient buffer for one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weight: vec![0.0; layer.weight.data().len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Gradients of the training objective w.r.t. every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
    pub head: DenseGrad,
}

impl Gradients {
    /// Flattened in the same order as [`EncoderModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().chain(std::iter::once(&self.head)) {
            out.extend_from_slice(&g.weight);
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// An (anchor, positive, negative) index triple into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub triplet: f64,
    pub total: f64,
    pub margin: f64,
}

/// Per-step training options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub margin: f64,
    pub learning_rate: f64,
    pub use_triplet: bool,
    pub negatives: NegativePolicy,
}

struct ForwardCache {
    /// Input to each trunk layer; `inputs[0]` is the batch.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each trunk layer (the last one is the raw embedding).
    pre: Vec<Matrix>,
    /// Row norms of the raw embedding (only when normalizing).
    norms: Vec<f64>,
    embeddings: Matrix,
    logits: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    config: EncoderConfig,
    layers: Vec<Dense>,
    head: Dense,
    step: u64,
}

impl EncoderModel {
    /// He-initialized trunk and a head with `num_outputs` rows drawn
    /// uniformly from `±1/√embed_dim`.
    pub fn new(config: EncoderConfig, num_outputs: usize, rng: &mut Rng) -> Result<Self> {
        if config.input_dim == 0 || config.embed_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::param("encoder", "all layer widths must be positive"));
        }
        if num_outputs == 0 {
            return Err(Error::param("num_outputs", "must be positive"));
        }
        let mut layers = Vec::with_capacity(config.hidden.len() + 1);
        let mut width = config.input_dim;
        for &h in config.hidden.iter().chain(std::iter::once(&config.embed_dim)) {
            layers.push(Dense::he(width, h, rng));
            width = h;
        }
        let head = Self::fresh_head(config.embed_dim, num_outputs, rng);
        Ok(Self {
            config,
            layers,
            head,
            step: 0,
        })
    }

    /// Assembles a model from explicit `(weight, bias)` pairs; Adam state starts at zero.
    pub fn from_parts(
        config: EncoderConfig,
        layers: Vec<(Matrix, Vec<f64>)>,
        head: (Matrix, Vec<f64>),
    ) -> Result<Self> {
        let model = Self {
            config,
            layers: layers
                .into_iter()
                .map(|(w, b)| Dense::from_params(w, b))
                .collect(),
            head: Dense::from_params(head.0, head.1),
            step: 0,
        };
        model.validate()?;
        Ok(model)
    }

    fn fresh_head(embed_dim: usize, rows: usize, rng: &mut Rng) -> Dense {
        let mut w = Vec::with_capacity(rows * embed_dim);
        for _ in 0..rows {
            w.extend(Dense::head_row(embed_dim, rng));
        }
        Dense::from_params(
            Matrix::from_vec(rows, embed_dim, w).expect("shape"),
            vec![0.0; rows],
        )
    }

    /// Checks that layer shapes chain and buffers agree.
    pub fn validate(&self) -> Result<()> {
        let mut width = self.config.input_dim;
        let expected: Vec<usize> = self
            .config
            .hidden
            .iter()
            .copied()
            .chain(std::iter::once(self.config.embed_dim))
            .collect();
        if expected.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: expected.len(),
                got: self.layers.len(),
            });
        }
        for (layer, &out) in self.layers.iter().zip(&expected) {
            if !layer.is_consistent() || layer.inputs() != width || layer.outputs() != out {
                return Err(Error::Dimension {
                    expected: width,
                    got: layer.inputs(),
                });
            }
            width = out;
        }
        if !self.head.is_consistent() || self.head.inputs() != width || self.head.outputs() == 0 {
            return Err(Error::Dimension {
                expected: width,
                got: self.head.inputs(),
            });
        }
        Ok(())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn num_outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite) && self.head.is_finite()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                got: batch.cols(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, batch: &Matrix) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x);
            inputs.push(x);
            x = if l < last {
                let mut a = z.clone();
                a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let mut norms = Vec::new();
        if self.config.normalize {
            for i in 0..x.rows() {
                let row = x.row_mut(i);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms.push(n);
                if n > NORM_EPS {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        let logits = self.head.apply(&x);
        ForwardCache {
            inputs,
            pre,
            norms,
            embeddings: x,
            logits,
        }
    }

    /// Embeddings `(B×E)` and pseudo-label logits `(B×P)`.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(batch)?;
        let c = self.forward_cached(batch);
        Ok((c.embeddings, c.logits))
    }

    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(e, _)| e)
    }

    /// Arg-max pseudo-label per row; ties go to the lowest index.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let (_, logits) = self.forward(batch)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// Loss and full gradient for fixed triplets. `triplets = None` disables the triplet term.
    pub fn loss_and_gradients(
        &self,
        batch: &Matrix,
        pseudo_labels: &[usize],
        triplets: Option<&[Triplet]>,
        margin: f64,
    ) -> Result<(LossBreakdown, Gradients)> {
        self.check_input(batch)?;
        if pseudo_labels.len() != batch.rows() {
            return Err(Error::Dimension {
                expected: batch.rows(),
                got: pseudo_labels.len(),
            });
        }
        let cache = self.forward_cached(batch);
        let (ce, dlogits) = cross_entropy_loss(&cache.logits, pseudo_labels)?;
        let mut grads = Gradients {
            layers: self.layers.iter().map(DenseGrad::zeros_like).collect(),
            head: DenseGrad::zeros_like(&self.head),
        };
        let mut d_emb = self
            .head
            .backprop(&cache.embeddings, &dlogits, &mut grads.head, true)
            .expect("dx requested");

        let mut trip = 0.0;
        if let Some(ts) = triplets {
            let (t, g) = triplet_loss(&cache.embeddings, ts, margin)?;
            trip = t;
            for (d, gv) in d_emb.data_mut().iter_mut().zip(g.data()) {
                *d += gv;
            }
        }

        if self.config.normalize {
            for i in 0..d_emb.rows() {
                let n = cache.norms[i];
                if n <= NORM_EPS {
                    continue;
                }
                let e = cache.embeddings.row(i);
                let g = d_emb.row_mut(i);
                let dot: f64 = e.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                for (gv, ev) in g.iter_mut().zip(e) {
                    *gv = (*gv - ev * dot) / n;
                }
            }
        }

        let mut upstream = d_emb;
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                // ReLU gate of trunk layer l
                for (u, z) in upstream.data_mut().iter_mut().zip(cache.pre[l].data()) {
                    if *z <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            let need_dx = l > 0;
            if let Some(dx) = self.layers[l].backprop(&cache.inputs[l], &upstream, &mut grads.layers[l], need_dx) {
                upstream = dx;
            }
        }

        let breakdown = LossBreakdown {
            cross_entropy: ce,
            triplet: trip,
            total: ce + trip,
            margin,
        };
        Ok((breakdown, grads))
    }

    /// One training step on the combined objective followed by an Adam update.
    pub fn backward_and_step(
        &mut self,
        batch: &Matrix,
        pseudo_labels: &[usize],
        parent_labels: &[usize],
        opts: &StepOptions,
        batch_index: usize,
    ) -> Result<LossBreakdown> {
        if parent_labels.len() != batch.rows() {
            return Err(Error::Dimension {
                expected: batch.rows(),
                got: parent_labels.len(),
            });
        }
        let triplets = if opts.use_triplet {
            let emb = self.embed(batch)?;
            Some(mine_triplets(&emb, pseudo_labels, parent_labels, opts.negatives)?)
        } else {
            None
        };
        let (loss, grads) =
            self.loss_and_gradients(batch, pseudo_labels, triplets.as_deref(), opts.margin)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { batch: batch_index });
        }
        self.apply_gradients(&grads, opts.learning_rate);
        if !self.is_finite() {
            return Err(Error::Divergence { batch: batch_index });
        }
        Ok(loss)
    }

    /// Adam update with the library's fixed betas and epsilon.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        self.step += 1;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.adam_update(g, lr, self.step);
        }
        self.head.adam_update(&grads.head, lr, self.step);
    }

    /// All parameters in layer order, weights before biases, head last.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.layers.iter().chain(std::iter::once(&self.head)) {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .chain(std::iter::once(&self.head))
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum();
        if params.len() != total {
            return Err(Error::Dimension {
                expected: total,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for l in self.layers.iter_mut().chain(std::iter::once(&mut self.head)) {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let b = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    /// Re-shapes the head for a new pseudo-label partition. Parents whose
    /// cluster count is unchanged keep their rows (and Adam moments); all
    /// other rows are re-drawn with zeroed moments. The trunk is untouched.
    pub fn resize_head(&mut self, old: &SubClassMap, new: &SubClassMap, rng: &mut Rng) -> Result<()> {
        if old.num_parents() != new.num_parents() {
            return Err(Error::Dimension {
                expected: old.num_parents(),
                got: new.num_parents(),
            });
        }
        if old.num_pseudo() != self.head.outputs() {
            return Err(Error::Dimension {
                expected: self.head.outputs(),
                got: old.num_pseudo(),
            });
        }
        let e = self.config.embed_dim;
        let mut head = Dense::from_params(Matrix::zeros(new.num_pseudo(), e), vec![0.0; new.num_pseudo()]);
        for c in 0..new.num_parents() {
            let (src, dst) = (old.pseudo_ids(c), new.pseudo_ids(c));
            if src.len() == dst.len() {
                for (&s, &d) in src.iter().zip(dst) {
                    head.copy_row_from(d, &self.head, s);
                }
            } else {
                for &d in dst {
                    head.weight.row_mut(d).copy_from_slice(&Dense::head_row(e, rng));
                }
            }
        }
        self.head = head;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&doc)?;
        fs::write(path, json).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let doc: CheckpointDoc = serde_json::from_str(&text)?;
        if doc.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::param(
                "schema_version",
                format!("unsupported checkpoint version {}", doc.schema_version),
            ));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    model: EncoderModel,
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension {
            expected: logits.rows(),
            got: labels.len(),
        });
    }
    let p = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= p) {
        return Err(Error::Label { label: bad, classes: p });
    }
    let b = logits.rows();
    if b == 0 {
        return Ok((0.0, Matrix::zeros(0, p)));
    }
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, p);
    let mut loss = 0.0;
    for (i, row) in logits.iter_rows().enumerate() {
        let top = argmax(row);
        let max = row[top];
        // log-sum-exp as max + ln(1 + Σ_{j≠top} e^{v_j − max}) keeps tiny losses representable
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let log_rest = rest.ln_1p();
        let lse = max + log_rest;
        loss += (max - row[labels[i]]) + log_rest;
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - lse).exp() * scale;
        }
        g[labels[i]] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean hinge `max(‖a−p‖ − ‖a−n‖ + margin, 0)` over `triplets` and its
/// gradient w.r.t. the embeddings. Inactive triplets (hinge ≤ 0) contribute
/// no gradient.
pub fn triplet_loss(embeddings: &Matrix, triplets: &[Triplet], margin: f64) -> Result<(f64, Matrix)> {
    if !(margin >= 0.0) {
        return Err(Error::param("margin", "must be >= 0"));
    }
    let b = embeddings.rows();
    let mut grad = Matrix::zeros(b, embeddings.cols());
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    for t in triplets {
        for idx in [t.anchor, t.positive, t.negative] {
            if idx >= b {
                return Err(Error::Label { label: idx, classes: b });
            }
        }
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    for t in triplets {
        let a = embeddings.row(t.anchor);
        let p = embeddings.row(t.positive);
        let n = embeddings.row(t.negative);
        let d_ap = sq_dist(a, p).sqrt();
        let d_an = sq_dist(a, n).sqrt();
        let hinge = d_ap - d_an + margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        let dim = a.len();
        let mut u_ap = vec![0.0; dim];
        let mut u_an = vec![0.0; dim];
        if d_ap > NORM_EPS {
            for k in 0..dim {
                u_ap[k] = (a[k] - p[k]) / d_ap;
            }
        }
        if d_an > NORM_EPS {
            for k in 0..dim {
                u_an[k] = (a[k] - n[k]) / d_an;
            }
        }
        for k in 0..dim {
            let ga = (u_ap[k] - u_an[k]) * scale;
            let gp = -u_ap[k] * scale;
            let gn = u_an[k] * scale;
            grad.row_mut(t.anchor)[k] += ga;
            grad.row_mut(t.positive)[k] += gp;
            grad.row_mut(t.negative)[k] += gn;
        }
    }
    Ok((loss * scale, grad))
}

/// Batch-hard mining: for each anchor, the farthest sample with the same
/// pseudo-label and the nearest valid negative. Anchors lacking either are
/// skipped. Distance ties resolve to the lowest index.
pub fn mine_triplets(
    embeddings: &Matrix,
    pseudo_labels: &[usize],
    parent_labels: &[usize],
    policy: NegativePolicy,
) -> Result<Vec<Triplet>> {
    let b = embeddings.rows();
    for labels in [pseudo_labels, parent_labels] {
        if labels.len() != b {
            return Err(Error::Dimension {
                expected: b,
                got: labels.len(),
            });
        }
    }
    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let d = sq_dist(embeddings.row(i), embeddings.row(j));
            dist[i * b + j] = d;
            dist[j * b + i] = d;
        }
    }
    let mut out = Vec::new();
    for a in 0..b {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = dist[a * b + j];
            if pseudo_labels[j] == pseudo_labels[a] {
                if pos.is_none_or(|p| d > dist[a * b + p]) {
                    pos = Some(j);
                }
            } else {
                let is_negative = match policy {
                    NegativePolicy::OtherParent => parent_labels[j] != parent_labels[a],
                    NegativePolicy::OtherPseudo => true,
                };
                if is_negative && neg.is_none_or(|n| d < dist[a * b + n]) {
                    neg = Some(j);
                }
            }
        }
        if let (Some(positive), Some(negative)) = (pos, neg) {
            out.push(Triplet {
                anchor: a,
                positive,
                negative,
            });
        }
    }
    Ok(out)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn emb_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (2usize..8, 1usize..4).prop_flat_map(|(b, e)| {
            (
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, e), b),
                prop::collection::vec(0usize..3, b),
            )
        })
    }

    proptest! {
        #[test]
        fn triplet_loss_nonnegative_and_translation_invariant(
            (rows, labels) in emb_strategy(),
            shift in -10.0f64..10.0,
            margin in 0.0f64..2.0,
        ) {
            let e = Matrix::from_rows(&rows).unwrap();
            let t = mine_triplets(&e, &labels, &labels, NegativePolicy::OtherParent).unwrap();
            let (l, _) = triplet_loss(&e, &t, margin).unwrap();
            prop_assert!(l >= 0.0);
            let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
            let (ls, _) = triplet_loss(&Matrix::from_rows(&shifted).unwrap(), &t, margin).unwrap();
            prop_assert!((l - ls).abs() < 1e-9 * (1.0 + l.abs()));
            let satisfied = t.iter().all(|t| {
                sq_dist(e.row(t.anchor), e.row(t.positive)).sqrt() + margin
                    <= sq_dist(e.row(t.anchor), e.row(t.negative)).sqrt()
            });
            if satisfied {
                prop_assert_eq!(l, 0.0);
            }
        }

        #[test]
        fn cross_entropy_permutation_equivariant(
            (rows, labels) in emb_strategy(),
            rot in 0usize..8,
        ) {
            let logits = Matrix::from_rows(&rows).unwrap();
            let labels: Vec<usize> = labels.iter().map(|&l| l % logits.cols()).collect();
            let b = rows.len();
            let perm: Vec<usize> = (0..b).map(|i| (i + rot) % b).collect();
            let plogits = logits.select_rows(&perm);
            let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let (a, _) = cross_entropy_loss(&logits, &labels).unwrap();
            let (c, _) = cross_entropy_loss(&plogits, &plabels).unwrap();
            prop_assert!((a - c).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}
