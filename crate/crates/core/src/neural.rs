//! Minimal trainable core: a small perceptron stack with rectified-linear
//! hidden units, inverted dropout, and a sigmoid output; binary cross-entropy
//! loss; Adam; and seed-deterministic minibatch training.
//!
//! Backpropagation is written out by hand and checked against central finite
//! differences in the test suite. Depth is a knob (1 = plain linear + sigmoid,
//! up to 4 layers); hidden layers all share `d_hidden` units.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::VsParams;
use crate::dataset::{ConfidenceTable, TableEntry};
use crate::metrics;
use crate::{Error, Result};

/// One dense layer, row-major weights (`rows x cols`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl DenseLayer {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Perceptron parameters: zero or more ReLU+dropout hidden layers followed by
/// a single sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Hidden layers then the 1-row output layer.
    pub layers: Vec<DenseLayer>,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl MlpParams {
    /// Seed-derived uniform init on +-sqrt(6/(fan_in+fan_out)) per layer.
    pub fn init(d_in: usize, d_hidden: usize, depth: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(1..=4).contains(&depth) {
            return Err(Error::InvalidArgument(format!(
                "depth must lie in 1..=4, got {depth}"
            )));
        }
        if d_in == 0 || d_hidden == 0 {
            return Err(Error::InvalidArgument("zero layer width".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = d_in;
        for _ in 0..depth - 1 {
            layers.push(init_layer(d_hidden, fan_in, rng));
            fan_in = d_hidden;
        }
        layers.push(init_layer(1, fan_in, rng));
        Ok(MlpParams {
            layers,
            d_in,
            d_hidden,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("mlp has no layers".into()));
        }
        let mut fan_in = self.d_in;
        for (i, layer) in self.layers.iter().enumerate() {
            let expect_rows = if i + 1 == self.layers.len() {
                1
            } else {
                self.d_hidden
            };
            if layer.rows != expect_rows || layer.cols != fan_in {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} has shape {}x{}, expected {expect_rows}x{fan_in}",
                    layer.rows, layer.cols
                )));
            }
            if layer.w.len() != layer.rows * layer.cols || layer.b.len() != layer.rows {
                return Err(Error::InvalidArgument(format!("layer {i} buffer sizes")));
            }
            if layer.w.iter().chain(&layer.b).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            fan_in = layer.rows;
        }
        Ok(())
    }
}

fn init_layer(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let w = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    DenseLayer {
        w,
        b: vec![0.0; rows],
        rows,
        cols,
    }
}

/// Per-unit keep masks for every hidden layer of one forward pass.
pub fn sample_dropout_masks(params: &MlpParams, p: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    (0..params.hidden_count())
        .map(|_| (0..params.d_hidden).map(|_| rng.random::<f64>() >= p).collect())
        .collect()
}

/// Intermediate values of one forward pass, needed by [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Post-ReLU, post-dropout activations of each hidden layer.
    act: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<bool>>>,
    dropout_p: f64,
    out_sigmoid: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass. Supply `dropout` only in training mode; kept units are
/// scaled by `1/(1-p)` so the eval-mode pass needs no rescaling.
pub fn mlp_forward(
    params: &MlpParams,
    input: &[f64],
    dropout: Option<(&[Vec<bool>], f64)>,
) -> Result<(f64, ForwardCache)> {
    if input.len() != params.d_in {
        return Err(Error::dim("mlp input", params.d_in, input.len()));
    }
    if let Some((masks, p)) = dropout {
        if masks.len() != params.hidden_count() {
            return Err(Error::dim(
                "dropout masks",
                params.hidden_count(),
                masks.len(),
            ));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout_p must lie in [0,1), got {p}"
            )));
        }
    }
    let mut pre = Vec::with_capacity(params.hidden_count());
    let mut act = Vec::with_capacity(params.hidden_count());
    let mut current = input.to_vec();
    let mut buf = Vec::new();
    for (l, layer) in params.layers[..params.hidden_count()].iter().enumerate() {
        layer.apply(&current, &mut buf);
        pre.push(buf.clone());
        let mut a: Vec<f64> = buf.iter().map(|&z| z.max(0.0)).collect();
        if let Some((masks, p)) = dropout {
            let keep_scale = 1.0 / (1.0 - p);
            for (v, &keep) in a.iter_mut().zip(&masks[l]) {
                *v = if keep { *v * keep_scale } else { 0.0 };
            }
        }
        act.push(a.clone());
        current = a;
    }
    let out_layer = params.layers.last().expect("validated non-empty");
    out_layer.apply(&current, &mut buf);
    let out = sigmoid(buf[0]);
    let cache = ForwardCache {
        input: input.to_vec(),
        pre,
        act,
        masks: dropout.map(|(m, _)| m.to_vec()),
        dropout_p: dropout.map(|(_, p)| p).unwrap_or(0.0),
        out_sigmoid: out,
    };
    Ok((out, cache))
}

const BCE_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Binary cross-entropy with predictions clamped to `[1e-7, 1-1e-7]`.
pub fn bce_loss(pred: f64, target: bool) -> f64 {
    let p = clamp_prob(pred);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce_loss`] with respect to the prediction.
pub fn bce_grad(pred: f64, target: bool) -> f64 {
    let p = clamp_prob(pred);
    let t = if target { 1.0 } else { 0.0 };
    (p - t) / (p * (1.0 - p))
}

/// Gradient buffers matching [`MlpParams`] layer for layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<LayerBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBuf {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| LayerBuf {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for x in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *x *= factor;
            }
        }
    }
}

/// Exact gradients of a scalar loss with respect to every parameter, given
/// the upstream derivative of the loss with respect to the sigmoid output.
/// Dropout masks recorded in the cache are honored; the ReLU subgradient at
/// exactly zero is taken to be zero.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, upstream: f64) -> MlpGrads {
    let mut grads = MlpGrads::zeros_like(params);
    let out = cache.out_sigmoid;
    // d(loss)/d(out_pre) through the sigmoid.
    let mut delta = vec![upstream * out * (1.0 - out)];

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 { &cache.input } else { &cache.act[l - 1] };
        let g = &mut grads.layers[l];
        for (r, &d) in delta.iter().enumerate() {
            g.b[r] = d;
            let row = &mut g.w[r * layer.cols..(r + 1) * layer.cols];
            for (gw, x) in row.iter_mut().zip(input) {
                *gw = d * x;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous hidden layer's activations.
        let mut d_prev = vec![0.0f64; layer.cols];
        for (r, &d) in delta.iter().enumerate() {
            let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
            for (dp, w) in d_prev.iter_mut().zip(row) {
                *dp += d * w;
            }
        }
        // Through dropout, then through the rectifier.
        let h = l - 1; // previous hidden layer index
        if let Some(masks) = &cache.masks {
            let keep_scale = 1.0 / (1.0 - cache.dropout_p);
            for (dp, &keep) in d_prev.iter_mut().zip(&masks[h]) {
                *dp = if keep { *dp * keep_scale } else { 0.0 };
            }
        }
        for (dp, &z) in d_prev.iter_mut().zip(&cache.pre[h]) {
            if z <= 0.0 {
                *dp = 0.0;
            }
        }
        delta = d_prev;
    }
    grads
}

/// Training hyperparameters for the binary heads and vector scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_p: f64,
    pub seed: u64,
    pub early_stop: EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    None,
    ValAurc,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 8e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 30,
            dropout_p: 0.1,
            seed: 0,
            early_stop: EarlyStop::ValAurc,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned for the small fusion heads this crate trains: their
    /// parameter count is a few thousand, so the conservative base learning
    /// rate undershoots badly within 30 epochs. Everything else matches
    /// [`TrainConfig::default`].
    pub fn for_heads(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::InvalidArgument("rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout_p must lie in [0,1), got {}",
                self.dropout_p
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam moment accumulators matching an [`MlpParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpGrads,
    pub v: MlpGrads,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &MlpParams) -> Self {
        AdamState {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            t: 0,
        }
    }
}

fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grads[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

/// Standard bias-corrected Adam step; increments the step counter.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let t = state.t;
    for ((layer, grad), (m, v)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut().zip(state.v.layers.iter_mut()))
    {
        adam_update_slice(&mut layer.w, &grad.w, &mut m.w, &mut v.w, t, cfg);
        adam_update_slice(&mut layer.b, &grad.b, &mut m.b, &mut v.b, t, cfg);
    }
}

/// Per-epoch diagnostics of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub val_aurc: Vec<f64>,
    /// Epoch (0-based) whose snapshot was returned, when early stopping ran.
    pub best_epoch: Option<usize>,
}

fn val_aurc_of_head(params: &MlpParams, validation: &[(Vec<f64>, bool)]) -> Result<f64> {
    let entries = validation
        .iter()
        .enumerate()
        .map(|(i, (x, t))| {
            let (p, _) = mlp_forward(params, x, None)?;
            Ok(TableEntry {
                id: i.to_string(),
                confidence: p,
                correct: *t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    metrics::aurc(&ConfidenceTable::new(entries, "val")?)
}

/// Train a single binary head with minibatch Adam on BCE.
///
/// Deterministic given the seed: init is the caller's, shuffling and dropout
/// masks are drawn from one seeded stream. With `EarlyStop::ValAurc` and a
/// validation set, the returned parameters are the epoch snapshot with the
/// lowest validation AURC; otherwise the final epoch's.
pub fn train_binary_head(
    params0: MlpParams,
    dataset: &[(Vec<f64>, bool)],
    config: &TrainConfig,
    validation: Option<&[(Vec<f64>, bool)]>,
) -> Result<(MlpParams, TrainTrace)> {
    config.validate()?;
    params0.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    let mut params = params0;
    let mut trace = TrainTrace {
        train_loss: Vec::new(),
        val_aurc: Vec::new(),
        best_epoch: None,
    };
    if config.epochs == 0 {
        return Ok((params, trace));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::zeros_like(&params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut best: Option<(f64, MlpParams, usize)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = MlpGrads::zeros_like(&params);
            for &i in batch {
                let (x, t) = &dataset[i];
                let masks = (config.dropout_p > 0.0)
                    .then(|| sample_dropout_masks(&params, config.dropout_p, &mut rng));
                let dropout = masks.as_ref().map(|m| (m.as_slice(), config.dropout_p));
                let (p, cache) = mlp_forward(&params, x, dropout)?;
                epoch_loss += bce_loss(p, *t);
                let sample = mlp_backward(&params, &cache, bce_grad(p, *t));
                grads.add_assign(&sample);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &grads, &mut state, config);
        }
        trace.train_loss.push(epoch_loss / dataset.len() as f64);

        if config.early_stop == EarlyStop::ValAurc {
            if let Some(val) = validation {
                let aurc = val_aurc_of_head(&params, val)?;
                trace.val_aurc.push(aurc);
                if best.as_ref().is_none_or(|(b, _, _)| aurc < *b) {
                    best = Some((aurc, params.clone(), epoch));
                }
            }
        }
    }
    if let Some((_, snapshot, epoch)) = best {
        params = snapshot;
        trace.best_epoch = Some(epoch);
    }
    Ok((params, trace))
}

/// Fit vector-scaling parameters (diagonal scale init 1, bias init 0) by
/// minimizing the mean per-class BCE between `sigmoid(w_k l_k + b_k)` and the
/// one-hot label, with minibatch Adam.
pub fn vs_train(logit_set: &[(Vec<f64>, usize)], config: &TrainConfig) -> Result<VsParams> {
    config.validate()?;
    if logit_set.is_empty() {
        return Err(Error::EmptyInput("vector-scaling training set".into()));
    }
    let k = logit_set[0].0.len();
    if k == 0 {
        return Err(Error::EmptyInput("logit vector".into()));
    }
    for (logits, label) in logit_set {
        if logits.len() != k {
            return Err(Error::dim("vs logits", k, logits.len()));
        }
        if *label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range [0, {k})"
            )));
        }
    }

    let mut w = vec![1.0f64; k];
    let mut b = vec![0.0f64; k];
    let (mut m_w, mut v_w) = (vec![0.0; k], vec![0.0; k]);
    let (mut m_b, mut v_b) = (vec![0.0; k], vec![0.0; k]);
    let mut t = 0u64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..logit_set.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut g_w = vec![0.0f64; k];
            let mut g_b = vec![0.0f64; k];
            for &i in batch {
                let (logits, label) = &logit_set[i];
                for c in 0..k {
                    let p = sigmoid(w[c] * logits[c] + b[c]);
                    let target = if c == *label { 1.0 } else { 0.0 };
                    let d = (p - target) / k as f64;
                    g_w[c] += d * logits[c];
                    g_b[c] += d;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for v in g_w.iter_mut().chain(g_b.iter_mut()) {
                *v *= scale;
            }
            t += 1;
            adam_update_slice(&mut w, &g_w, &mut m_w, &mut v_w, t, config);
            adam_update_slice(&mut b, &g_b, &mut m_b, &mut v_b, t, config);
        }
    }
    Ok(VsParams { diag_w: w, bias: b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn forward_zero_weights_is_half() {
        let mut params = MlpParams::init(5, 3, 3, &mut rng(0)).unwrap();
        for layer in &mut params.layers {
            layer.w.iter_mut().for_each(|w| *w = 0.0);
            layer.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let (out, _) = mlp_forward(&params, &[1.0, -2.0, 3.0, 0.5, 9.0], None).unwrap();
        assert_eq!(out, 0.5);
    }

    #[test]
    // The point is an explicit elementwise re-evaluation, so keep the naive
    // index loops.
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_straight_line_evaluation() {
        let params = MlpParams::init(3, 4, 3, &mut rng(42)).unwrap();
        let input = [0.3, -1.1, 2.0];
        let (out, _) = mlp_forward(&params, &input, None).unwrap();

        // Independent straight-line evaluation of the same stack.
        let mut a: Vec<f64> = input.to_vec();
        for l in 0..2 {
            let layer = &params.layers[l];
            let mut next = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let mut acc = layer.b[r];
                for c in 0..layer.cols {
                    acc += layer.w[r * layer.cols + c] * a[c];
                }
                next[r] = acc.max(0.0);
            }
            a = next;
        }
        let out_layer = &params.layers[2];
        let mut z = out_layer.b[0];
        for c in 0..out_layer.cols {
            z += out_layer.w[c] * a[c];
        }
        let expect = 1.0 / (1.0 + (-z).exp());
        assert!((out - expect).abs() < 1e-12, "{out} vs {expect}");
    }

    #[test]
    fn dropout_zero_equals_eval() {
        let params = MlpParams::init(4, 4, 3, &mut rng(7)).unwrap();
        let input = [0.5, 0.1, -0.4, 1.0];
        let masks = vec![vec![true; 4]; 2];
        let (train_out, _) = mlp_forward(&params, &input, Some((&masks, 0.0))).unwrap();
        let (eval_out, _) = mlp_forward(&params, &input, None).unwrap();
        assert!((train_out - eval_out).abs() < 1e-15);
    }

    #[test]
    fn dropout_expectation_matches_eval_forward() {
        // With inverted scaling, the mask-average forward approximates the
        // eval forward. One fixed small net, 10k masks. The match is exact in
        // expectation only for the last hidden layer (ReLU is nonlinear), so
        // the tolerance is Monte-Carlo-plus-bias sized.
        let params = MlpParams::init(3, 4, 2, &mut rng(3)).unwrap();
        let input = [1.0, -0.3, 0.8];
        let p = 0.1;
        let mut mask_rng = rng(99);
        let n = 10_000;
        let mut mean = 0.0;
        for _ in 0..n {
            let masks = sample_dropout_masks(&params, p, &mut mask_rng);
            let (out, _) = mlp_forward(&params, &input, Some((&masks, p))).unwrap();
            mean += out;
        }
        mean /= n as f64;
        let (eval_out, _) = mlp_forward(&params, &input, None).unwrap();
        assert!(
            (mean - eval_out).abs() < 0.02,
            "mask-average {mean} vs eval {eval_out}"
        );
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0 - 1e-7, true) < 1.1e-7);
        assert!((bce_loss(0.8, false) - 1.6094379124341003).abs() < 1e-12);
        // Clamp keeps the loss finite at the boundaries.
        assert!(bce_loss(0.0, true).is_finite());
        assert!(bce_loss(1.0, false).is_finite());
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let params = MlpParams::init(3, 4, 3, &mut rng(5)).unwrap();
        let (_, cache) = mlp_forward(&params, &[0.1, 0.2, 0.3], None).unwrap();
        let grads = mlp_backward(&params, &cache, 0.0);
        for layer in &grads.layers {
            assert!(layer.w.iter().chain(&layer.b).all(|&g| g == 0.0));
        }
    }

    /// Central finite differences of the BCE loss over every parameter.
    fn finite_diff_check(depth: usize, seed: u64, dropout: Option<f64>) -> f64 {
        let mut r = rng(seed);
        let mut params = MlpParams::init(3, 4, depth, &mut r).unwrap();
        let input: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let target = r.random::<f64>() < 0.5;
        let masks = dropout.map(|p| sample_dropout_masks(&params, p, &mut r));
        fn dropout_arg(
            m: &Option<Vec<Vec<bool>>>,
            p: Option<f64>,
        ) -> Option<(&[Vec<bool>], f64)> {
            m.as_ref().map(|mm| (mm.as_slice(), p.unwrap()))
        }

        let (pred, cache) =
            mlp_forward(&params, &input, dropout_arg(&masks, dropout)).unwrap();
        let grads = mlp_backward(&params, &cache, bce_grad(pred, target));

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for l in 0..params.layers.len() {
            for slot in 0..params.layers[l].w.len() + params.layers[l].b.len() {
                let read = |params: &MlpParams| {
                    let layer = &params.layers[l];
                    if slot < layer.w.len() {
                        layer.w[slot]
                    } else {
                        layer.b[slot - layer.w.len()]
                    }
                };
                let write = |params: &mut MlpParams, v: f64| {
                    let layer = &mut params.layers[l];
                    if slot < layer.w.len() {
                        layer.w[slot] = v;
                    } else {
                        layer.b[slot - layer.w.len()] = v;
                    }
                };
                let orig = read(&params);
                write(&mut params, orig + h);
                let (p_plus, _) =
                    mlp_forward(&params, &input, dropout_arg(&masks, dropout)).unwrap();
                write(&mut params, orig - h);
                let (p_minus, _) =
                    mlp_forward(&params, &input, dropout_arg(&masks, dropout)).unwrap();
                write(&mut params, orig);
                let fd = (bce_loss(p_plus, target) - bce_loss(p_minus, target)) / (2.0 * h);
                let analytic = {
                    let layer = &grads.layers[l];
                    if slot < layer.w.len() {
                        layer.w[slot]
                    } else {
                        layer.b[slot - layer.w.len()]
                    }
                };
                let denom = analytic.abs().max(1e-8);
                max_rel = max_rel.max((fd - analytic).abs() / denom);
            }
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = finite_diff_check(3, seed, None);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
        // Depth 1 (plain linear) and a fixed dropout mask.
        assert!(finite_diff_check(1, 11, None) < 1e-4);
        assert!(finite_diff_check(3, 13, Some(0.1)) < 1e-4);
    }

    #[test]
    fn relu_at_zero_uses_zero_subgradient() {
        let mut params = MlpParams::init(2, 2, 2, &mut rng(1)).unwrap();
        // Force a zero pre-activation: zero weights and bias on unit 0.
        params.layers[0].w[0] = 0.0;
        params.layers[0].w[1] = 0.0;
        params.layers[0].b[0] = 0.0;
        let (p, cache) = mlp_forward(&params, &[0.4, 0.6], None).unwrap();
        let grads = mlp_backward(&params, &cache, bce_grad(p, true));
        assert!(grads.layers[0].w.iter().all(|g| g.is_finite()));
        // Unit 0 saw pre-activation exactly 0, so its incoming grads vanish.
        assert_eq!(grads.layers[0].w[0], 0.0);
        assert_eq!(grads.layers[0].w[1], 0.0);
        assert_eq!(grads.layers[0].b[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let params0 = MlpParams::init(2, 2, 2, &mut rng(0)).unwrap();
        let mut params = params0.clone();
        let grads = MlpGrads::zeros_like(&params);
        let mut state = AdamState::zeros_like(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default());
        assert_eq!(params, params0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = MlpParams::init(2, 2, 1, &mut rng(0)).unwrap();
        let before = params.clone();
        let mut grads = MlpGrads::zeros_like(&params);
        grads.layers[0].w.iter_mut().for_each(|g| *g = 0.37);
        grads.layers[0].b.iter_mut().for_each(|g| *g = -2.0);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut state = AdamState::zeros_like(&params);
        adam_step(&mut params, &grads, &mut state, &cfg);
        for (a, b) in params.layers[0].w.iter().zip(&before.layers[0].w) {
            assert!((a - (b - 0.01)).abs() < 1e-6);
        }
        for (a, b) in params.layers[0].b.iter().zip(&before.layers[0].b) {
            assert!((a - (b + 0.01)).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize (x - 3)^2 from x = 0 with lr 0.1, driving adam_step
        // through a degenerate 1x1 net.
        let mut params = MlpParams::init(1, 1, 1, &mut rng(0)).unwrap();
        params.layers[0].w[0] = 0.0;
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut state = AdamState::zeros_like(&params);
        for _ in 0..100 {
            let x = params.layers[0].w[0];
            let mut grads = MlpGrads::zeros_like(&params);
            grads.layers[0].w[0] = 2.0 * (x - 3.0);
            adam_step(&mut params, &grads, &mut state, &cfg);
        }
        assert!((params.layers[0].w[0] - 3.0).abs() < 0.1);
    }

    fn toy_separable(n: usize, seed: u64) -> Vec<(Vec<f64>, bool)> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let x1 = r.random_range(-1.0..1.0);
                let x2 = r.random_range(-1.0..1.0);
                (vec![x1, x2], x1 > x2)
            })
            .collect()
    }

    #[test]
    fn training_fits_linearly_separable_toy() {
        let data = toy_separable(600, 21);
        let params0 = MlpParams::init(2, 8, 3, &mut rng(22)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 40,
            dropout_p: 0.0,
            seed: 23,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let (trained, trace) = train_binary_head(params0, &data, &cfg, None).unwrap();
        let hits = data
            .iter()
            .filter(|(x, t)| {
                let (p, _) = mlp_forward(&trained, x, None).unwrap();
                (p > 0.5) == *t
            })
            .count();
        assert!(
            hits as f64 / data.len() as f64 > 0.95,
            "accuracy {}",
            hits as f64 / data.len() as f64
        );
        assert!(trace.train_loss.first().unwrap() > trace.train_loss.last().unwrap());
    }

    #[test]
    fn training_constant_targets_saturates() {
        let data: Vec<(Vec<f64>, bool)> = toy_separable(300, 31)
            .into_iter()
            .map(|(x, _)| (x, true))
            .collect();
        let params0 = MlpParams::init(2, 4, 3, &mut rng(32)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            dropout_p: 0.0,
            seed: 33,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let (trained, _) = train_binary_head(params0, &data, &cfg, None).unwrap();
        let mean: f64 = data
            .iter()
            .map(|(x, _)| mlp_forward(&trained, x, None).unwrap().0)
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean > 0.9, "mean prediction {mean}");
    }

    #[test]
    fn zero_epochs_returns_input_params() {
        let data = toy_separable(10, 41);
        let params0 = MlpParams::init(2, 4, 3, &mut rng(42)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, trace) = train_binary_head(params0.clone(), &data, &cfg, None).unwrap();
        assert_eq!(out, params0);
        assert!(trace.train_loss.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_separable(200, 51);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            seed: 52,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let p0 = MlpParams::init(2, 4, 3, &mut rng(53)).unwrap();
        let (a, _) = train_binary_head(p0.clone(), &data, &cfg, None).unwrap();
        let (b, _) = train_binary_head(p0, &data, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bce_fixed_point_on_bernoulli_targets() {
        // Targets Bernoulli(q) independent of inputs: the trained head's mean
        // output approaches q (strictly proper scoring rule).
        let q = 0.3;
        let mut r = rng(61);
        let data: Vec<(Vec<f64>, bool)> = (0..2000)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
                (x, r.random::<f64>() < q)
            })
            .collect();
        let params0 = MlpParams::init(4, 6, 3, &mut rng(62)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 50,
            dropout_p: 0.0,
            seed: 63,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let (trained, _) = train_binary_head(params0, &data, &cfg, None).unwrap();
        let mean: f64 = data
            .iter()
            .map(|(x, _)| mlp_forward(&trained, x, None).unwrap().0)
            .sum::<f64>()
            / data.len() as f64;
        assert!((mean - q).abs() < 0.02, "mean output {mean}, target {q}");
    }

    #[test]
    fn vs_train_behaviors() {
        let mut r = rng(71);
        // Hugely separable logits: parameters barely move.
        let easy: Vec<(Vec<f64>, usize)> = (0..200)
            .map(|_| {
                let label = r.random_range(0..3usize);
                let logits = (0..3)
                    .map(|c| if c == label { 50.0 } else { -50.0 })
                    .collect();
                (logits, label)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 72,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let params = vs_train(&easy, &cfg).unwrap();
        for w in &params.diag_w {
            assert!((w - 1.0).abs() < 0.05, "diag_w {w}");
        }
        for b in &params.bias {
            assert!(b.abs() < 0.05, "bias {b}");
        }

        // Systematically doubled logits: labels drawn from the softmax of the
        // base logits, while training sees the doubled (overconfident)
        // version. The learned scale drifts below 1 to re-calibrate.
        let doubled: Vec<(Vec<f64>, usize)> = (0..800)
            .map(|_| {
                let hot = r.random_range(0..3usize);
                let base: Vec<f64> = (0..3)
                    .map(|c| {
                        let sep: f64 = if c == hot { 1.0 } else { -1.0 };
                        sep + r.random_range(-0.5..0.5)
                    })
                    .collect();
                let probs = crate::confidence::softmax(&base).unwrap();
                let draw = r.random::<f64>();
                let mut acc = 0.0;
                let mut label = 2;
                for (c, p) in probs.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        label = c;
                        break;
                    }
                }
                (base.iter().map(|z| 2.0 * z).collect(), label)
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 60,
            seed: 73,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let params = vs_train(&doubled, &cfg).unwrap();
        let mean_w: f64 = params.diag_w.iter().sum::<f64>() / 3.0;
        assert!(mean_w < 1.0, "mean diag_w {mean_w}");

        // Degenerate single-class labels converge; that class's bias grows.
        let degenerate: Vec<(Vec<f64>, usize)> = (0..200)
            .map(|_| {
                let logits = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
                (logits, 1usize)
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 60,
            seed: 74,
            early_stop: EarlyStop::None,
            ..TrainConfig::default()
        };
        let params = vs_train(&degenerate, &cfg).unwrap();
        assert!(params.bias[1] > 0.0, "bias {:?}", params.bias);
    }
}
