//! Bidirectional LSTM classifier with hand-written backpropagation.
//!
//! Layer stack: token embedding → forward and backward LSTM → summarization
//! (additive attention or mean pooling over the concatenated states) → tanh
//! feed-forward layers → softmax. Three taps are exposed per utterance: `su`
//! (the state sequence entering the summarization layer, collapsed to a fixed
//! size), `ff` (the summarization output entering the first feed-forward layer)
//! and `sm` (the activation entering the softmax layer).

use super::config::{ModelConfig, SuTap};
use super::params::ModelParams;
use super::{Distribution, EmbeddingTriple, NeuralError};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Cached activations of one recurrent direction, in processing order.
#[derive(Debug, Clone)]
struct DirectionTrace {
    /// `[x; h_prev]` per step.
    inputs: Vec<f64>,
    /// Activated gates `i, f, g, o` per step.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttentionTrace {
    /// `tanh(W s_t + b)` per position.
    hidden: Vec<f64>,
    weights: Vec<f64>,
}

/// Everything the backward pass needs, plus the taps.
#[derive(Debug, Clone)]
pub struct Trace {
    tokens: Vec<usize>,
    directions: [DirectionTrace; 2],
    /// Concatenated `[h_fwd; h_bwd]` per position, `T × 2H`.
    pub states: Vec<f64>,
    attention: Option<AttentionTrace>,
    pub su: Vec<f64>,
    /// `layer_inputs[l]` is the (dropout-masked) vector fed into feed-forward
    /// layer `l`; the last entry is the vector fed into the softmax layer.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Unmasked tanh outputs of each feed-forward layer.
    activations: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
    pub probs: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = b + W x` for row-major `W` with `x.len()` columns.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    for ((o, row), bi) in out.iter_mut().zip(w.chunks_exact(x.len())).zip(b) {
        *o = bi + dot(row, x);
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Model {
        Model { config, params }
    }

    pub fn n_labels(&self) -> usize {
        self.params.layout.n_labels
    }

    /// Inference pass: distribution plus the three taps. No dropout.
    pub fn forward(&self, tokens: &[usize]) -> Result<(Distribution, EmbeddingTriple), NeuralError> {
        let trace = self.trace(tokens, None)?;
        let taps = EmbeddingTriple {
            model_id: 0,
            su: trace.su.clone(),
            ff: trace.layer_inputs[0].clone(),
            sm: trace.layer_inputs[trace.layer_inputs.len() - 1].clone(),
        };
        Ok((Distribution { probs: trace.probs }, taps))
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<Distribution, NeuralError> {
        Ok(Distribution { probs: self.trace(tokens, None)?.probs })
    }

    /// Cross-entropy of `gold` under the current parameters.
    pub fn loss(&self, tokens: &[usize], gold: usize) -> Result<f64, NeuralError> {
        let trace = self.trace(tokens, None)?;
        Ok(-trace.probs[gold].ln())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), NeuralError> {
        if tokens.is_empty() {
            return Err(NeuralError::EmptyInput);
        }
        let vocab = self.params.layout.vocab_size;
        match tokens.iter().find(|&&t| t >= vocab) {
            Some(&token) => Err(NeuralError::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }

    /// Full forward pass keeping the intermediate values. `masks`, when given,
    /// holds one inverted-dropout mask per feed-forward input plus one for the
    /// softmax input.
    pub fn trace(&self, tokens: &[usize], masks: Option<Vec<Vec<f64>>>) -> Result<Trace, NeuralError> {
        self.check_tokens(tokens)?;
        let p = &self.params;
        let lay = &p.layout;
        let (e, h) = (lay.embedding_dim, lay.hidden_dim);
        let t_len = tokens.len();
        let emb = p.tensor(lay.embedding);

        let mut states = vec![0.0; t_len * 2 * h];
        let directions = [0, 1].map(|dir| {
            let w = p.tensor(lay.lstm_w[dir]);
            let b = p.tensor(lay.lstm_b[dir]);
            let mut trace = DirectionTrace {
                inputs: vec![0.0; t_len * (e + h)],
                gates: vec![0.0; t_len * 4 * h],
                cells: vec![0.0; t_len * h],
                tanh_cells: vec![0.0; t_len * h],
            };
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            for step in 0..t_len {
                let pos = if dir == 0 { step } else { t_len - 1 - step };
                let input = &mut trace.inputs[step * (e + h)..(step + 1) * (e + h)];
                input[..e].copy_from_slice(&emb[tokens[pos] * e..(tokens[pos] + 1) * e]);
                input[e..].copy_from_slice(&h_prev);
                let gates = &mut trace.gates[step * 4 * h..(step + 1) * 4 * h];
                affine(w, b, input, gates);
                for j in 0..h {
                    gates[j] = sigmoid(gates[j]);
                    gates[h + j] = sigmoid(gates[h + j]);
                    gates[2 * h + j] = gates[2 * h + j].tanh();
                    gates[3 * h + j] = sigmoid(gates[3 * h + j]);
                    let c = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
                    let tc = c.tanh();
                    trace.cells[step * h + j] = c;
                    trace.tanh_cells[step * h + j] = tc;
                    c_prev[j] = c;
                    h_prev[j] = gates[3 * h + j] * tc;
                }
                states[pos * 2 * h + dir * h..pos * 2 * h + (dir + 1) * h].copy_from_slice(&h_prev);
            }
            trace
        });

        let width = 2 * h;
        let su = match self.config.su_tap {
            SuTap::MeanStates => mean_rows(&states, width),
            SuTap::FinalStates => {
                let mut v = states[(t_len - 1) * width..(t_len - 1) * width + h].to_vec();
                v.extend_from_slice(&states[h..width]);
                v
            }
        };

        let (summary, attention) = match lay.attention {
            Some((aw, ab, av)) => {
                let a_dim = lay.attention_dim.expect("attention layout");
                let (w, b, v) = (p.tensor(aw), p.tensor(ab), p.tensor(av));
                let mut hidden = vec![0.0; t_len * a_dim];
                let mut scores = vec![0.0; t_len];
                for t in 0..t_len {
                    let u = &mut hidden[t * a_dim..(t + 1) * a_dim];
                    affine(w, b, &states[t * width..(t + 1) * width], u);
                    u.iter_mut().for_each(|x| *x = x.tanh());
                    scores[t] = dot(v, u);
                }
                let weights = softmax(&scores);
                let mut summary = vec![0.0; width];
                for t in 0..t_len {
                    axpy(&mut summary, weights[t], &states[t * width..(t + 1) * width]);
                }
                (summary, Some(AttentionTrace { hidden, weights }))
            }
            None => (mean_rows(&states, width), None),
        };

        let apply_mask = |v: Vec<f64>, l: usize| match &masks {
            Some(m) => v.iter().zip(&m[l]).map(|(x, k)| x * k).collect(),
            None => v,
        };
        let mut layer_inputs = vec![apply_mask(summary, 0)];
        let mut activations = Vec::with_capacity(lay.ff.len());
        for (l, &(fw, fb)) in lay.ff.iter().enumerate() {
            let mut a = vec![0.0; lay.ff_dims[l]];
            affine(p.tensor(fw), p.tensor(fb), &layer_inputs[l], &mut a);
            a.iter_mut().for_each(|x| *x = x.tanh());
            layer_inputs.push(apply_mask(a.clone(), l + 1));
            activations.push(a);
        }
        let mut logits = vec![0.0; lay.n_labels];
        affine(p.tensor(lay.out_w), p.tensor(lay.out_b), &layer_inputs[lay.ff.len()], &mut logits);
        let probs = softmax(&logits);

        Ok(Trace {
            tokens: tokens.to_vec(),
            directions,
            states,
            attention,
            su,
            layer_inputs,
            activations,
            masks,
            probs,
        })
    }

    /// Accumulates the gradient of `-ln p[gold]` for `trace` into `grad`
    /// (same layout as the parameters) and returns the loss.
    pub fn backward(&self, trace: &Trace, gold: usize, grad: &mut [f64]) -> f64 {
        let p = &self.params;
        let lay = &p.layout;
        let (e, h) = (lay.embedding_dim, lay.hidden_dim);
        let width = 2 * h;
        let t_len = trace.tokens.len();
        let n_ff = lay.ff.len();

        // Softmax layer.
        let mut d_logits = trace.probs.clone();
        d_logits[gold] -= 1.0;
        let mut d_input = vec![0.0; trace.layer_inputs[n_ff].len()];
        {
            let w = p.tensor(lay.out_w);
            let cols = d_input.len();
            let (gw, gb) = (lay.range(lay.out_w), lay.range(lay.out_b));
            for (r, &d) in d_logits.iter().enumerate() {
                axpy(&mut grad[gw.start + r * cols..gw.start + (r + 1) * cols], d, &trace.layer_inputs[n_ff]);
                grad[gb.start + r] += d;
                axpy(&mut d_input, d, &w[r * cols..(r + 1) * cols]);
            }
        }
        if let Some(m) = &trace.masks {
            d_input.iter_mut().zip(&m[n_ff]).for_each(|(d, k)| *d *= k);
        }

        // Feed-forward layers, last to first.
        for l in (0..n_ff).rev() {
            let (fw, fb) = lay.ff[l];
            let d_pre: Vec<f64> = d_input.iter().zip(&trace.activations[l]).map(|(d, a)| d * (1.0 - a * a)).collect();
            let input = &trace.layer_inputs[l];
            let cols = input.len();
            let w = p.tensor(fw);
            let (gw, gb) = (lay.range(fw), lay.range(fb));
            let mut d_prev = vec![0.0; cols];
            for (r, &d) in d_pre.iter().enumerate() {
                axpy(&mut grad[gw.start + r * cols..gw.start + (r + 1) * cols], d, input);
                grad[gb.start + r] += d;
                axpy(&mut d_prev, d, &w[r * cols..(r + 1) * cols]);
            }
            if let Some(m) = &trace.masks {
                d_prev.iter_mut().zip(&m[l]).for_each(|(d, k)| *d *= k);
            }
            d_input = d_prev;
        }
        let d_summary = d_input;

        // Summarization layer.
        let mut d_states = vec![0.0; t_len * width];
        match (&trace.attention, lay.attention) {
            (Some(att), Some((aw, ab, av))) => {
                let a_dim = lay.attention_dim.expect("attention layout");
                let (w, v) = (p.tensor(aw), p.tensor(av));
                let d_weights: Vec<f64> =
                    (0..t_len).map(|t| dot(&trace.states[t * width..(t + 1) * width], &d_summary)).collect();
                let mean_d: f64 = att.weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();
                let (gw, gb, gv) = (lay.range(aw), lay.range(ab), lay.range(av));
                for t in 0..t_len {
                    let alpha = att.weights[t];
                    let ds = &mut d_states[t * width..(t + 1) * width];
                    axpy(ds, alpha, &d_summary);
                    let d_score = alpha * (d_weights[t] - mean_d);
                    let u = &att.hidden[t * a_dim..(t + 1) * a_dim];
                    axpy(&mut grad[gv.clone()], d_score, u);
                    let state = &trace.states[t * width..(t + 1) * width];
                    for r in 0..a_dim {
                        let d_pre = d_score * v[r] * (1.0 - u[r] * u[r]);
                        axpy(&mut grad[gw.start + r * width..gw.start + (r + 1) * width], d_pre, state);
                        grad[gb.start + r] += d_pre;
                        axpy(ds, d_pre, &w[r * width..(r + 1) * width]);
                    }
                }
            }
            _ => {
                let scale = 1.0 / t_len as f64;
                for t in 0..t_len {
                    axpy(&mut d_states[t * width..(t + 1) * width], scale, &d_summary);
                }
            }
        }

        // Recurrent layers, backpropagation through time.
        let emb_range = lay.range(lay.embedding);
        for dir in 0..2 {
            let dt = &trace.directions[dir];
            let w = p.tensor(lay.lstm_w[dir]);
            let (gw, gb) = (lay.range(lay.lstm_w[dir]), lay.range(lay.lstm_b[dir]));
            let cols = e + h;
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut d_gates = vec![0.0; 4 * h];
            for step in (0..t_len).rev() {
                let pos = if dir == 0 { step } else { t_len - 1 - step };
                let gates = &dt.gates[step * 4 * h..(step + 1) * 4 * h];
                for j in 0..h {
                    let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let tc = dt.tanh_cells[step * h + j];
                    let c_prev = if step > 0 { dt.cells[(step - 1) * h + j] } else { 0.0 };
                    let dh = d_states[pos * width + dir * h + j] + dh_next[j];
                    let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                    d_gates[j] = dc * g * i * (1.0 - i);
                    d_gates[h + j] = dc * c_prev * f * (1.0 - f);
                    d_gates[2 * h + j] = dc * i * (1.0 - g * g);
                    d_gates[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[j] = dc * f;
                }
                let input = &dt.inputs[step * cols..(step + 1) * cols];
                let mut d_input = vec![0.0; cols];
                for (r, &d) in d_gates.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    axpy(&mut grad[gw.start + r * cols..gw.start + (r + 1) * cols], d, input);
                    grad[gb.start + r] += d;
                    axpy(&mut d_input, d, &w[r * cols..(r + 1) * cols]);
                }
                let token = trace.tokens[pos];
                let row = emb_range.start + token * e;
                axpy(&mut grad[row..row + e], 1.0, &d_input[..e]);
                dh_next.copy_from_slice(&d_input[e..]);
            }
        }

        -trace.probs[gold].ln()
    }
}

fn mean_rows(data: &[f64], width: usize) -> Vec<f64> {
    let rows = data.len() / width;
    let mut mean = vec![0.0; width];
    for row in data.chunks_exact(width) {
        axpy(&mut mean, 1.0, row);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    mean
}
