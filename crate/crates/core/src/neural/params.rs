use super::config::{ModelConfig, SummarizationMode};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Init bound is `1/sqrt(fan_in)`; 0 means zero init.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Positions of all parameter tensors inside one flat `f64` buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub vocab_size: usize,
    pub n_labels: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: Option<usize>,
    pub ff_dims: Vec<usize>,
    pub tensors: Vec<TensorSpec>,
    pub embedding: usize,
    pub lstm_w: [usize; 2],
    pub lstm_b: [usize; 2],
    /// (w, b, v) when the summarization layer is attention pooling.
    pub attention: Option<(usize, usize, usize)>,
    /// (w, b) per feed-forward layer.
    pub ff: Vec<(usize, usize)>,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig, vocab_size: usize, n_labels: usize) -> Layout {
        let (e, h) = (config.embedding_dim, config.hidden_dim);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan_in: usize| {
            tensors.push(TensorSpec { name, rows, cols, offset, fan_in });
            offset += rows * cols;
            tensors.len() - 1
        };
        let embedding = push("embedding".into(), vocab_size, e, e);
        let fw = push("lstm_fwd_w".into(), 4 * h, e + h, e + h);
        let fb = push("lstm_fwd_b".into(), 4 * h, 1, 0);
        let bw = push("lstm_bwd_w".into(), 4 * h, e + h, e + h);
        let bb = push("lstm_bwd_b".into(), 4 * h, 1, 0);
        let attention = match config.summarization {
            SummarizationMode::AttentionPool => {
                let a = config.attention_dim();
                Some((
                    push("attn_w".into(), a, 2 * h, 2 * h),
                    push("attn_b".into(), a, 1, 0),
                    push("attn_v".into(), a, 1, a),
                ))
            }
            SummarizationMode::MeanPool => None,
        };
        let mut ff = Vec::new();
        let mut prev = 2 * h;
        for (l, &d) in config.ff_dims.iter().enumerate() {
            ff.push((push(format!("ff{l}_w"), d, prev, prev), push(format!("ff{l}_b"), d, 1, 0)));
            prev = d;
        }
        let out_w = push("out_w".into(), n_labels, prev, prev);
        let out_b = push("out_b".into(), n_labels, 1, 0);
        Layout {
            vocab_size,
            n_labels,
            embedding_dim: e,
            hidden_dim: h,
            attention_dim: attention.map(|_| config.attention_dim()),
            ff_dims: config.ff_dims.clone(),
            total: offset,
            tensors,
            embedding,
            lstm_w: [fw, bw],
            lstm_b: [fb, bb],
            attention,
            ff,
            out_w,
            out_b,
        }
    }

    pub fn range(&self, tensor: usize) -> Range<usize> {
        self.tensors[tensor].range()
    }
}

/// All trainable parameters of one model, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: Layout) -> ModelParams {
        let values = vec![0.0; layout.total];
        ModelParams { layout, values }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights, zero for biases.
    pub fn init(config: &ModelConfig, vocab_size: usize, n_labels: usize) -> ModelParams {
        let layout = Layout::new(config, vocab_size, n_labels);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = vec![0.0; layout.total];
        for t in &layout.tensors {
            if t.fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            for v in &mut values[t.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        ModelParams { layout, values }
    }

    pub fn tensor(&self, tensor: usize) -> &[f64] {
        &self.values[self.layout.range(tensor)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
