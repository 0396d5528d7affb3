//! The pose network: edge-feature MLP, a stack of edge-conditioned graph
//! attention layers, mean pooling over each frame and a fully connected
//! regression head emitting `3J` coordinates per frame.
//!
//! Attention per edge (k → j):
//! `score = LeakyReLU( Wᵀ [Θ(f_j) ‖ Θ(f_k) ‖ Θ_e(edge_repr)] )`,
//! normalized by a softmax over the edges into j (the self-loop supplies
//! the α_{j,j} term), then `X_j = Σ α · Θ(f_src) + bias`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{ParamSet, Tape, TensorError, Var};
use crate::graph::GraphBatch;
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter `{0}` missing from parameter set")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {want:?}")]
    ParamShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub const NODE_FEATURES: usize = 5;
pub const EDGE_FEATURES: usize = 6;

/// Architecture hyperparameters. Defaults follow the shipped pipeline:
/// a 6→64→64→64 edge MLP, four 128-wide attention layers and a
/// 128→256→256→256→256→3J head with dropout 0.5 and leaky slope 0.2.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub edge_widths: Vec<usize>,
    pub gat_layers: usize,
    pub gat_width: usize,
    pub head_hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub joint_count: usize,
    pub include_edge_features: bool,
}

impl ModelConfig {
    pub fn new(joint_count: usize) -> Self {
        ModelConfig {
            edge_widths: vec![64, 64, 64],
            gat_layers: 4,
            gat_width: 128,
            head_hidden: vec![256, 256, 256, 256],
            dropout_rate: 0.5,
            leaky_slope: 0.2,
            joint_count,
            include_edge_features: true,
        }
    }

    pub fn output_width(&self) -> usize {
        3 * self.joint_count
    }

    fn edge_out_width(&self) -> usize {
        *self.edge_widths.last().expect("edge MLP has layers")
    }

    /// GAT node-input width of layer `l`: raw node features for the first
    /// layer, the GAT width afterwards.
    fn gat_in_width(&self, layer: usize) -> usize {
        if layer == 0 {
            NODE_FEATURES
        } else {
            self.gat_width
        }
    }

    /// Canonical (name, shape) list, in parameter order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut prev = EDGE_FEATURES;
        for (i, &w) in self.edge_widths.iter().enumerate() {
            specs.push((format!("edge.{i}.w"), vec![prev, w]));
            specs.push((format!("edge.{i}.b"), vec![w]));
            prev = w;
        }
        for l in 0..self.gat_layers {
            let d_in = self.gat_in_width(l);
            specs.push((format!("gat.{l}.theta"), vec![d_in, self.gat_width]));
            specs.push((
                format!("gat.{l}.theta_e"),
                vec![self.edge_out_width(), self.gat_width],
            ));
            specs.push((format!("gat.{l}.attn"), vec![3 * self.gat_width, 1]));
            specs.push((format!("gat.{l}.bias"), vec![self.gat_width]));
        }
        let mut prev = self.gat_width;
        for (i, &w) in self.head_hidden.iter().enumerate() {
            specs.push((format!("head.{i}.w"), vec![prev, w]));
            specs.push((format!("head.{i}.b"), vec![w]));
            prev = w;
        }
        let i = self.head_hidden.len();
        specs.push((format!("head.{i}.w"), vec![prev, self.output_width()]));
        specs.push((format!("head.{i}.b"), vec![self.output_width()]));
        specs
    }
}

/// Glorot-uniform weights and `U(±1/√fan_in)` biases (fan-in of the
/// preceding weight), deterministic per seed. Biases are deliberately not
/// zero: the self-loop edges carry all-zero features and a zero-bias edge
/// MLP would park those rows exactly on the ReLU kinks.
pub fn init_params<T: Real>(cfg: &ModelConfig, rng_seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut params = ParamSet::new();
    let mut fan_in = 1usize;
    for (name, shape) in cfg.param_specs() {
        let len: usize = shape.iter().product();
        let limit = if shape.len() == 2 {
            fan_in = shape[0];
            (6.0 / (shape[0] + shape[1]) as f64).sqrt()
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        let data = (0..len)
            .map(|_| real::<T>(rng.gen_range(-limit..limit)))
            .collect();
        params.push(name, shape, data);
    }
    params
}

/// Check a parameter set against the shapes the config demands.
pub fn validate_params<T: Real>(cfg: &ModelConfig, params: &ParamSet<T>) -> Result<(), ModelError> {
    for (name, shape) in cfg.param_specs() {
        let e = params
            .get(&name)
            .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
        if e.shape != shape {
            return Err(ModelError::ParamShape {
                name,
                got: e.shape.clone(),
                want: shape,
            });
        }
    }
    Ok(())
}

/// Result of one recorded forward pass.
pub struct ForwardPass {
    /// `B × 3J` pose output.
    pub output: Var,
    /// Per-layer attention coefficients (pre-dropout), length `n_edges`.
    pub attention: Vec<Var>,
    /// Tape leaves holding the parameters, in canonical parameter order.
    pub param_vars: Vec<Var>,
}

/// Record the full network on `tape`. Dropout fires only in training mode.
pub fn forward<T: Real, R: Rng>(
    tape: &mut Tape<T>,
    batch: &GraphBatch<T>,
    params: &ParamSet<T>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<ForwardPass, ModelError> {
    validate_params(cfg, params)?;
    let slope = real::<T>(cfg.leaky_slope);
    let drop = real::<T>(cfg.dropout_rate);

    let mut param_vars = Vec::with_capacity(params.len());
    for e in params.entries() {
        param_vars.push(tape.leaf(e.shape.clone(), e.data.clone()));
    }
    let pv = |name: &str| -> Var {
        param_vars[params.index_of(name).expect("validated param")]
    };

    let nf = tape.constant(
        vec![batch.n_nodes, NODE_FEATURES],
        batch.node_features.clone(),
    );
    let ef = tape.constant(
        vec![batch.n_edges(), EDGE_FEATURES],
        batch.edge_features.clone(),
    );

    // Edge block: Linear, Linear, ReLU, Linear, ReLU.
    let mut e = ef;
    for i in 0..cfg.edge_widths.len() {
        let z = tape.matmul(e, pv(&format!("edge.{i}.w")))?;
        e = tape.add_bias(z, pv(&format!("edge.{i}.b")))?;
        if i > 0 {
            e = tape.relu(e);
        }
    }
    let edge_repr = e;

    let mut h = nf;
    let mut attention = Vec::with_capacity(cfg.gat_layers);
    for l in 0..cfg.gat_layers {
        let th = tape.matmul(h, pv(&format!("gat.{l}.theta")))?;
        let te = tape.matmul(edge_repr, pv(&format!("gat.{l}.theta_e")))?;
        let th_dst = tape.gather_rows(th, &batch.edge_dst)?;
        let th_src = tape.gather_rows(th, &batch.edge_src)?;
        let cat = tape.concat_cols(&[th_dst, th_src, te])?;
        let pre = tape.matmul(cat, pv(&format!("gat.{l}.attn")))?;
        let scores = tape.leaky_relu(pre, slope);
        let alpha = tape.segment_softmax(scores, &batch.edge_dst, batch.n_nodes)?;
        attention.push(alpha);
        let alpha = tape.dropout(alpha, drop, training, rng);
        let msg = tape.rows_scale(th_src, alpha)?;
        let agg = tape.segment_sum(msg, &batch.edge_dst, batch.n_nodes)?;
        h = tape.add_bias(agg, pv(&format!("gat.{l}.bias")))?;
        if l + 1 < cfg.gat_layers {
            h = tape.relu(h);
        }
    }

    let pooled = tape.segment_mean(h, &batch.frame_of_node, batch.n_frames)?;

    let mut y = pooled;
    let n_head = cfg.head_hidden.len() + 1;
    for i in 0..n_head {
        let z = tape.matmul(y, pv(&format!("head.{i}.w")))?;
        y = tape.add_bias(z, pv(&format!("head.{i}.b")))?;
        if i + 1 < n_head {
            y = tape.relu(y);
        }
    }

    Ok(ForwardPass {
        output: y,
        attention,
        param_vars,
    })
}

/// Collect per-parameter gradients after a backward pass, in canonical
/// parameter order.
pub fn collect_grads<T: Real>(tape: &Tape<T>, pass: &ForwardPass) -> Vec<Vec<T>> {
    pass.param_vars
        .iter()
        .map(|&v| tape.grad(v).to_vec())
        .collect()
}
