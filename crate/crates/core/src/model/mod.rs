//! The full forecasting network: stacked graph-convolutional GRU layers over
//! the input window, masked inputs, and a linear projection onto the horizon.
//!
//! One recurrent cell replaces the GRU's dense maps with the factorized graph
//! convolution. Both gates come out of a single doubled-width convolution that
//! is split in half, sharing one weight pool; the candidate state uses its own
//! pool. The update equation is the standard convex combination
//! h = z ⊙ h_prev + (1 − z) ⊙ ĥ. All gate convolutions aggregate with the
//! full (I + L̃) support by default; a split-support mode (update gate on L̃
//! alone, reset gate on I alone) exists for comparison.
//!
//! The input mask is applied to raw inputs only — pruned nodes still exist as
//! rows carrying their learned bias. Compact mode physically removes those
//! rows (and the mask parameters) for the time/memory benchmark.

pub mod checkpoint;
pub mod infer;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::{self, AdjacencyKind};
use crate::mask::{self, NodeMask};
use crate::params::{Param, ParamSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which aggregation matrices the two gates use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateSupport {
    /// Both gates aggregate with (I + L̃).
    #[default]
    Uniform,
    /// Update gate on L̃ alone, reset gate on I alone; one shared pool of
    /// width `units` evaluated under both supports.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    RAdam,
    Adam,
}

/// Output head mapping the final hidden state onto the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// One units×horizon map shared by every node.
    #[default]
    Shared,
    /// Per-node maps expanded from the embeddings, like the convolutions.
    NodeAdaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub nodes: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub units: usize,
    pub layers: usize,
    pub window: usize,
    pub horizon: usize,
    /// Fraction of nodes usable without penalty.
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip applied before each optimizer step.
    pub grad_clip: f64,
    pub adjacency: AdjacencyKind,
    pub gate_support: GateSupport,
    /// Clamp the usage penalty at zero once usage drops below gamma.
    pub clamp_mask_loss: bool,
    /// Snap the learned mask to the exact target count before final
    /// evaluation, then fine-tune with the mask frozen.
    pub exact_k_snap: bool,
    pub fine_tune_epochs: usize,
    pub optimizer: OptimizerKind,
    pub projection: ProjectionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nodes: 1,
            channels: 1,
            embed_dim: 20,
            units: 64,
            layers: 2,
            window: 12,
            horizon: 12,
            gamma: 1.0,
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 200,
            patience: 25,
            seed: 1,
            grad_clip: 5.0,
            adjacency: AdjacencyKind::SoftmaxRelu,
            gate_support: GateSupport::Uniform,
            clamp_mask_loss: true,
            exact_k_snap: true,
            fine_tune_epochs: 5,
            optimizer: OptimizerKind::RAdam,
            projection: ProjectionKind::Shared,
        }
    }
}

impl ModelConfig {
    pub fn for_nodes(nodes: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, detail: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("field {field}: {detail}")))
            }
        };
        check(
            self.nodes >= 1,
            "nodes",
            format!("must be >= 1, got {}", self.nodes),
        )?;
        check(
            self.channels >= 1,
            "channels",
            format!("must be >= 1, got {}", self.channels),
        )?;
        check(
            self.embed_dim >= 1,
            "embed_dim",
            format!("must be >= 1, got {}", self.embed_dim),
        )?;
        check(
            self.units >= 1,
            "units",
            format!("must be >= 1, got {}", self.units),
        )?;
        check(
            self.layers >= 1,
            "layers",
            format!("must be >= 1, got {}", self.layers),
        )?;
        check(
            self.window >= 1,
            "window",
            format!("must be >= 1, got {}", self.window),
        )?;
        check(
            self.horizon >= 1,
            "horizon",
            format!("must be >= 1, got {}", self.horizon),
        )?;
        check(
            (0.0..=1.0).contains(&self.gamma),
            "gamma",
            format!("must lie in [0, 1], got {}", self.gamma),
        )?;
        check(
            self.learning_rate > 0.0,
            "learning_rate",
            format!("must be > 0, got {}", self.learning_rate),
        )?;
        check(
            self.batch_size >= 1,
            "batch_size",
            format!("must be >= 1, got {}", self.batch_size),
        )?;
        check(
            self.patience >= 1,
            "patience",
            format!("must be >= 1, got {}", self.patience),
        )?;
        check(
            self.grad_clip > 0.0,
            "grad_clip",
            format!("must be > 0, got {}", self.grad_clip),
        )?;
        Ok(())
    }

    /// Concatenated input width of layer `l` ([x_t, h_{t-1}]).
    pub fn cat_width(&self, layer: usize) -> usize {
        let xin = if layer == 0 {
            self.channels
        } else {
            self.units
        };
        xin + self.units
    }

    /// Output width of the gate convolution.
    pub fn zr_width(&self) -> usize {
        match self.gate_support {
            GateSupport::Uniform => 2 * self.units,
            GateSupport::Split => self.units,
        }
    }
}

/// All learnable state of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub set: ParamSet,
    /// False while the mask is frozen (baseline masks, fine-tuning).
    pub mask_trainable: bool,
    /// False in compact mode, where mask parameters do not exist.
    pub use_mask: bool,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ModelParams {
    /// Seeded initialization. Parameter creation order is fixed; it defines
    /// both the RNG draw sequence and the optimizer state layout.
    pub fn init(config: &ModelConfig, initial_mask: &NodeMask) -> Result<ModelParams> {
        config.validate()?;
        if initial_mask.nodes() != config.nodes || initial_mask.channels != config.channels {
            return Err(Error::Dimension {
                op: "model_init",
                left: vec![initial_mask.nodes(), initial_mask.channels],
                right: vec![config.nodes, config.channels],
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, d, u) = (config.nodes, config.embed_dim, config.units);
        let mut set = ParamSet::new();

        let embed_bound = (3.0 / d as f64).sqrt();
        set.add(Param::new(
            "embeddings",
            vec![n, d],
            uniform(&mut rng, n * d, embed_bound),
        ));

        for l in 0..config.layers {
            let cin = config.cat_width(l);
            let zr = config.zr_width();
            let wb = |fan_out: usize| (6.0 / (cin + fan_out) as f64).sqrt();
            set.add(Param::new(
                format!("layer{l}.w_zr"),
                vec![d, cin * zr],
                uniform(&mut rng, d * cin * zr, wb(zr)),
            ));
            set.add(Param::new(
                format!("layer{l}.b_zr"),
                vec![d, zr],
                vec![0.0; d * zr],
            ));
            set.add(Param::new(
                format!("layer{l}.w_hat"),
                vec![d, cin * u],
                uniform(&mut rng, d * cin * u, wb(u)),
            ));
            set.add(Param::new(
                format!("layer{l}.b_hat"),
                vec![d, u],
                vec![0.0; d * u],
            ));
        }

        let proj_bound = (6.0 / (u + config.horizon) as f64).sqrt();
        match config.projection {
            ProjectionKind::Shared => {
                set.add(Param::new(
                    "proj.w",
                    vec![u, config.horizon],
                    uniform(&mut rng, u * config.horizon, proj_bound),
                ));
                set.add(Param::new(
                    "proj.b",
                    vec![config.horizon],
                    vec![0.0; config.horizon],
                ));
            }
            ProjectionKind::NodeAdaptive => {
                set.add(Param::new(
                    "proj.w",
                    vec![d, u * config.horizon],
                    uniform(&mut rng, d * u * config.horizon, proj_bound),
                ));
                set.add(Param::new(
                    "proj.b",
                    vec![d, config.horizon],
                    vec![0.0; d * config.horizon],
                ));
            }
        }

        set.add(Param::new("mask.raw", vec![n], initial_mask.raw.clone()));
        set.add(Param::new(
            "mask.bias",
            vec![n, config.channels],
            initial_mask.graph_bias.clone(),
        ));

        Ok(ModelParams {
            config: config.clone(),
            set,
            mask_trainable: initial_mask.trainable,
            use_mask: true,
        })
    }

    /// Current mask state, if this model has one.
    pub fn node_mask(&self) -> Option<NodeMask> {
        if !self.use_mask {
            return None;
        }
        let raw = self.set.get("mask.raw")?.values.clone();
        let bias = self.set.get("mask.bias")?.values.clone();
        Some(NodeMask {
            raw,
            graph_bias: bias,
            channels: self.config.channels,
            trainable: self.mask_trainable,
        })
    }

    /// Overwrites the stored mask raw values (bias untouched).
    pub fn set_mask_raw(&mut self, raw: &[f64]) {
        let p = self.set.get_mut("mask.raw").expect("model has no mask");
        assert_eq!(p.values.len(), raw.len());
        p.values.copy_from_slice(raw);
    }

    pub fn parameter_count(&self) -> usize {
        self.set.total_elements()
    }
}

/// Tensor ids of one layer's expanded filters on a tape.
pub struct BoundLayer {
    pub theta_zr: TensorId,
    pub bias_zr: TensorId,
    pub theta_hat: TensorId,
    pub bias_hat: TensorId,
    pub cin: usize,
}

/// A model registered on a tape: parameter leaves plus the per-tape
/// precomputed support matrix, clamped mask, and filter banks.
pub struct BoundModel {
    pub param_ids: Vec<TensorId>,
    pub ltilde: TensorId,
    pub support_full: TensorId,
    pub support_z: TensorId,
    pub support_r: TensorId,
    pub binary: Option<TensorId>,
    pub bias_matrix: Option<TensorId>,
    pub layers: Vec<BoundLayer>,
    /// Shared head: the units×horizon parameter itself. Node-adaptive head:
    /// the embedding-expanded bank n×(units·horizon).
    pub proj_w: TensorId,
    /// Shared: [horizon]; node-adaptive: n×horizon.
    pub proj_b: TensorId,
}

/// Registers every parameter and precomputes the support and filter banks.
/// The embedding tensor is registered once and consumed by both the adjacency
/// and the filters, so gradient contributions from both paths accumulate into
/// the single parameter slot.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> Result<BoundModel> {
    let ids: Vec<TensorId> = params
        .set
        .iter()
        .map(|p| tape.param(&p.values, &p.shape))
        .collect();
    bind_from_ids(tape, params, ids)
}

/// As [`bind`], for parameter tensors already registered on the tape (the
/// gradient checker owns its own registration).
pub fn bind_from_ids(
    tape: &mut Tape,
    params: &ModelParams,
    ids: Vec<TensorId>,
) -> Result<BoundModel> {
    let cfg = &params.config;
    let id_of = |name: &str| -> TensorId { ids[params.set.index_of(name).unwrap()] };

    let embed = id_of("embeddings");
    let ltilde = graph::adaptive_support(tape, embed, cfg.adjacency)?;
    let eye = graph::identity_leaf(tape, cfg.nodes);
    let support_full = tape.add(eye, ltilde)?;
    let (support_z, support_r) = match cfg.gate_support {
        GateSupport::Uniform => (support_full, support_full),
        GateSupport::Split => (ltilde, eye),
    };

    let (binary, bias_matrix) = if params.use_mask {
        let raw = id_of("mask.raw");
        (Some(mask::make_binary(tape, raw)), Some(id_of("mask.bias")))
    } else {
        (None, None)
    };

    let (proj_w, proj_b) = match cfg.projection {
        ProjectionKind::Shared => (id_of("proj.w"), id_of("proj.b")),
        ProjectionKind::NodeAdaptive => (
            tape.matmul(embed, id_of("proj.w"))?,
            tape.matmul(embed, id_of("proj.b"))?,
        ),
    };

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let theta_zr = tape.matmul(embed, id_of(&format!("layer{l}.w_zr")))?;
        let bias_zr = tape.matmul(embed, id_of(&format!("layer{l}.b_zr")))?;
        let theta_hat = tape.matmul(embed, id_of(&format!("layer{l}.w_hat")))?;
        let bias_hat = tape.matmul(embed, id_of(&format!("layer{l}.b_hat")))?;
        layers.push(BoundLayer {
            theta_zr,
            bias_zr,
            theta_hat,
            bias_hat,
            cin: cfg.cat_width(l),
        });
    }

    Ok(BoundModel {
        param_ids: ids,
        ltilde,
        support_full,
        support_z,
        support_r,
        binary,
        bias_matrix,
        layers,
        proj_w,
        proj_b,
    })
}

/// One recurrent step of layer `layer`.
pub fn gru_cell(
    tape: &mut Tape,
    bm: &BoundModel,
    cfg: &ModelConfig,
    layer: usize,
    x: TensorId,
    h_prev: TensorId,
    step: usize,
) -> Result<TensorId> {
    let lp = &bm.layers[layer];
    let u = cfg.units;
    let g = tape.concat_last(x, h_prev)?;

    let (z, r) = match cfg.gate_support {
        GateSupport::Uniform => {
            let pre = graph::node_adaptive_conv_precomputed(
                tape,
                g,
                bm.support_z,
                lp.theta_zr,
                lp.bias_zr,
                lp.cin,
                2 * u,
            )?;
            let zr = tape.sigmoid(pre);
            let z = tape.slice_last(zr, 0, u)?;
            let r = tape.slice_last(zr, u, u)?;
            (z, r)
        }
        GateSupport::Split => {
            let pre_z = graph::node_adaptive_conv_precomputed(
                tape,
                g,
                bm.support_z,
                lp.theta_zr,
                lp.bias_zr,
                lp.cin,
                u,
            )?;
            let pre_r = graph::node_adaptive_conv_precomputed(
                tape,
                g,
                bm.support_r,
                lp.theta_zr,
                lp.bias_zr,
                lp.cin,
                u,
            )?;
            let z = tape.sigmoid(pre_z);
            let r = tape.sigmoid(pre_r);
            (z, r)
        }
    };

    let rh = tape.mul(r, h_prev)?;
    let g2 = tape.concat_last(x, rh)?;
    let pre_h = graph::node_adaptive_conv_precomputed(
        tape,
        g2,
        bm.support_full,
        lp.theta_hat,
        lp.bias_hat,
        lp.cin,
        u,
    )?;
    let h_hat = tape.tanh(pre_h);

    let zh = tape.mul(z, h_prev)?;
    let one_minus_z = tape.affine(z, -1.0, 1.0);
    let zc = tape.mul(one_minus_z, h_hat)?;
    let h = tape.add(zh, zc)?;

    if tape.value(h).iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            format!("gru_cell layer {layer} step {step}"),
            "non-finite hidden state",
        ));
    }
    Ok(h)
}

/// Runs a batch of input windows through the stacked cells simultaneously
/// (tensors carry a leading batch axis) and projects the final top-layer
/// states onto the horizon. Each window is window·n·c row-major; the result
/// is B×n×horizon. Block b of the output is bit-identical to an independent
/// single-window pass, the batch only amortizes tape bookkeeping.
pub fn forward_batch(
    tape: &mut Tape,
    bm: &BoundModel,
    cfg: &ModelConfig,
    windows: &[&[f64]],
) -> Result<TensorId> {
    let (n, c, u) = (cfg.nodes, cfg.channels, cfg.units);
    let bsz = windows.len();
    if bsz == 0 {
        return Err(Error::Domain("forward_batch of zero windows".into()));
    }
    for w in windows {
        if w.len() != cfg.window * n * c {
            return Err(Error::Dimension {
                op: "forward_batch",
                left: vec![w.len()],
                right: vec![cfg.window, n, c],
            });
        }
    }
    let mut hidden: Vec<TensorId> = (0..cfg.layers)
        .map(|_| tape.leaf(vec![0.0; bsz * n * u], vec![bsz, n, u]))
        .collect();

    for t in 0..cfg.window {
        let mut x_all = Vec::with_capacity(bsz * n * c);
        for w in windows {
            x_all.extend_from_slice(&w[t * n * c..(t + 1) * n * c]);
        }
        let x_t = tape.leaf(x_all, vec![bsz, n, c]);
        let mut input = match (bm.binary, bm.bias_matrix) {
            (Some(b), Some(bias)) => mask::apply_mask(tape, x_t, b, bias)?,
            _ => x_t,
        };
        for l in 0..cfg.layers {
            hidden[l] = gru_cell(tape, bm, cfg, l, input, hidden[l], t)?;
            input = hidden[l];
        }
    }

    let top = hidden[cfg.layers - 1];
    match cfg.projection {
        ProjectionKind::Shared => {
            let flat = tape.reshape(top, vec![bsz * n, u])?;
            let proj = tape.matmul(flat, bm.proj_w)?;
            let shaped = tape.reshape(proj, vec![bsz, n, cfg.horizon])?;
            tape.add(shaped, bm.proj_b)
        }
        ProjectionKind::NodeAdaptive => {
            let proj = tape.rowwise_vecmat(top, bm.proj_w, u, cfg.horizon)?;
            tape.add(proj, bm.proj_b)
        }
    }
}

/// Single-window pass, shape n×horizon.
pub fn forward_window(
    tape: &mut Tape,
    bm: &BoundModel,
    cfg: &ModelConfig,
    window: &[f64],
) -> Result<TensorId> {
    let out = forward_batch(tape, bm, cfg, &[window])?;
    tape.reshape(out, vec![cfg.nodes, cfg.horizon])
}

/// Single-window prediction in normalized space, shape n×horizon.
pub fn forward(params: &ModelParams, window: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bm = bind(&mut tape, params)?;
    let out = forward_window(&mut tape, &bm, &params.config, window)?;
    Ok(tape.value(out).to_vec())
}

/// Rebuilds the model over only the kept nodes: embedding rows are sliced,
/// mask and bias parameters are dropped entirely, shared pools carry over.
pub fn compact_rebuild(params: &ModelParams, mask: &NodeMask) -> Result<ModelParams> {
    let kept = mask.selected_nodes();
    if kept.is_empty() {
        return Err(Error::Domain(
            "compact rebuild with an empty kept set".into(),
        ));
    }
    if mask.nodes() != params.config.nodes {
        return Err(Error::Dimension {
            op: "compact_rebuild",
            left: vec![mask.nodes()],
            right: vec![params.config.nodes],
        });
    }
    let mut config = params.config.clone();
    config.nodes = kept.len();
    config.gamma = 1.0;

    let mut set = ParamSet::new();
    for p in params.set.iter() {
        match p.name.as_str() {
            "embeddings" => {
                let d = params.config.embed_dim;
                let mut values = Vec::with_capacity(kept.len() * d);
                for &i in &kept {
                    values.extend_from_slice(&p.values[i * d..(i + 1) * d]);
                }
                set.add(Param::new("embeddings", vec![kept.len(), d], values));
            }
            "mask.raw" | "mask.bias" => {}
            _ => {
                set.add(p.clone());
            }
        }
    }

    Ok(ModelParams {
        config,
        set,
        mask_trainable: false,
        use_mask: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceCounts {
    pub kept_nodes: usize,
    pub parameter_count: usize,
    /// Elements retained by one recorded forward pass at the given batch size
    /// (tape values; gradients double it).
    pub peak_activation_elements: usize,
    pub batch_size: usize,
}

/// Elements a recorded forward pass retains at the given batch size: a one-
/// and a two-window tape are measured and the per-window difference is
/// extrapolated to the batch.
pub fn measure_activation_elements(params: &ModelParams, batch_size: usize) -> Result<usize> {
    let cfg = &params.config;
    let window = vec![0.0; cfg.window * cfg.nodes * cfg.channels];
    let measure = |windows: usize| -> Result<usize> {
        let mut tape = Tape::new();
        let bm = bind(&mut tape, params)?;
        for _ in 0..windows {
            forward_window(&mut tape, &bm, cfg, &window)?;
        }
        Ok(tape.total_elements())
    };
    let one = measure(1)?;
    let two = measure(2)?;
    let per_window = two - one;
    let fixed = one - per_window;
    Ok(fixed + batch_size * per_window)
}

/// Resource counts for the compact model at a pruning fraction.
pub fn count_params_and_activations(
    config: &ModelConfig,
    fraction: f64,
    batch_size: usize,
) -> Result<ResourceCounts> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!(
            "pruning fraction must lie in [0, 1), got {fraction}"
        )));
    }
    let kept = mask::keep_count(config.nodes, fraction);
    if kept == 0 {
        return Err(Error::Domain(format!(
            "fraction {fraction} leaves no nodes of {}",
            config.nodes
        )));
    }
    let full = ModelParams::init(config, &NodeMask::all_ones(config.nodes, config.channels))?;
    let mut proj = full.node_mask().unwrap();
    proj.project_to_exact_k(kept)?;
    let compact = compact_rebuild(&full, &proj)?;

    Ok(ResourceCounts {
        kept_nodes: kept,
        parameter_count: compact.parameter_count(),
        peak_activation_elements: measure_activation_elements(&compact, batch_size)?,
        batch_size,
    })
}
