//! Tape-free forward evaluation.
//!
//! Validation, test metrics, and the inference benchmark only need values,
//! not gradients. The evaluator precomputes the support matrix and filter
//! banks once and then runs windows through plain buffers, calling the same
//! kernels as the tape so that at f64 the two paths agree bit for bit. The
//! f32 instantiation exists for the benchmark mode.

use super::{GateSupport, ModelConfig, ModelParams, ProjectionKind};
use crate::autodiff::kernels::{self, Real};
use crate::error::{Error, Result};

struct LayerBank<F> {
    theta_zr: Vec<F>,
    bias_zr: Vec<F>,
    theta_hat: Vec<F>,
    bias_hat: Vec<F>,
    cin: usize,
}

pub struct Evaluator<F: Real> {
    cfg: ModelConfig,
    use_mask: bool,
    binary: Vec<F>,
    bias: Vec<F>,
    support_full: Vec<F>,
    support_z: Vec<F>,
    support_r: Vec<F>,
    layers: Vec<LayerBank<F>>,
    proj_w: Vec<F>,
    proj_b: Vec<F>,
}

fn cast<F: Real>(values: &[f64]) -> Vec<F> {
    values.iter().map(|&v| F::from_f64(v)).collect()
}

impl<F: Real> Evaluator<F> {
    pub fn new(params: &ModelParams) -> Result<Evaluator<F>> {
        let cfg = params.config.clone();
        let (n, d) = (cfg.nodes, cfg.embed_dim);
        let embed64 = &params
            .set
            .get("embeddings")
            .ok_or_else(|| Error::Data("model has no embeddings".into()))?
            .values;
        let embed: Vec<F> = cast(embed64);

        // support: same construction sequence as the tape path
        let mut gram = vec![F::ZERO; n * n];
        kernels::matmul_nt_acc(&embed, &embed, n, d, n, &mut gram);
        let pre: Vec<F> = match cfg.adjacency {
            crate::graph::AdjacencyKind::SoftmaxRelu => gram
                .iter()
                .map(|&v| if v > F::ZERO { v } else { F::ZERO })
                .collect(),
            crate::graph::AdjacencyKind::ScaledDot => {
                let s = F::from_f64(1.0 / (d as f64).sqrt());
                gram.iter().map(|&v| s * v).collect()
            }
        };
        let mut ltilde = vec![F::ZERO; n * n];
        kernels::row_softmax(&pre, n, n, &mut ltilde);

        let mut support_full = ltilde.clone();
        for i in 0..n {
            support_full[i * n + i] = F::ONE + support_full[i * n + i];
        }
        let mut eye = vec![F::ZERO; n * n];
        for i in 0..n {
            eye[i * n + i] = F::ONE;
        }
        let (support_z, support_r) = match cfg.gate_support {
            GateSupport::Uniform => (support_full.clone(), support_full.clone()),
            GateSupport::Split => (ltilde.clone(), eye),
        };

        let (binary, bias) = if params.use_mask {
            let raw = &params.set.get("mask.raw").unwrap().values;
            let binary: Vec<F> = raw
                .iter()
                .map(|&r| if r > 0.0 { F::ONE } else { F::ZERO })
                .collect();
            (binary, cast(&params.set.get("mask.bias").unwrap().values))
        } else {
            (Vec::new(), Vec::new())
        };

        let zr = cfg.zr_width();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let cin = cfg.cat_width(l);
            let get = |suffix: &str| -> Vec<F> {
                cast(
                    &params
                        .set
                        .get(&format!("layer{l}.{suffix}"))
                        .unwrap()
                        .values,
                )
            };
            let w_zr = get("w_zr");
            let b_zr = get("b_zr");
            let w_hat = get("w_hat");
            let b_hat = get("b_hat");
            let mut theta_zr = vec![F::ZERO; n * cin * zr];
            kernels::matmul_acc(&embed, &w_zr, n, d, cin * zr, &mut theta_zr);
            let mut bias_zr = vec![F::ZERO; n * zr];
            kernels::matmul_acc(&embed, &b_zr, n, d, zr, &mut bias_zr);
            let mut theta_hat = vec![F::ZERO; n * cin * cfg.units];
            kernels::matmul_acc(&embed, &w_hat, n, d, cin * cfg.units, &mut theta_hat);
            let mut bias_hat = vec![F::ZERO; n * cfg.units];
            kernels::matmul_acc(&embed, &b_hat, n, d, cfg.units, &mut bias_hat);
            layers.push(LayerBank {
                theta_zr,
                bias_zr,
                theta_hat,
                bias_hat,
                cin,
            });
        }

        let (proj_w, proj_b) = match cfg.projection {
            ProjectionKind::Shared => (
                cast(&params.set.get("proj.w").unwrap().values),
                cast(&params.set.get("proj.b").unwrap().values),
            ),
            ProjectionKind::NodeAdaptive => {
                let w: Vec<F> = cast(&params.set.get("proj.w").unwrap().values);
                let b: Vec<F> = cast(&params.set.get("proj.b").unwrap().values);
                let uh = cfg.units * cfg.horizon;
                let mut theta = vec![F::ZERO; n * uh];
                kernels::matmul_acc(&embed, &w, n, d, uh, &mut theta);
                let mut bias_p = vec![F::ZERO; n * cfg.horizon];
                kernels::matmul_acc(&embed, &b, n, d, cfg.horizon, &mut bias_p);
                (theta, bias_p)
            }
        };

        Ok(Evaluator {
            use_mask: params.use_mask,
            binary,
            bias,
            support_full,
            support_z,
            support_r,
            layers,
            proj_w,
            proj_b,
            cfg,
        })
    }

    /// Normalized-space prediction for one window, shape n×horizon.
    pub fn forward(&self, window: &[F]) -> Result<Vec<F>> {
        let cfg = &self.cfg;
        let (n, c, u) = (cfg.nodes, cfg.channels, cfg.units);
        if window.len() != cfg.window * n * c {
            return Err(Error::Dimension {
                op: "evaluator_forward",
                left: vec![window.len()],
                right: vec![cfg.window, n, c],
            });
        }
        let neg_one = F::from_f64(-1.0);
        let mut hidden = vec![vec![F::ZERO; n * u]; cfg.layers];
        let mut masked = vec![F::ZERO; n * c];
        let mut input = vec![F::ZERO; n * c.max(u)];

        // per-layer scratch, reused across timesteps
        let zr = cfg.zr_width();
        struct Scratch<F> {
            g: Vec<F>,
            agg: Vec<F>,
            pre_zr: Vec<F>,
            pre_r: Vec<F>,
            z: Vec<F>,
            r: Vec<F>,
            pre_h: Vec<F>,
            h_next: Vec<F>,
        }
        let mut scratch: Vec<Scratch<F>> = (0..cfg.layers)
            .map(|l| {
                let cin = cfg.cat_width(l);
                Scratch {
                    g: vec![F::ZERO; n * cin],
                    agg: vec![F::ZERO; n * cin],
                    pre_zr: vec![F::ZERO; n * zr],
                    pre_r: vec![F::ZERO; n * u],
                    z: vec![F::ZERO; n * u],
                    r: vec![F::ZERO; n * u],
                    pre_h: vec![F::ZERO; n * u],
                    h_next: vec![F::ZERO; n * u],
                }
            })
            .collect();

        for t in 0..cfg.window {
            let x_t = &window[t * n * c..(t + 1) * n * c];
            let input0: &[F] = if self.use_mask {
                for i in 0..n {
                    let b = self.binary[i];
                    let inv = neg_one * b + F::ONE;
                    for ch in 0..c {
                        masked[i * c + ch] = b * x_t[i * c + ch] + inv * self.bias[i * c + ch];
                    }
                }
                &masked
            } else {
                x_t
            };
            let mut input_w = c;
            input[..n * c].copy_from_slice(input0);

            for (l, bank) in self.layers.iter().enumerate() {
                let s = &mut scratch[l];
                let h_prev = &hidden[l];
                let cin = bank.cin;
                debug_assert_eq!(input_w + u, cin);

                // g = [input | h_prev]
                for i in 0..n {
                    s.g[i * cin..i * cin + input_w]
                        .copy_from_slice(&input[i * input_w..(i + 1) * input_w]);
                    s.g[i * cin + input_w..(i + 1) * cin]
                        .copy_from_slice(&h_prev[i * u..(i + 1) * u]);
                }

                match cfg.gate_support {
                    GateSupport::Uniform => {
                        s.agg.fill(F::ZERO);
                        kernels::matmul_acc(&self.support_z, &s.g, n, n, cin, &mut s.agg);
                        s.pre_zr.fill(F::ZERO);
                        kernels::rowwise_vecmat(&s.agg, &bank.theta_zr, n, cin, zr, &mut s.pre_zr);
                        for (p, b) in s.pre_zr.iter_mut().zip(bank.bias_zr.iter()) {
                            *p += *b;
                        }
                        for i in 0..n {
                            for j in 0..u {
                                s.z[i * u + j] = kernels::sigmoid(s.pre_zr[i * zr + j]);
                                s.r[i * u + j] = kernels::sigmoid(s.pre_zr[i * zr + u + j]);
                            }
                        }
                    }
                    GateSupport::Split => {
                        s.agg.fill(F::ZERO);
                        kernels::matmul_acc(&self.support_z, &s.g, n, n, cin, &mut s.agg);
                        s.pre_zr.fill(F::ZERO);
                        kernels::rowwise_vecmat(&s.agg, &bank.theta_zr, n, cin, u, &mut s.pre_zr);
                        s.agg.fill(F::ZERO);
                        kernels::matmul_acc(&self.support_r, &s.g, n, n, cin, &mut s.agg);
                        s.pre_r.fill(F::ZERO);
                        kernels::rowwise_vecmat(&s.agg, &bank.theta_zr, n, cin, u, &mut s.pre_r);
                        for j in 0..n * u {
                            s.z[j] = kernels::sigmoid(s.pre_zr[j] + bank.bias_zr[j]);
                            s.r[j] = kernels::sigmoid(s.pre_r[j] + bank.bias_zr[j]);
                        }
                    }
                }

                // g2 = [input | r ⊙ h_prev]
                for i in 0..n {
                    s.g[i * cin + input_w..(i + 1) * cin]
                        .iter_mut()
                        .zip(&s.r[i * u..(i + 1) * u])
                        .zip(&h_prev[i * u..(i + 1) * u])
                        .for_each(|((gv, &rv), &hv)| *gv = rv * hv);
                }
                s.agg.fill(F::ZERO);
                kernels::matmul_acc(&self.support_full, &s.g, n, n, cin, &mut s.agg);
                s.pre_h.fill(F::ZERO);
                kernels::rowwise_vecmat(&s.agg, &bank.theta_hat, n, cin, u, &mut s.pre_h);
                for (p, b) in s.pre_h.iter_mut().zip(bank.bias_hat.iter()) {
                    *p += *b;
                }

                for j in 0..n * u {
                    let h_hat = s.pre_h[j].tanh();
                    let zj = s.z[j];
                    s.h_next[j] = zj * h_prev[j] + (neg_one * zj + F::ONE) * h_hat;
                }
                std::mem::swap(&mut hidden[l], &mut s.h_next);
                input[..n * u].copy_from_slice(&hidden[l]);
                input_w = u;
            }
        }

        let top = &hidden[cfg.layers - 1];
        let mut out = vec![F::ZERO; n * cfg.horizon];
        match cfg.projection {
            ProjectionKind::Shared => {
                kernels::matmul_acc(top, &self.proj_w, n, u, cfg.horizon, &mut out);
                for i in 0..n {
                    for j in 0..cfg.horizon {
                        out[i * cfg.horizon + j] += self.proj_b[j];
                    }
                }
            }
            ProjectionKind::NodeAdaptive => {
                kernels::rowwise_vecmat(top, &self.proj_w, n, u, cfg.horizon, &mut out);
                for (o, b) in out.iter_mut().zip(self.proj_b.iter()) {
                    *o += *b;
                }
            }
        }
        Ok(out)
    }

    /// Convenience path casting an f64 window into this precision first.
    pub fn forward_from_f64(&self, window: &[f64]) -> Result<Vec<F>> {
        self.forward(&cast::<F>(window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::NodeMask;
    use crate::model::{forward, ModelParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            nodes: 5,
            channels: 1,
            embed_dim: 3,
            units: 4,
            layers: 2,
            window: 6,
            horizon: 3,
            seed: 17,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn evaluator_matches_tape_forward_bitwise() {
        let cfg = config();
        let mut mask = NodeMask::all_ones(5, 1);
        mask.raw = vec![1.0, -0.4, 0.6, 1.2, -1.0];
        mask.graph_bias = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        let params = ModelParams::init(&cfg, &mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let window: Vec<f64> = (0..cfg.window * 5)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();

        let tape_out = forward(&params, &window).unwrap();
        let eval = Evaluator::<f64>::new(&params).unwrap();
        let eval_out = eval.forward(&window).unwrap();
        assert_eq!(tape_out, eval_out);
    }

    #[test]
    fn evaluator_split_matches_tape() {
        let cfg = ModelConfig {
            gate_support: GateSupport::Split,
            ..config()
        };
        let params = ModelParams::init(&cfg, &NodeMask::all_ones(5, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let window: Vec<f64> = (0..cfg.window * 5)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let tape_out = forward(&params, &window).unwrap();
        let eval = Evaluator::<f64>::new(&params).unwrap();
        assert_eq!(tape_out, eval.forward(&window).unwrap());
    }

    #[test]
    fn evaluator_node_adaptive_projection_matches_tape() {
        let cfg = ModelConfig {
            projection: ProjectionKind::NodeAdaptive,
            ..config()
        };
        let params = ModelParams::init(&cfg, &NodeMask::all_ones(5, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let window: Vec<f64> = (0..cfg.window * 5)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let tape_out = forward(&params, &window).unwrap();
        let eval = Evaluator::<f64>::new(&params).unwrap();
        assert_eq!(tape_out, eval.forward(&window).unwrap());
    }

    #[test]
    fn f32_evaluator_tracks_f64_loosely() {
        let cfg = config();
        let params = ModelParams::init(&cfg, &NodeMask::all_ones(5, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let window: Vec<f64> = (0..cfg.window * 5)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let e64 = Evaluator::<f64>::new(&params).unwrap();
        let e32 = Evaluator::<f32>::new(&params).unwrap();
        let a = e64.forward(&window).unwrap();
        let b = e32.forward_from_f64(&window).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y.to_f64()).abs() < 1e-3);
        }
    }
}
