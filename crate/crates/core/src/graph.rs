//! Adaptive adjacency from node embeddings and the node-adaptive factorized
//! graph convolution.
//!
//! The adjacency is learned: rows of `softmax(relu(E·Eᵀ))` stand in for the
//! symmetric normalized adjacency, so every row is a distribution over
//! neighbors and the whole matrix is re-derived from the current embeddings
//! on every forward pass. The convolution gives each node its own filter
//! Θ[i] = Σ_k E[i,k]·W[k] drawn from a shared rank-d pool, which keeps the
//! parameter count at d·c·f + n·d instead of n·c·f.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Functional form of the learned adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyKind {
    /// rowsoftmax(relu(E·Eᵀ))
    #[default]
    SoftmaxRelu,
    /// rowsoftmax(E·Eᵀ / √d) — alternate form, kept for comparison runs.
    ScaledDot,
}

/// Learned row-stochastic support matrix L̃ from the embeddings.
pub fn adaptive_support(
    tape: &mut Tape,
    embeddings: TensorId,
    kind: AdjacencyKind,
) -> Result<TensorId> {
    let shape = tape.shape(embeddings).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Dimension {
            op: "adaptive_support",
            left: shape,
            right: vec![],
        });
    }
    let gram = tape.matmul_nt(embeddings, embeddings)?;
    let pre = match kind {
        AdjacencyKind::SoftmaxRelu => tape.relu(gram),
        AdjacencyKind::ScaledDot => tape.scale(gram, 1.0 / (shape[1] as f64).sqrt()),
    };
    tape.row_softmax(pre)
}

/// An identity matrix constant.
pub fn identity_leaf(tape: &mut Tape, n: usize) -> TensorId {
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    tape.leaf(eye, vec![n, n])
}

/// Convolution with precomputed per-node filters.
///
/// `support` is the aggregation matrix (usually I + L̃), `theta` is the
/// embedding-expanded filter bank n×(c·f), `bias` is n×f. Aggregation happens
/// first: H = support·x, then each row of H goes through its own c×f map.
/// `x` may be a single n×c input or a window batch B×n×c; the filters are
/// shared across the batch.
pub fn node_adaptive_conv_precomputed(
    tape: &mut Tape,
    x: TensorId,
    support: TensorId,
    theta: TensorId,
    bias: TensorId,
    channels: usize,
    features: usize,
) -> Result<TensorId> {
    let h = tape.matmul_left_batched(support, x)?;
    let z = tape.rowwise_vecmat(h, theta, channels, features)?;
    tape.add(z, bias)
}

/// Full factorized graph convolution: Z = (I + L̃)·X·(E·W) + E·b.
///
/// `w` is the shared weight pool d×c×f stored row-major as d×(c·f); `b` is
/// the shared bias pool d×f.
pub fn node_adaptive_conv(
    tape: &mut Tape,
    x: TensorId,
    ltilde: TensorId,
    embeddings: TensorId,
    w: TensorId,
    b: TensorId,
    channels: usize,
    features: usize,
) -> Result<TensorId> {
    let xs = tape.shape(x).to_vec();
    let ls = tape.shape(ltilde).to_vec();
    if xs.len() != 2 || xs[1] != channels {
        return Err(Error::Dimension {
            op: "node_adaptive_conv",
            left: xs,
            right: vec![channels, features],
        });
    }
    if ls != vec![xs[0], xs[0]] {
        return Err(Error::Dimension {
            op: "node_adaptive_conv",
            left: ls,
            right: vec![xs[0], xs[0]],
        });
    }
    let n = xs[0];
    let eye = identity_leaf(tape, n);
    let support = tape.add(eye, ltilde)?;
    let theta = tape.matmul(embeddings, w)?;
    let bias = tape.matmul(embeddings, b)?;
    node_adaptive_conv_precomputed(tape, x, support, theta, bias, channels, features)
}

/// Parameter count of one factorized convolution site plus the embedding
/// table, against the per-node alternative it replaces.
pub fn factorization_param_counts(
    n: usize,
    d: usize,
    channels: usize,
    features: usize,
) -> (usize, usize) {
    let factorized = d * channels * features + n * d;
    let dense = n * channels * features;
    (factorized, dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::grad_check;
    use crate::params::{Param, ParamSet};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    #[test]
    fn support_orthogonal_rows() {
        // relu kills the off-diagonal of an orthogonal gram matrix, so each
        // row is softmax([|e_i|², 0]).
        let mut t = Tape::new();
        let e = t.leaf(vec![2.0, 0.0, 0.0, 1.0], vec![2, 2]);
        let s = adaptive_support(&mut t, e, AdjacencyKind::SoftmaxRelu).unwrap();
        let v = t.value(s);
        let expect = |x: f64| {
            let ex = x.exp();
            (ex / (ex + 1.0), 1.0 / (ex + 1.0))
        };
        let (d0, o0) = expect(4.0);
        let (d1, o1) = expect(1.0);
        assert!((v[0] - d0).abs() < 1e-12 && (v[1] - o0).abs() < 1e-12);
        assert!((v[3] - d1).abs() < 1e-12 && (v[2] - o1).abs() < 1e-12);
    }

    #[test]
    fn support_identical_embeddings_is_uniform() {
        let mut t = Tape::new();
        let e = t.leaf([0.4, -0.2].repeat(3), vec![3, 2]);
        let s = adaptive_support(&mut t, e, AdjacencyKind::SoftmaxRelu).unwrap();
        for &v in t.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn support_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let e = t.leaf(rand_vec(&mut rng, 15, -1.0, 1.0), vec![5, 3]);
        let s = adaptive_support(&mut t, e, AdjacencyKind::SoftmaxRelu).unwrap();
        let v = t.value(s);
        for r in 0..5 {
            let sum: f64 = v[r * 5..(r + 1) * 5].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
            assert!(v[r * 5..(r + 1) * 5].iter().all(|&x| x >= 0.0));
        }
    }

    /// Element-by-element reference for Z = (I+L̃)·X·(E·W) + E·b.
    fn conv_reference(
        x: &[f64],
        ltilde: &[f64],
        e: &[f64],
        w: &[f64],
        b: &[f64],
        n: usize,
        d: usize,
        c: usize,
        f: usize,
    ) -> Vec<f64> {
        let mut z = vec![0.0; n * f];
        for i in 0..n {
            for fo in 0..f {
                let mut acc = 0.0;
                for j in 0..n {
                    let s_ij = ltilde[i * n + j] + if i == j { 1.0 } else { 0.0 };
                    for cc in 0..c {
                        // theta[i, cc, fo] = Σ_k e[i,k]·w[k,cc,fo]
                        let mut theta = 0.0;
                        for k in 0..d {
                            theta += e[i * d + k] * w[k * c * f + cc * f + fo];
                        }
                        acc += s_ij * x[j * c + cc] * theta;
                    }
                }
                for k in 0..d {
                    acc += e[i * d + k] * b[k * f + fo];
                }
                z[i * f + fo] = acc;
            }
        }
        z
    }

    #[test]
    fn conv_identity_filter_doubles_input() {
        // n=1: L̃=[1], E=[1,0,...], W[0]=I(c=f), b=0 → Z = 2X
        let (c, d) = (3, 2);
        let mut t = Tape::new();
        let x = t.leaf(vec![1.5, -2.0, 0.25], vec![1, c]);
        let lt = t.leaf(vec![1.0], vec![1, 1]);
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        let e = t.leaf(e, vec![1, d]);
        let mut w = vec![0.0; d * c * c];
        for i in 0..c {
            w[i * c + i] = 1.0; // W[0] = identity
        }
        let w = t.leaf(w, vec![d, c * c]);
        let b = t.leaf(vec![0.0; d * c], vec![d, c]);
        let z = node_adaptive_conv(&mut t, x, lt, e, w, b, c, c).unwrap();
        assert_eq!(t.value(z), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn conv_bias_only_when_weights_zero() {
        let (n, d, c, f) = (3, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::new();
        let x = t.leaf(rand_vec(&mut rng, n * c, -1.0, 1.0), vec![n, c]);
        let lt = t.leaf(rand_vec(&mut rng, n * n, 0.0, 1.0), vec![n, n]);
        let ev = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let e = t.leaf(ev.clone(), vec![n, d]);
        let w = t.leaf(vec![0.0; d * c * f], vec![d, c * f]);
        let bv = rand_vec(&mut rng, d * f, -1.0, 1.0);
        let b = t.leaf(bv.clone(), vec![d, f]);
        let z = node_adaptive_conv(&mut t, x, lt, e, w, b, c, f).unwrap();
        for i in 0..n {
            for fo in 0..f {
                let mut expect = 0.0;
                for k in 0..d {
                    expect += ev[i * d + k] * bv[k * f + fo];
                }
                assert!((t.value(z)[i * f + fo] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_naive_loop_reference() {
        let (n, d, c, f) = (4, 2, 2, 3);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xv = rand_vec(&mut rng, n * c, -1.0, 1.0);
            let lv = rand_vec(&mut rng, n * n, 0.0, 1.0);
            let ev = rand_vec(&mut rng, n * d, -1.0, 1.0);
            let wv = rand_vec(&mut rng, d * c * f, -1.0, 1.0);
            let bv = rand_vec(&mut rng, d * f, -1.0, 1.0);

            let mut t = Tape::new();
            let x = t.leaf(xv.clone(), vec![n, c]);
            let lt = t.leaf(lv.clone(), vec![n, n]);
            let e = t.leaf(ev.clone(), vec![n, d]);
            let w = t.leaf(wv.clone(), vec![d, c * f]);
            let b = t.leaf(bv.clone(), vec![d, f]);
            let z = node_adaptive_conv(&mut t, x, lt, e, w, b, c, f).unwrap();

            let reference = conv_reference(&xv, &lv, &ev, &wv, &bv, n, d, c, f);
            for (got, want) in t.value(z).iter().zip(reference.iter()) {
                assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn conv_is_affine_in_input() {
        // conv(αX) = α·(conv(X) − bias_term) + bias_term
        let (n, d, c, f) = (3, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xv = rand_vec(&mut rng, n * c, -1.0, 1.0);
        let lv = rand_vec(&mut rng, n * n, 0.0, 1.0);
        let ev = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let wv = rand_vec(&mut rng, d * c * f, -1.0, 1.0);
        let bv = rand_vec(&mut rng, d * f, -1.0, 1.0);
        let alpha = 2.75;

        let run = |x: &[f64]| -> Vec<f64> {
            let mut t = Tape::new();
            let x = t.leaf(x.to_vec(), vec![n, c]);
            let lt = t.leaf(lv.clone(), vec![n, n]);
            let e = t.leaf(ev.clone(), vec![n, d]);
            let w = t.leaf(wv.clone(), vec![d, c * f]);
            let b = t.leaf(bv.clone(), vec![d, f]);
            let z = node_adaptive_conv(&mut t, x, lt, e, w, b, c, f).unwrap();
            t.value(z).to_vec()
        };
        let base = run(&xv);
        let scaled = run(&xv.iter().map(|v| v * alpha).collect::<Vec<_>>());
        let bias_only = run(&vec![0.0; n * c]);
        for i in 0..n * f {
            let expect = alpha * (base[i] - bias_only[i]) + bias_only[i];
            assert!((scaled[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradients_pass_finite_differences() {
        let (n, d, c, f) = (4, 3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut params = ParamSet::new();
        params.add(Param::new(
            "x",
            vec![n, c],
            rand_vec(&mut rng, n * c, -1.0, 1.0),
        ));
        params.add(Param::new(
            "e",
            vec![n, d],
            rand_vec(&mut rng, n * d, -1.0, 1.0),
        ));
        params.add(Param::new(
            "w",
            vec![d, c * f],
            rand_vec(&mut rng, d * c * f, -1.0, 1.0),
        ));
        params.add(Param::new(
            "b",
            vec![d, f],
            rand_vec(&mut rng, d * f, -1.0, 1.0),
        ));

        let report = grad_check(
            move |tape, ids| {
                let lt = adaptive_support(tape, ids[1], AdjacencyKind::SoftmaxRelu)?;
                let z = node_adaptive_conv(tape, ids[0], lt, ids[1], ids[2], ids[3], c, f)?;
                tape.mean_all(z)
            },
            &params,
            1e-5,
            1e-5,
            &[],
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn factorization_saves_parameters_on_shipped_configs() {
        // (n, d) pairs from the shipped defaults, both convolution sites of a
        // 64-unit cell with single-channel input.
        for &(n, d) in &[
            (358usize, 10usize),
            (307, 20),
            (883, 20),
            (170, 20),
            (325, 20),
        ] {
            for &(c, f) in &[(65usize, 128usize), (65, 64)] {
                let (factorized, dense) = factorization_param_counts(n, d, c, f);
                let cf = c * f;
                let threshold = cf * n / (cf + n);
                assert!(d < threshold, "config n={n} d={d} outside savings regime");
                assert!(factorized < dense, "n={n} d={d} c={c} f={f}");
            }
        }
    }
}
