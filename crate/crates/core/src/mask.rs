//! Learned node mask: raw values, binary clamp, inverse-mask substitution,
//! and the node-usage penalty.
//!
//! The mask is a length-n vector of raw floats, thresholded at zero into a
//! deterministic binary mask (no stochastic component, so training and
//! evaluation always see the same mask). Pruned nodes do not contribute their
//! input values anywhere; a learned per-node, per-channel bias is substituted
//! instead. Gradients reach the raw values through a windowed straight-through
//! rule: the clamp's backward passes gradients unchanged while the raw value
//! lies in [-1, 1] and blocks them outside. Training clips raw values back
//! into that window after every optimizer step; a value parked outside the
//! window would stop receiving gradient and the node could never change state
//! again. Both the surrogate and the clip are choices of this implementation
//! — the clamp itself has no canonical derivative.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Raw values clip to this bound after every optimizer step, keeping every
/// node inside the straight-through window where gradient still flows.
pub const RAW_CLIP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMask {
    /// Learnable raw values, one per node. Positive keeps the node.
    pub raw: Vec<f64>,
    /// Substitute values for pruned nodes, one per node per input channel.
    pub graph_bias: Vec<f64>,
    pub channels: usize,
    /// False for the fixed baseline masks; their raw values never move.
    pub trainable: bool,
}

impl NodeMask {
    /// The training start state: every node in use.
    pub fn all_ones(nodes: usize, channels: usize) -> NodeMask {
        NodeMask {
            raw: vec![1.0; nodes],
            graph_bias: vec![0.0; nodes * channels],
            channels,
            trainable: true,
        }
    }

    /// A frozen mask keeping exactly the listed nodes.
    pub fn fixed_from_kept(nodes: usize, channels: usize, kept: &[usize]) -> NodeMask {
        let mut raw = vec![-1.0; nodes];
        for &i in kept {
            raw[i] = 1.0;
        }
        NodeMask {
            raw,
            graph_bias: vec![0.0; nodes * channels],
            channels,
            trainable: false,
        }
    }

    pub fn nodes(&self) -> usize {
        self.raw.len()
    }

    /// The clamped {0,1} view of the raw values.
    pub fn binary(&self) -> Vec<f64> {
        self.raw
            .iter()
            .map(|&r| if r > 0.0 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn kept_count(&self) -> usize {
        self.raw.iter().filter(|&&r| r > 0.0).count()
    }

    /// Ascending indices of kept nodes.
    pub fn selected_nodes(&self) -> Vec<usize> {
        (0..self.raw.len()).filter(|&i| self.raw[i] > 0.0).collect()
    }

    /// Snaps the mask to exactly `k` kept nodes: the k largest raw values win
    /// (ties to the lower index), raw becomes ±1.
    pub fn project_to_exact_k(&mut self, k: usize) -> Result<()> {
        let n = self.raw.len();
        if k > n {
            return Err(Error::Domain(format!("cannot keep {k} of {n} nodes")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.raw[b]
                .partial_cmp(&self.raw[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut raw = vec![-1.0; n];
        for &i in order.iter().take(k) {
            raw[i] = 1.0;
        }
        self.raw = raw;
        Ok(())
    }

    /// CSV with header `node_id,selected,raw_value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "node_id,selected,raw_value")?;
        for (i, &r) in self.raw.iter().enumerate() {
            let sel = if r > 0.0 { 1 } else { 0 };
            writeln!(f, "{i},{sel},{r}")?;
        }
        Ok(())
    }

    /// Reads a mask CSV back. The result is frozen (bias zeroed); arbitrary
    /// node order in the file is rejected.
    pub fn read_csv(path: &Path, channels: usize) -> Result<NodeMask> {
        let f = std::io::BufReader::new(
            std::fs::File::open(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
        );
        let mut raw = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "node_id,selected,raw_value" {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unexpected mask header: {line}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected 3 fields, found {}", parts.len()),
                });
            }
            let id: usize = parts[0].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad node_id: {}", parts[0]),
            })?;
            if id != raw.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("node ids must be 0..n in order, found {id}"),
                });
            }
            let value: f64 = parts[2].trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad raw_value: {}", parts[2]),
            })?;
            raw.push(value);
        }
        if raw.is_empty() {
            return Err(Error::Data(format!(
                "mask file {} has no rows",
                path.display()
            )));
        }
        let n = raw.len();
        Ok(NodeMask {
            raw,
            graph_bias: vec![0.0; n * channels],
            channels,
            trainable: false,
        })
    }
}

/// Nodes kept at a pruning fraction: round((1 − fraction)·n).
pub fn keep_count(nodes: usize, fraction: f64) -> usize {
    (((1.0 - fraction) * nodes as f64).round() as usize).min(nodes)
}

/// Binary clamp of the raw mask on a tape (forward {0,1}, STE backward).
pub fn make_binary(tape: &mut Tape, raw: TensorId) -> TensorId {
    tape.binary_clamp_ste(raw)
}

/// X̃[i,:] = binary_i · X[i,:] + (1 − binary_i) · bias[i,:].
///
/// The (1 − binary) factor is the inverse mask; exactly one of the two terms
/// has weight 1 for every node. `x` is n×c or a window batch B×n×c; the
/// bias (n×c) broadcasts over the batch.
pub fn apply_mask(
    tape: &mut Tape,
    x: TensorId,
    binary: TensorId,
    graph_bias: TensorId,
) -> Result<TensorId> {
    let xs = tape.shape(x).to_vec();
    let n = tape.shape(binary).first().copied().unwrap_or(0);
    let tail_ok = match xs.len() {
        2 => xs[0] == n,
        3 => xs[1] == n,
        _ => false,
    };
    if !tail_ok || tape.shape(graph_bias) != &xs[xs.len() - 2..] {
        return Err(Error::Dimension {
            op: "apply_mask",
            left: xs,
            right: tape.shape(binary).to_vec(),
        });
    }
    let col = tape.reshape(binary, vec![n, 1])?;
    let kept = tape.mul(col, x)?;
    let inverse = tape.affine(binary, -1.0, 1.0);
    let inv_col = tape.reshape(inverse, vec![n, 1])?;
    let substituted = tape.mul(inv_col, graph_bias)?;
    tape.add(kept, substituted)
}

/// Node-usage penalty: max(0, mean(binary) − γ); the unclamped variant is the
/// raw difference.
pub fn mask_loss(tape: &mut Tape, binary: TensorId, gamma: f64, clamped: bool) -> Result<TensorId> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let mean = tape.mean_all(binary)?;
    let shifted = tape.affine(mean, 1.0, -gamma);
    Ok(if clamped { tape.relu(shifted) } else { shifted })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_mask_loss(raw: &[f64], gamma: f64, clamped: bool) -> f64 {
        let mut t = Tape::new();
        let r = t.param(raw, &[raw.len()]);
        let b = make_binary(&mut t, r);
        let l = mask_loss(&mut t, b, gamma, clamped).unwrap();
        t.value(l)[0]
    }

    #[test]
    fn initial_mask_keeps_every_node() {
        let m = NodeMask::all_ones(5, 1);
        assert_eq!(m.binary(), vec![1.0; 5]);
        assert_eq!(m.selected_nodes(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn thresholding_with_boundary_rule() {
        let m = NodeMask {
            raw: vec![-1.0, 1.0, 0.0],
            graph_bias: vec![0.0; 3],
            channels: 1,
            trainable: true,
        };
        assert_eq!(m.binary(), vec![0.0, 1.0, 0.0]);
        assert_eq!(m.selected_nodes(), vec![1]);
    }

    #[test]
    fn selected_nodes_cases() {
        let m = NodeMask {
            raw: vec![1.0, -1.0, 1.0],
            graph_bias: vec![0.0; 3],
            channels: 1,
            trainable: false,
        };
        assert_eq!(m.selected_nodes(), vec![0, 2]);
        assert_eq!(m.selected_nodes().len(), m.kept_count());

        let empty = NodeMask::fixed_from_kept(3, 1, &[]);
        assert_eq!(empty.selected_nodes(), Vec::<usize>::new());
    }

    #[test]
    fn apply_mask_identity_when_all_kept() {
        let mut t = Tape::new();
        let x = t.leaf(vec![5.0, -3.0, 7.5, 0.1], vec![2, 2]);
        let raw = t.param(&[1.0, 1.0], &[2]);
        let b = make_binary(&mut t, raw);
        let bias = t.leaf(vec![9.0; 4], vec![2, 2]);
        let out = apply_mask(&mut t, x, b, bias).unwrap();
        assert_eq!(t.value(out), t.value(x));
    }

    #[test]
    fn apply_mask_full_substitution_when_all_pruned() {
        let mut t = Tape::new();
        let x = t.leaf(vec![5.0, -3.0], vec![2, 1]);
        let raw = t.param(&[-1.0, -0.2], &[2]);
        let b = make_binary(&mut t, raw);
        let bias = t.leaf(vec![0.25, -0.75], vec![2, 1]);
        let out = apply_mask(&mut t, x, b, bias).unwrap();
        assert_eq!(t.value(out), &[0.25, -0.75]);
    }

    #[test]
    fn apply_mask_mixed() {
        let mut t = Tape::new();
        let x = t.leaf(vec![5.0, 7.0], vec![2, 1]);
        let raw = t.param(&[1.0, -1.0], &[2]);
        let b = make_binary(&mut t, raw);
        let bias = t.leaf(vec![0.0, 0.3], vec![2, 1]);
        let out = apply_mask(&mut t, x, b, bias).unwrap();
        assert_eq!(t.value(out), &[5.0, 0.3]);
    }

    #[test]
    fn mask_loss_values() {
        assert_eq!(scalar_mask_loss(&[1.0; 4], 0.25, true), 0.75);
        assert_eq!(scalar_mask_loss(&[1.0, -1.0, 1.0, -1.0], 0.5, true), 0.0);
        // clamped at zero once usage drops below gamma
        let one_of_ten = [1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        assert_eq!(scalar_mask_loss(&one_of_ten, 0.25, true), 0.0);
        // the unclamped variant goes negative there
        let unclamped = scalar_mask_loss(&one_of_ten, 0.25, false);
        assert!((unclamped - (0.1 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn mask_loss_rejects_bad_gamma() {
        let mut t = Tape::new();
        let raw = t.param(&[1.0], &[1]);
        let b = make_binary(&mut t, raw);
        assert!(matches!(
            mask_loss(&mut t, b, 1.5, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mask_loss_monotone_in_kept_count() {
        let gamma = 0.3;
        let mut last = -1.0;
        for kept in 0..=6 {
            let mut raw = vec![-1.0; 6];
            for r in raw.iter_mut().take(kept) {
                *r = 1.0;
            }
            let loss = scalar_mask_loss(&raw, gamma, true);
            assert!(loss >= last);
            last = loss;
        }
    }

    #[test]
    fn projection_top_k_and_tie_break() {
        let mut m = NodeMask {
            raw: vec![0.9, 0.2, -0.1, 0.5],
            graph_bias: vec![0.0; 4],
            channels: 1,
            trainable: true,
        };
        m.project_to_exact_k(2).unwrap();
        assert_eq!(m.selected_nodes(), vec![0, 3]);
        assert_eq!(m.raw, vec![1.0, -1.0, -1.0, 1.0]);

        // k = n keeps everything regardless of raw values
        let mut m = NodeMask {
            raw: vec![-5.0, -2.0],
            graph_bias: vec![0.0; 2],
            channels: 1,
            trainable: true,
        };
        m.project_to_exact_k(2).unwrap();
        assert_eq!(m.selected_nodes(), vec![0, 1]);

        // tie broken toward the lower index
        let mut m = NodeMask {
            raw: vec![0.5, 0.5],
            graph_bias: vec![0.0; 2],
            channels: 1,
            trainable: true,
        };
        m.project_to_exact_k(1).unwrap();
        assert_eq!(m.selected_nodes(), vec![0]);

        assert!(m.project_to_exact_k(3).is_err());
    }

    #[test]
    fn keep_count_rounding() {
        assert_eq!(keep_count(20, 0.8), 4);
        assert_eq!(keep_count(20, 0.9), 2);
        assert_eq!(keep_count(325, 0.95), 16);
        assert_eq!(keep_count(20, 0.0), 20);
        assert_eq!(keep_count(5, 0.99), 0);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("mask_csv_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.csv");
        let m = NodeMask {
            raw: vec![0.75, -0.25, 1.5],
            graph_bias: vec![0.0; 3],
            channels: 1,
            trainable: true,
        };
        m.write_csv(&path).unwrap();
        let back = NodeMask::read_csv(&path, 1).unwrap();
        assert_eq!(back.raw, m.raw);
        assert_eq!(back.selected_nodes(), m.selected_nodes());
        assert!(!back.trainable);
        std::fs::remove_dir_all(&dir).ok();
    }
}
