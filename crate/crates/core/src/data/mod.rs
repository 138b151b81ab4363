//! Dataset ingestion, z-score normalization, temporal splitting, sliding
//! windows, and the fixed baseline masks.
//!
//! Series files are plain CSV: a header row of node ids, then one row per
//! timestep with one value per node. Coordinates, when available, come from a
//! second CSV `node_id,lat,lon`. Splits are temporal 6:2:2 and normalization
//! statistics come from the training split only.

pub mod synthetic;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::NodeMask;

#[derive(Debug, Clone)]
pub struct SpatioTemporalDataset {
    pub name: String,
    /// Row-major T×n×c.
    pub values: Vec<f64>,
    pub steps: usize,
    pub nodes: usize,
    pub channels: usize,
    pub timestep_minutes: f64,
    /// (latitude, longitude) in degrees, aligned with node index.
    pub coords: Option<Vec<(f64, f64)>>,
}

impl SpatioTemporalDataset {
    pub fn value(&self, t: usize, node: usize, ch: usize) -> f64 {
        self.values[(t * self.nodes + node) * self.channels + ch]
    }

    /// Restricts the dataset to the listed nodes (their order becomes the new
    /// node order).
    pub fn restrict_nodes(&self, kept: &[usize]) -> SpatioTemporalDataset {
        let mut values = Vec::with_capacity(self.steps * kept.len() * self.channels);
        for t in 0..self.steps {
            for &i in kept {
                for ch in 0..self.channels {
                    values.push(self.value(t, i, ch));
                }
            }
        }
        SpatioTemporalDataset {
            name: self.name.clone(),
            values,
            steps: self.steps,
            nodes: kept.len(),
            channels: self.channels,
            timestep_minutes: self.timestep_minutes,
            coords: self
                .coords
                .as_ref()
                .map(|c| kept.iter().map(|&i| c[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sigma + self.mu
    }
}

/// Normalized sliding windows of one split.
#[derive(Debug, Clone)]
pub struct WindowSet {
    /// count × window × n × c
    pub inputs: Vec<f64>,
    /// count × horizon × n × c
    pub targets: Vec<f64>,
    pub count: usize,
    pub window: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub channels: usize,
}

impl WindowSet {
    pub fn input(&self, idx: usize) -> &[f64] {
        let len = self.window * self.nodes * self.channels;
        &self.inputs[idx * len..(idx + 1) * len]
    }

    pub fn target(&self, idx: usize) -> &[f64] {
        let len = self.horizon * self.nodes * self.channels;
        &self.targets[idx * len..(idx + 1) * len]
    }

    /// Channel-0 target for window `idx`, transposed to n×horizon to align
    /// with model output.
    pub fn target_node_major(&self, idx: usize) -> Vec<f64> {
        let t = self.target(idx);
        let (n, c, h) = (self.nodes, self.channels, self.horizon);
        let mut out = vec![0.0; n * h];
        for step in 0..h {
            for i in 0..n {
                out[i * h + step] = t[(step * n + i) * c];
            }
        }
        out
    }

    pub fn restrict_nodes(&self, kept: &[usize]) -> WindowSet {
        let (n, c) = (self.nodes, self.channels);
        let pick = |buf: &[f64], steps: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(self.count * steps * kept.len() * c);
            for b in 0..self.count {
                for s in 0..steps {
                    for &i in kept {
                        let base = ((b * steps + s) * n + i) * c;
                        out.extend_from_slice(&buf[base..base + c]);
                    }
                }
            }
            out
        };
        WindowSet {
            inputs: pick(&self.inputs, self.window),
            targets: pick(&self.targets, self.horizon),
            count: self.count,
            window: self.window,
            horizon: self.horizon,
            nodes: kept.len(),
            channels: c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub stats: NormStats,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

fn open_with_context(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Loads a series CSV (and optional coordinates CSV).
pub fn load_csv(path: &Path, coords_path: Option<&Path>) -> Result<SpatioTemporalDataset> {
    let file = std::io::BufReader::new(open_with_context(path)?);
    let mut nodes = 0usize;
    let mut values: Vec<f64> = Vec::new();
    let mut steps = 0usize;
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            nodes = line.split(',').count();
            if nodes == 0 || line.trim().is_empty() {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty header row".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut row = 0usize;
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            values.push(v);
            row += 1;
        }
        if row != nodes {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("ragged row: {row} cells, header has {nodes}"),
            });
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let coords = match coords_path {
        Some(cp) => Some(load_coords_csv(cp, nodes)?),
        None => None,
    };

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    Ok(SpatioTemporalDataset {
        name,
        values,
        steps,
        nodes,
        channels: 1,
        timestep_minutes: 5.0,
        coords,
    })
}

/// Coordinates CSV (`node_id,lat,lon`); must cover exactly node ids 0..n.
pub fn load_coords_csv(path: &Path, nodes: usize) -> Result<Vec<(f64, f64)>> {
    let file = std::io::BufReader::new(open_with_context(path)?);
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "node_id,lat,lon" {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected coords header: {line}"),
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
            message: format!("bad node_id {:?}", parts[0]),
        })?;
        let lat: f64 = parts[1].trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("bad lat {:?}", parts[1]),
        })?;
        let lon: f64 = parts[2].trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("bad lon {:?}", parts[2]),
        })?;
        rows.push((id, lat, lon));
    }
    rows.sort_by_key(|r| r.0);
    let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let expected: Vec<usize> = (0..nodes).collect();
    if ids != expected {
        return Err(Error::Data(format!(
            "{}: coords cover node ids {:?}.., dataset has exactly 0..{}",
            path.display(),
            &ids[..ids.len().min(5)],
            nodes
        )));
    }
    Ok(rows.into_iter().map(|(_, lat, lon)| (lat, lon)).collect())
}

/// Writes a dataset back to the series-CSV shape (header of node ids).
pub fn write_series_csv(ds: &SpatioTemporalDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..ds.nodes).map(|i| i.to_string()).collect();
    writeln!(f, "{}", header.join(","))?;
    for t in 0..ds.steps {
        let row: Vec<String> = (0..ds.nodes)
            .map(|i| format!("{}", ds.value(t, i, 0)))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_coords_csv(coords: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "node_id,lat,lon")?;
    for (i, (lat, lon)) in coords.iter().enumerate() {
        writeln!(f, "{i},{lat},{lon}")?;
    }
    Ok(())
}

/// Temporal 6:2:2 split boundaries.
pub fn split_lengths(steps: usize) -> (usize, usize, usize) {
    let train = steps * 6 / 10;
    let val = steps * 2 / 10;
    (train, val, steps - train - val)
}

/// Sliding windows that fit in a split of the given length.
pub fn window_count(len: usize, window: usize, horizon: usize) -> usize {
    len.saturating_sub(window + horizon - 1)
}

/// Splits temporally, computes z-score statistics on the training split, and
/// builds normalized sliding windows per split (windows never straddle a
/// split boundary).
pub fn split_and_window(
    ds: &SpatioTemporalDataset,
    window: usize,
    horizon: usize,
) -> Result<SplitWindows> {
    let (train_len, val_len, test_len) = split_lengths(ds.steps);
    let need = window + horizon;
    for (name, len) in [("train", train_len), ("val", val_len), ("test", test_len)] {
        if len < need {
            return Err(Error::Data(format!(
                "{name} split has {len} steps, needs at least window+horizon = {need}"
            )));
        }
    }

    let stride = ds.nodes * ds.channels;
    let train_values = &ds.values[..train_len * stride];
    let mu = train_values.iter().sum::<f64>() / train_values.len() as f64;
    let var = train_values
        .iter()
        .map(|v| (v - mu) * (v - mu))
        .sum::<f64>()
        / train_values.len() as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Err(Error::Data(
            "training split is constant (sigma = 0); refusing to normalize".into(),
        ));
    }
    let stats = NormStats { mu, sigma };

    let build = |start: usize, len: usize| -> WindowSet {
        let count = window_count(len, window, horizon);
        let mut inputs = Vec::with_capacity(count * window * stride);
        let mut targets = Vec::with_capacity(count * horizon * stride);
        for b in 0..count {
            let s0 = start + b;
            for t in 0..window {
                for j in 0..stride {
                    inputs.push(stats.normalize(ds.values[(s0 + t) * stride + j]));
                }
            }
            for t in 0..horizon {
                for j in 0..stride {
                    targets.push(stats.normalize(ds.values[(s0 + window + t) * stride + j]));
                }
            }
        }
        WindowSet {
            inputs,
            targets,
            count,
            window,
            horizon,
            nodes: ds.nodes,
            channels: ds.channels,
        }
    };

    Ok(SplitWindows {
        stats,
        train: build(0, train_len),
        val: build(train_len, val_len),
        test: build(train_len + val_len, test_len),
    })
}

/// Uniformly random fixed mask keeping exactly `keep_k` nodes.
pub fn random_mask(nodes: usize, channels: usize, keep_k: usize, seed: u64) -> NodeMask {
    assert!(keep_k <= nodes, "keep_k must be at most n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = rand::seq::index::sample(&mut rng, nodes, keep_k).into_vec();
    NodeMask::fixed_from_kept(nodes, channels, &kept)
}

#[derive(Debug, Clone)]
pub struct CorrelationMaskResult {
    pub mask: NodeMask,
    /// Mean (absolute) correlation of each node against all others.
    pub scores: Vec<f64>,
    /// Nodes whose training series was constant; their correlations were
    /// defined as zero.
    pub constant_nodes: Vec<usize>,
}

/// Fixed mask keeping the `keep_k` nodes least correlated with the rest,
/// scored on the training split only. With `absolute` unset the signed mean
/// correlation is used instead.
pub fn correlation_mask(
    ds: &SpatioTemporalDataset,
    keep_k: usize,
    absolute: bool,
) -> Result<CorrelationMaskResult> {
    let n = ds.nodes;
    if n < 2 {
        return Err(Error::Domain(
            "correlation mask needs at least 2 nodes".into(),
        ));
    }
    if keep_k > n {
        return Err(Error::Domain(format!("cannot keep {keep_k} of {n} nodes")));
    }
    let (train_len, _, _) = split_lengths(ds.steps);
    if train_len < 2 {
        return Err(Error::Data(
            "training split too short for correlations".into(),
        ));
    }

    // per-node mean/std over the training split, channel 0
    let series = |i: usize| (0..train_len).map(move |t| ds.value(t, i, 0));
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    let mut constant_nodes = Vec::new();
    for i in 0..n {
        let m = series(i).sum::<f64>() / train_len as f64;
        let v = series(i).map(|x| (x - m) * (x - m)).sum::<f64>() / train_len as f64;
        mean[i] = m;
        std[i] = v.sqrt();
        if std[i] == 0.0 {
            constant_nodes.push(i);
        }
    }

    let mut scores = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let rho = if std[i] == 0.0 || std[j] == 0.0 {
                0.0
            } else {
                let mut cov = 0.0;
                for t in 0..train_len {
                    cov += (ds.value(t, i, 0) - mean[i]) * (ds.value(t, j, 0) - mean[j]);
                }
                cov / (train_len as f64 * std[i] * std[j])
            };
            acc += if absolute { rho.abs() } else { rho };
        }
        scores[i] = acc / (n - 1) as f64;
    }

    // keep the lowest-score nodes, ties to the lower index
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let kept: Vec<usize> = order.into_iter().take(keep_k).collect();
    Ok(CorrelationMaskResult {
        mask: NodeMask::fixed_from_kept(n, ds.channels, &kept),
        scores,
        constant_nodes,
    })
}
