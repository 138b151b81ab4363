//! Spatial autocorrelation machinery: weight graphs from sensor coordinates,
//! global Moran's I with permutation (or normal-approximation) p-values, and
//! GeoJSON emission for map plotting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance between (lat, lon) pairs in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum WeightScheme {
    /// Connect all pairs within the threshold (km); symmetric.
    Distance { threshold_km: f64 },
    /// Directed k-nearest-neighbor edges.
    Knn { k: usize },
}

#[derive(Debug, Clone)]
pub struct SpatialWeights {
    /// Row-major n×n, zero diagonal.
    pub w: Vec<f64>,
    pub n: usize,
    pub scheme: WeightScheme,
}

impl SpatialWeights {
    pub fn s0(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Binary weight graph from coordinates. Row standardization divides each
/// row by its sum (empty rows stay zero).
pub fn build_weights(
    coords: &[(f64, f64)],
    scheme: WeightScheme,
    row_standardize: bool,
) -> Result<SpatialWeights> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 coordinates, got {n}")));
    }
    let mut w = vec![0.0; n * n];
    match scheme {
        WeightScheme::Distance { threshold_km } => {
            if threshold_km <= 0.0 {
                return Err(Error::Domain(format!(
                    "distance threshold must be positive, got {threshold_km}"
                )));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    if haversine_km(coords[i], coords[j]) <= threshold_km {
                        w[i * n + j] = 1.0;
                        w[j * n + i] = 1.0;
                    }
                }
            }
        }
        WeightScheme::Knn { k } => {
            if k == 0 || k >= n {
                return Err(Error::Domain(format!(
                    "knn k must lie in 1..n = {n}, got {k}"
                )));
            }
            for i in 0..n {
                let mut dists: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, haversine_km(coords[i], coords[j])))
                    .collect();
                dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                for &(j, _) in dists.iter().take(k) {
                    w[i * n + j] = 1.0;
                }
            }
        }
    }
    if row_standardize {
        for i in 0..n {
            let row_sum: f64 = w[i * n..(i + 1) * n].iter().sum();
            if row_sum > 0.0 {
                for v in w[i * n..(i + 1) * n].iter_mut() {
                    *v /= row_sum;
                }
            }
        }
    }
    Ok(SpatialWeights { w, n, scheme })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    /// −1/(n−1), the expectation under no spatial structure.
    pub expected: f64,
    pub p_value: f64,
    /// Number of permutations (0 for the analytic approximation).
    pub permutations: usize,
}

fn moran_statistic(x: &[f64], weights: &SpatialWeights) -> Result<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        return Err(Error::Domain("Moran's I of a constant signal".into()));
    }
    let s0 = weights.s0();
    if s0 == 0.0 {
        return Err(Error::Domain("empty spatial weight graph (S0 = 0)".into()));
    }
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = weights.w[i * n + j];
            if w != 0.0 {
                cross += w * dev[i] * dev[j];
            }
        }
    }
    Ok((n as f64 / s0) * (cross / denom))
}

/// Global Moran's I with a two-sided permutation p-value. Each permutation
/// draws its RNG from (seed, index), so the result does not depend on
/// evaluation order.
pub fn morans_i(
    x: &[f64],
    weights: &SpatialWeights,
    permutations: usize,
    seed: u64,
) -> Result<MoranResult> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Domain(format!("Moran's I needs n >= 3, got {n}")));
    }
    if weights.n != n {
        return Err(Error::Dimension {
            op: "morans_i",
            left: vec![n],
            right: vec![weights.n],
        });
    }
    let observed = moran_statistic(x, weights)?;
    let expected = -1.0 / (n as f64 - 1.0);
    if permutations == 0 {
        return Err(Error::Domain("permutation count must be positive".into()));
    }

    let obs_dev = (observed - expected).abs();
    let mut extreme = 0usize;
    let mut shuffled = x.to_vec();
    for p in 0..permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, p as u64));
        shuffled.copy_from_slice(x);
        shuffled.shuffle(&mut rng);
        let stat = moran_statistic(&shuffled, weights)?;
        if (stat - expected).abs() >= obs_dev {
            extreme += 1;
        }
    }
    Ok(MoranResult {
        i: observed,
        expected,
        p_value: (1 + extreme) as f64 / (1 + permutations) as f64,
        permutations,
    })
}

/// Normal-approximation alternative (two-sided, randomization variance).
pub fn morans_i_analytic(x: &[f64], weights: &SpatialWeights) -> Result<MoranResult> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Domain(format!("Moran's I needs n >= 3, got {n}")));
    }
    let observed = moran_statistic(x, weights)?;
    let nf = n as f64;
    let expected = -1.0 / (nf - 1.0);
    let s0 = weights.s0();
    let mut s1 = 0.0;
    let mut row_sums = vec![0.0; n];
    let mut col_sums = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let wij = weights.w[i * n + j];
            let wji = weights.w[j * n + i];
            s1 += (wij + wji) * (wij + wji);
            row_sums[i] += wij;
            col_sums[j] += wij;
        }
    }
    s1 *= 0.5;
    let s2: f64 = (0..n).map(|i| (row_sums[i] + col_sums[i]).powi(2)).sum();

    let mean = x.iter().sum::<f64>() / nf;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let b2 = m4 / (m2 * m2);

    let var = (nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
        - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0))
        / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0)
        - expected * expected;
    if var <= 0.0 {
        return Err(Error::Numeric {
            context: "morans_i_analytic".into(),
            message: format!("non-positive variance {var}"),
        });
    }
    let z = (observed - expected) / var.sqrt();
    Ok(MoranResult {
        i: observed,
        expected,
        p_value: 2.0 * crate::stats::std_normal_sf(z.abs()),
        permutations: 0,
    })
}

fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// GeoJSON FeatureCollection of node points with selection, error, and usage
/// properties. Coordinates follow the GeoJSON order [lon, lat].
pub fn nodes_geojson(
    coords: &[(f64, f64)],
    selected: &[bool],
    mean_error: &[f64],
    usage_count: &[usize],
) -> Result<serde_json::Value> {
    let n = coords.len();
    if selected.len() != n || mean_error.len() != n || usage_count.len() != n {
        return Err(Error::Dimension {
            op: "nodes_geojson",
            left: vec![n],
            right: vec![selected.len(), mean_error.len(), usage_count.len()],
        });
    }
    let features: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [coords[i].1, coords[i].0],
                },
                "properties": {
                    "node_id": i,
                    "selected": selected[i],
                    "mean_error": mean_error[i],
                    "usage_count": usage_count[i],
                },
            })
        })
        .collect();
    Ok(serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_weights(n: usize) -> SpatialWeights {
        let mut w = vec![0.0; n * n];
        for i in 0..n - 1 {
            w[i * n + i + 1] = 1.0;
            w[(i + 1) * n + i] = 1.0;
        }
        SpatialWeights {
            w,
            n,
            scheme: WeightScheme::Distance { threshold_km: 1.0 },
        }
    }

    #[test]
    fn haversine_sanity() {
        // one degree of latitude ≈ 111.2 km
        let d = haversine_km((37.0, -122.0), (38.0, -122.0));
        assert!((d - 111.19).abs() < 0.5, "{d}");
        assert_eq!(haversine_km((37.0, -122.0), (37.0, -122.0)), 0.0);
    }

    #[test]
    fn collinear_points_threshold() {
        // 3 equally spaced collinear points: threshold = spacing connects
        // each endpoint only to the middle
        let coords = [(37.0, -122.0), (37.0, -121.99), (37.0, -121.98)];
        let spacing = haversine_km(coords[0], coords[1]);
        let w = build_weights(
            &coords,
            WeightScheme::Distance {
                threshold_km: spacing * 1.01,
            },
            false,
        )
        .unwrap();
        assert_eq!(w.w[1], 1.0); // 0 -> 1
        assert_eq!(w.w[2], 0.0); // 0 -> 2
        assert_eq!(w.w[3], 1.0); // 1 -> 0
        assert_eq!(w.w[5], 1.0); // 1 -> 2
        assert_eq!(w.w[6], 0.0); // 2 -> 0
    }

    #[test]
    fn distance_weights_symmetric_zero_diagonal() {
        let coords = [
            (37.0, -122.0),
            (37.02, -122.01),
            (37.05, -121.9),
            (36.9, -122.2),
        ];
        let w = build_weights(
            &coords,
            WeightScheme::Distance { threshold_km: 12.0 },
            false,
        )
        .unwrap();
        for i in 0..4 {
            assert_eq!(w.w[i * 4 + i], 0.0);
            for j in 0..4 {
                assert_eq!(w.w[i * 4 + j], w.w[j * 4 + i]);
            }
        }
    }

    #[test]
    fn knn_out_degree() {
        let coords = [(37.0, -122.0), (37.01, -122.0), (37.0, -121.99)];
        let w = build_weights(&coords, WeightScheme::Knn { k: 2 }, false).unwrap();
        for i in 0..3 {
            let deg: f64 = w.w[i * 3..(i + 1) * 3].iter().sum();
            assert_eq!(deg, 2.0);
        }
        assert!(build_weights(&coords, WeightScheme::Knn { k: 3 }, false).is_err());
    }

    #[test]
    fn checkerboard_path_graph_is_minus_one() {
        let x = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let w = path_weights(6);
        let r = morans_i(&x, &w, 99, 7).unwrap();
        assert!((r.i - (-1.0)).abs() < 1e-12, "I = {}", r.i);
    }

    #[test]
    fn constant_signal_rejected() {
        let w = path_weights(4);
        assert!(morans_i(&[2.0; 4], &w, 99, 1).is_err());
    }

    #[test]
    fn empty_graph_rejected() {
        let w = SpatialWeights {
            w: vec![0.0; 16],
            n: 4,
            scheme: WeightScheme::Knn { k: 1 },
        };
        assert!(morans_i(&[1.0, 2.0, 3.0, 4.0], &w, 9, 1).is_err());
    }

    #[test]
    fn matches_bruteforce_reference() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 50;
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    37.0 + rng.random_range(-0.3..0.3),
                    -122.0 + rng.random_range(-0.3..0.3),
                )
            })
            .collect();
        let weights = build_weights(&coords, WeightScheme::Knn { k: 3 }, false).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();

        // brute-force double loop straight from the definition
        let mean = x.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut s0 = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += weights.w[i * n + j] * (x[i] - mean) * (x[j] - mean);
                s0 += weights.w[i * n + j];
            }
        }
        let denom: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
        let reference = (n as f64 / s0) * num / denom;

        let r = morans_i(&x, &weights, 9, 0).unwrap();
        assert!((r.i - reference).abs() < 1e-12);
    }

    #[test]
    fn permutation_pvalue_deterministic_and_seeded() {
        let x = [0.3, 1.7, -0.2, 0.9, -1.4, 0.1, 2.0, -0.6];
        let coords: Vec<(f64, f64)> = (0..8).map(|i| (37.0 + 0.01 * i as f64, -122.0)).collect();
        let w = build_weights(&coords, WeightScheme::Knn { k: 2 }, false).unwrap();
        let a = morans_i(&x, &w, 199, 5).unwrap();
        let b = morans_i(&x, &w, 199, 5).unwrap();
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn analytic_mode_agrees_loosely_with_permutations() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 40;
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    37.0 + rng.random_range(-0.2..0.2),
                    -122.0 + rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let w = build_weights(&coords, WeightScheme::Knn { k: 2 }, false).unwrap();
        // strongly autocorrelated signal: x = latitude
        let x: Vec<f64> = coords.iter().map(|c| c.0 * 100.0).collect();
        let perm = morans_i(&x, &w, 999, 3).unwrap();
        let ana = morans_i_analytic(&x, &w).unwrap();
        assert_eq!(perm.i, ana.i);
        assert!(perm.p_value < 0.01 && ana.p_value < 0.01);
    }

    #[test]
    fn geojson_schema() {
        let coords = [(37.0, -122.0), (37.1, -122.1)];
        let gj = nodes_geojson(&coords, &[true, false], &[0.5, 1.5], &[10, 0]).unwrap();
        assert_eq!(gj["type"], "FeatureCollection");
        let features = gj["features"].as_array().unwrap();
        assert_eq!(features.len(), 2);
        for f in features {
            assert!(f["properties"]["selected"].is_boolean());
            assert!(f["properties"]["mean_error"].is_number());
            assert!(f["properties"]["usage_count"].is_number());
        }
        // GeoJSON stores [lon, lat]
        assert_eq!(features[0]["geometry"]["coordinates"][0], -122.0);
        assert_eq!(features[0]["geometry"]["coordinates"][1], 37.0);
    }
}
