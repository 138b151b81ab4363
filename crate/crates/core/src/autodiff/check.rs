//! Central finite-difference verification of reverse-mode gradients.

use super::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter name, element index) with the worst relative error.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub passed: bool,
    /// Parameters excluded from numeric comparison (non-differentiable
    /// forward, e.g. everything upstream of the binary clamp).
    pub exempted: Vec<String>,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` must deterministically construct the scalar computation on the
/// given tape from the registered parameter tensors (in `params` order).
/// Parameters named in `exempt` are still differentiated analytically but are
/// not compared numerically; their surrogate rules carry their own tests.
pub fn grad_check(
    build: impl Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    params: &ParamSet,
    eps: f64,
    tol: f64,
    exempt: &[&str],
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::Domain(format!(
            "grad_check eps must be > 0, got {eps}"
        )));
    }

    let eval = |values: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = values
            .iter()
            .map(|p| tape.param(&p.values, &p.shape))
            .collect();
        let root = build(&mut tape, &ids)?;
        if tape.value(root).len() != 1 {
            return Err(Error::Dimension {
                op: "grad_check",
                left: tape.shape(root).to_vec(),
                right: vec![1],
            });
        }
        let v = tape.value(root)[0];
        if !v.is_finite() {
            return Err(Error::numeric(
                "grad_check",
                format!("non-finite objective {v}"),
            ));
        }
        Ok(v)
    };

    // Analytic gradients from one reverse sweep.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| tape.param(&p.values, &p.shape))
        .collect();
    let root = build(&mut tape, &ids)?;
    if !tape.value(root)[0].is_finite() {
        return Err(Error::numeric(
            "grad_check",
            "non-finite objective at base point",
        ));
    }
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).to_vec()).collect();

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut exempted = Vec::new();

    let mut work = params.clone();
    for (pi, param) in params.iter().enumerate() {
        if exempt.contains(&param.name.as_str()) {
            exempted.push(param.name.clone());
            continue;
        }
        for j in 0..param.len() {
            let orig = param.values[j];
            work.at_mut(pi).values[j] = orig + eps;
            let plus = eval(&work)?;
            work.at_mut(pi).values[j] = orig - eps;
            let minus = eval(&work)?;
            work.at_mut(pi).values[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = rel_error(analytic[pi][j], numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = Some((param.name.clone(), j));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        tol,
        passed: max_rel < tol,
        exempted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Param;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_param(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Param {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Param::new(name, shape.to_vec(), values)
    }

    #[test]
    fn sum_sigmoid_of_linear_map() {
        // f = mean(sigmoid(W·x)) on a random 4×3 instance
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        params.add(random_param("w", &[4, 3], &mut rng));
        params.add(random_param("x", &[3, 1], &mut rng));
        let report = grad_check(
            |tape, ids| {
                let wx = tape.matmul(ids[0], ids[1])?;
                let s = tape.sigmoid(wx);
                tape.mean_all(s)
            },
            &params,
            1e-5,
            1e-6,
            &[],
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn constant_objective_has_zero_gradients() {
        let mut params = ParamSet::new();
        params.add(Param::new("p", vec![3], vec![0.3, -0.7, 2.0]));
        // f ignores the parameter entirely
        let report = grad_check(
            |tape, _ids| {
                let c = tape.leaf(vec![4.0], vec![]);
                tape.mean_all(c)
            },
            &params,
            1e-5,
            1e-9,
            &[],
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // grad of mean(A·B) for random 3×4 · 4×2
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        params.add(random_param("a", &[3, 4], &mut rng));
        params.add(random_param("b", &[4, 2], &mut rng));
        let report = grad_check(
            |tape, ids| {
                let prod = tape.matmul(ids[0], ids[1])?;
                tape.mean_all(prod)
            },
            &params,
            1e-5,
            1e-6,
            &[],
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        // mean(softmax(A) ⊙ C) for a fixed C
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        params.add(random_param("a", &[4, 4], &mut rng));
        let c: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let report = grad_check(
            move |tape, ids| {
                let s = tape.row_softmax(ids[0])?;
                let cc = tape.leaf(c.clone(), vec![4, 4]);
                let prod = tape.mul(s, cc)?;
                tape.mean_all(prod)
            },
            &params,
            1e-5,
            1e-6,
            &[],
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn exempted_parameter_is_reported_not_compared() {
        let mut params = ParamSet::new();
        params.add(Param::new("mask.raw", vec![2], vec![0.5, 2.0]));
        let report = grad_check(
            |tape, ids| {
                let b = tape.binary_clamp_ste(ids[0]);
                tape.mean_all(b)
            },
            &params,
            1e-5,
            1e-6,
            &["mask.raw"],
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.exempted, vec!["mask.raw".to_string()]);
    }
}
