use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_coords_per_tensor: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must build a scalar loss on the tape it is handed and be a pure
/// function of the parameters (no dropout). The relative error of a
/// coordinate is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, cfg: GradCheckConfig) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new(cfg.seed);
    let loss = loss_fn(&mut tape, params)?;
    let analytic = tape.backward(loss)?.param_grads(params);
    drop(tape);

    let eval = |p: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new(cfg.seed);
        let loss = loss_fn(&mut tape, p)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for (id, name, tensor) in params.iter() {
        let n = tensor.len();
        let mut coords: Vec<usize> = if n <= cfg.max_coords_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.max_coords_per_tensor).into_vec()
        };
        coords.sort_unstable();
        for j in coords {
            let orig = tensor.data()[j];
            work.get_mut(id).data_mut()[j] = orig + cfg.h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - cfg.h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = analytic[id.0].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel;
                report.worst_param = name.to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Axis, GradMutation, Tensor};

    fn linear_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(3, 2, vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.5]).unwrap());
        s.add("b", Tensor::row_vector(vec![0.05, -0.02]));
        s
    }

    #[test]
    fn linear_map_is_exact() {
        let store = linear_store();
        let f = |tape: &mut Tape, p: &ParamStore| {
            let x = tape.input(Tensor::from_vec(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
            let w = tape.param(p, p.id("w")?);
            let b = tape.param(p, p.id("b")?);
            let y = tape.matmul(x, w)?;
            let y = tape.add_row(y, b)?;
            tape.sum(y, Axis::All)
        };
        let r = grad_check(f, &store, GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_err <= 1e-9, "{r:?}");
        assert_eq!(r.coords_checked, 8);
    }

    fn tanh_loss(mutate: bool) -> impl Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError> {
        move |tape: &mut Tape, p: &ParamStore| {
            if mutate {
                tape.inject_mutation(GradMutation::TanhBackward);
            }
            let x = tape.input(Tensor::from_vec(2, 3, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap());
            let w = tape.param(p, p.id("w")?);
            let y = tape.matmul(x, w)?;
            let y = tape.tanh(y)?;
            tape.sum(y, Axis::All)
        }
    }

    #[test]
    fn corrupted_tanh_backward_is_caught() {
        let store = linear_store();
        let good = grad_check(tanh_loss(false), &store, GradCheckConfig::default()).unwrap();
        assert!(good.max_rel_err <= 1e-6, "{good:?}");
        let bad = grad_check(tanh_loss(true), &store, GradCheckConfig::default()).unwrap();
        assert!(bad.max_rel_err > 1e-2, "{bad:?}");
    }

    #[test]
    fn subsamples_large_tensors() {
        let mut store = ParamStore::new();
        store.add("big", Tensor::filled(40, 20, 0.1));
        let f = |tape: &mut Tape, p: &ParamStore| {
            let w = tape.param(p, p.id("big")?);
            let y = tape.tanh(w)?;
            tape.sum(y, Axis::All)
        };
        let cfg = GradCheckConfig { max_coords_per_tensor: 50, ..Default::default() };
        let r = grad_check(f, &store, cfg).unwrap();
        assert_eq!(r.coords_checked, 50);
    }
}
