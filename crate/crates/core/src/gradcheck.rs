//! Central finite-difference check of every parameter gradient of a
//! [`MatchModel`].
//!
//! Relative error is `|a - n| / max(|a|, |n|, floor)`. The floor keeps
//! round-off in the difference quotient (about `eps · |loss| / h`) from
//! dominating entries whose true gradient is essentially zero.
//!
//! ReLU and max-pool are only piecewise smooth, and `±h` may straddle a
//! kink. An entry whose central quotient misses the tolerance is therefore
//! re-measured with one-sided second-order quotients (either side, steps
//! `h`, `h/10`, `h/100`); one of them sees a single branch. A wrong
//! gradient fails all of them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MatchModel;
use crate::rng::{self, streams};
use crate::tensor::{DropoutMode, Tensor};
use rand::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub seed: u64,
    /// Check at most this many entries per tensor (evenly strided); all when `None`.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            seed: 0,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Entries whose central quotient missed and were re-measured one-sided.
    pub kink_retries: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    /// `(layer, max relative error, passed)` with weight and bias merged.
    pub fn by_layer(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for t in &self.tensors {
            let layer = t.name.rsplit_once('.').map_or(t.name.as_str(), |(l, _)| l);
            match out.last_mut() {
                Some(last) if last.0 == layer => {
                    last.1 = last.1.max(t.max_rel_error);
                    last.2 &= t.passed;
                }
                _ => out.push((layer.to_string(), t.max_rel_error, t.passed)),
            }
        }
        out
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// A random `[1, s, s]` patch pair for checking.
pub fn random_pair(size: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng::stream(seed, streams::DATA, 0);
    let a = Tensor::from_fn(&[1, size, size], |_| r.random_range(-1.0..1.0));
    let b = Tensor::from_fn(&[1, size, size], |_| r.random_range(-1.0..1.0));
    (a, b)
}

/// Checks every parameter of `model` on one pair in training mode (a fixed
/// dropout mask).
pub fn gradcheck(model: &MatchModel<f64>, a: &Tensor<f64>, b: &Tensor<f64>, label: u8, config: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(config.step > 0.0) || !(config.tolerance > 0.0) || !(config.floor > 0.0) {
        return Err(Error::Validation("gradcheck step, tolerance and floor must be positive".into()));
    }
    let start = Instant::now();
    let mode = DropoutMode::Train {
        seed: rng::stream_seed(config.seed, streams::DROPOUT, 0),
    };
    let (_, grads) = model.loss_and_grads(a, b, label, mode)?;
    let mut joint = model.features(a)?.into_data();
    joint.extend(model.features(b)?.into_data());
    let joint = Tensor::vector(joint);

    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for (pi, grad) in grads.iter().enumerate() {
        let name = probe.params()[pi].name.clone();
        let metric_only = name.starts_with("metric.");
        // Activations ahead of the perturbed layer do not depend on it.
        let step = model.tower_step_of(pi);
        let acts = match step {
            Some(s) => Some((model.tower_prefix(a, s)?, model.tower_prefix(b, s)?)),
            None => None,
        };
        let n = grad.len();
        let stride = config.max_per_tensor.map_or(1, |m| n.div_ceil(m.max(1)));
        let mut check = TensorCheck {
            name,
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            kink_retries: 0,
            passed: true,
        };
        let loss_at = |probe: &mut MatchModel<f64>, j: usize, delta: f64| -> Result<f64> {
            let orig = probe.params()[pi].value.data()[j];
            probe.params_mut()[pi].value.data_mut()[j] = orig + delta;
            let l = match (&acts, step) {
                _ if metric_only => probe.metric_loss(&joint, label, mode),
                (Some((xa, xb)), Some(s)) => probe.suffix_loss(xa, xb, s, label, mode),
                _ => probe.pair_loss(a, b, label, mode),
            };
            probe.params_mut()[pi].value.data_mut()[j] = orig;
            l
        };
        for j in (0..n).step_by(stride) {
            let h = config.step;
            let lp = loss_at(&mut probe, j, h)?;
            let lm = loss_at(&mut probe, j, -h)?;
            let mut numeric = (lp - lm) / (2.0 * h);
            let mut err = rel_error(grad[j], numeric, config.floor);
            if err >= config.tolerance {
                check.kink_retries += 1;
                let l0 = loss_at(&mut probe, j, 0.0)?;
                // Second-order one-sided quotients stay on one branch when
                // the kink lies on the other side.
                for small in [h, h * 1e-1, h * 1e-2] {
                    for side in [1.0, -1.0] {
                        let d = side * small;
                        let f1 = loss_at(&mut probe, j, d)?;
                        let f2 = loss_at(&mut probe, j, 2.0 * d)?;
                        let n2 = (4.0 * f1 - 3.0 * l0 - f2) / (2.0 * d);
                        let e2 = rel_error(grad[j], n2, config.floor);
                        if e2 < err {
                            (numeric, err) = (n2, e2);
                        }
                    }
                }
            }
            check.checked += 1;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = j;
                check.analytic_at_worst = grad[j];
                check.numeric_at_worst = numeric;
            }
        }
        check.passed = check.max_rel_error < config.tolerance;
        log::debug!(
            "{}: {} entries, max rel err {:.3e}{}",
            check.name,
            check.checked,
            check.max_rel_error,
            if check.passed { "" } else { " FAIL" }
        );
        tensors.push(check);
    }
    Ok(GradCheckReport {
        tensors,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::tensor::LayerSpec;

    fn tiny() -> ArchConfig {
        ArchConfig {
            input_channels: 1,
            input_size: 12,
            feature: vec![
                LayerSpec::conv(2, 3, 1),
                LayerSpec::Relu,
                LayerSpec::pool(2, 2),
                LayerSpec::conv(3, 3, 1),
                LayerSpec::Relu,
            ],
            metric_hidden: [6, 5],
        }
    }

    #[test]
    fn tiny_model_passes() {
        let m = MatchModel::<f64>::build(&tiny(), 3).unwrap();
        let (a, b) = random_pair(12, 1);
        let r = gradcheck(&m, &a, &b, 1, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{:#?}", r.tensors);
        assert_eq!(r.tensors.len(), 10);
        assert_eq!(r.by_layer().len(), 5);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        assert!(rel_error(1.0, 1.001, 1e-6) > 1e-4);
        assert!(rel_error(1e-12, 0.0, 1e-6) < 1e-4);
    }
}
