use rand::seq::SliceRandom;

use super::network::{HeadSelect, Network, OutputGrads, Outputs, ParamRef};
use super::Tensor;
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters passed over because a perturbation crossed a relu or
    /// pooling kink.
    pub skipped_kinks: usize,
    pub worst: Option<ParamRef>,
}

/// Compares analytic gradients of `objective` against a fourth-order central
/// difference on up to `n_params` randomly chosen trainable parameters.
///
/// `objective` maps network outputs to a scalar loss and its output
/// gradients. Parameters whose perturbation flips a relu or a pooling winner
/// are replaced by fresh draws, since the loss is not differentiable across
/// those kinks.
pub fn gradient_check<F>(
    net: &Network,
    batch: &[Tensor],
    heads: HeadSelect,
    objective: F,
    eps: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Outputs) -> Result<(f64, OutputGrads)>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step must lie in [1e-7, 1e-4], got {eps}"
        )));
    }
    let (outputs, trace) = net.forward_train(batch, heads)?;
    let base_sig = trace.kink_signature(net);
    let (_, out_grads) = objective(&outputs)?;
    let analytic = net.backward(&trace, &out_grads)?;

    let mut pool = net.trainable_params();
    pool.shuffle(&mut rng_from(seed, &[]));
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for p in pool {
        if report.checked >= n_params {
            break;
        }
        let orig = net.param(p).expect("listed parameter");
        let mut eval = |delta: f64| -> Result<Option<f64>> {
            probe.set_param(p, orig + delta)?;
            let (out, tr) = probe.forward_train(batch, heads)?;
            if tr.kink_signature(&probe) != base_sig {
                return Ok(None);
            }
            Ok(Some(objective(&out)?.0))
        };
        let vals = [eval(eps)?, eval(-eps)?, eval(2.0 * eps)?, eval(-2.0 * eps)?];
        probe.set_param(p, orig)?;
        let [Some(f1), Some(fm1), Some(f2), Some(fm2)] = vals else {
            report.skipped_kinks += 1;
            continue;
        };
        let numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * eps);
        let a = analytic.value(p);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some(p);
        }
    }
    Ok(report)
}
