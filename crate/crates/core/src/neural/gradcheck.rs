//! Central finite-difference validation of the policy gradients.

use super::policy::PolicyNet;
use super::NeuralError;
use rand::seq::index::sample;
use rand::Rng;

pub const FD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero pairs from
/// reporting noise as error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let floor = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn objective(net: &PolicyNet, x: &[f64], d_gamma: f64, d_value: f64) -> Result<f64, NeuralError> {
    let (g, v, _) = net.forward(x)?;
    Ok(d_gamma * g + d_value * v)
}

/// Compares backward against finite differences on `samples` randomly chosen
/// parameters plus every input coordinate.
pub fn check_policy<R: Rng>(
    net: &PolicyNet,
    x: &[f64],
    d_gamma: f64,
    d_value: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport, NeuralError> {
    let (_, _, cache) = net.forward(x)?;
    let grads = net.backward(&cache, d_gamma, d_value)?;
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let d_input = net.input_gradient(&cache, d_gamma, d_value)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    // log_std is not part of the forward objective; its gradient is 0 both ways.
    let total = analytic.len() - 1;
    for idx in sample(rng, total, samples.min(total)).iter() {
        let mut probe = net.clone();
        let numeric = {
            let mut set = |delta: f64| -> Result<f64, NeuralError> {
                let mut k = idx;
                for s in probe.param_slices_mut() {
                    if k < s.len() {
                        s[k] += delta;
                        break;
                    }
                    k -= s.len();
                }
                objective(&probe, x, d_gamma, d_value)
            };
            let plus = set(FD_EPSILON)?;
            let minus = set(-2.0 * FD_EPSILON)?;
            (plus - minus) / (2.0 * FD_EPSILON)
        };
        worst = worst.max(relative_error(analytic[idx], numeric));
        checked += 1;
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += FD_EPSILON;
        let plus = objective(net, &xp, d_gamma, d_value)?;
        xp[i] -= 2.0 * FD_EPSILON;
        let minus = objective(net, &xp, d_gamma, d_value)?;
        worst = worst.max(relative_error(d_input[i], (plus - minus) / (2.0 * FD_EPSILON)));
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked,
    })
}
