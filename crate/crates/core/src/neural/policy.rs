//! Dual-head actor-critic over a shared trunk.

use super::mlp::{Activation, DenseGrad, Mlp, MlpCache};
use super::optim::{OptimState, StepReport};
use super::NeuralError;
use crate::env::OBS_DIM;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Observation, three belief entries and the belief entropy.
pub const INPUT_DIM: usize = OBS_DIM + 3 + 1;
pub const HIDDEN: usize = 256;
pub const INITIAL_LOG_STD: f64 = -1.0;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Packs the network input. Beliefs over fewer than three goals are
/// zero-padded.
pub fn policy_input(observation: &[f64; OBS_DIM], belief: &[f64], entropy: f64) -> [f64; INPUT_DIM] {
    let mut x = [0.0; INPUT_DIM];
    x[..OBS_DIM].copy_from_slice(observation);
    for (i, p) in belief.iter().take(3).enumerate() {
        x[OBS_DIM + i] = *p;
    }
    x[INPUT_DIM - 1] = entropy;
    x
}

/// Blending weight from a pre-squash actor value.
pub fn squash(u: f64) -> f64 {
    (u.tanh() + 1.0) / 2.0
}

/// Derivative of [`squash`].
pub fn gamma_slope(u: f64) -> f64 {
    let t = u.tanh();
    0.5 * (1.0 - t * t)
}

pub fn gaussian_log_prob(u: f64, mu: f64, log_std: f64) -> f64 {
    let z = (u - mu) / log_std.exp();
    -0.5 * z * z - log_std - LN_SQRT_2PI
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    log_std + 0.5 + LN_SQRT_2PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk: Mlp,
    /// Linear head producing the pre-squash mean.
    pub actor: Mlp,
    pub critic: Mlp,
    /// Single-element exploration log standard deviation.
    pub log_std: Array1<f64>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct PolicyCache {
    trunk: MlpCache,
    actor: MlpCache,
    critic: MlpCache,
    version: u64,
}

/// Batched forward results.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub mu: Array1<f64>,
    pub value: Array1<f64>,
    pub cache: PolicyCache,
}

impl PolicyBatch {
    pub fn gamma(&self) -> Array1<f64> {
        self.mu.mapv(squash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub trunk: Vec<DenseGrad>,
    pub actor: Vec<DenseGrad>,
    pub critic: Vec<DenseGrad>,
    pub log_std: Array1<f64>,
}

impl PolicyGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.trunk.iter().chain(&self.actor).chain(&self.critic) {
            out.push(g.weights.as_slice().expect("standard layout"));
            out.push(g.biases.as_slice().expect("standard layout"));
        }
        out.push(self.log_std.as_slice().expect("standard layout"));
        out
    }

    /// Elementwise sum, used when accumulating minibatch pieces.
    pub fn add_assign(&mut self, other: &PolicyGrads) {
        for (a, b) in self
            .trunk
            .iter_mut()
            .chain(self.actor.iter_mut())
            .chain(self.critic.iter_mut())
            .zip(other.trunk.iter().chain(&other.actor).chain(&other.critic))
        {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
        self.log_std += &other.log_std;
    }
}

impl PolicyNet {
    /// Fan-in uniform initialization; the actor head starts near zero so
    /// the initial blend sits around 0.5.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_sizes(INPUT_DIM, HIDDEN, &mut rng)
    }

    pub fn with_sizes<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let trunk = Mlp::init(&[input, hidden, hidden], &[Activation::Relu, Activation::Relu], 1.0, rng);
        let actor = Mlp::init(&[hidden, 1], &[Activation::Identity], 0.01, rng);
        let critic = Mlp::init(&[hidden, 1], &[Activation::Identity], 1.0, rng);
        Self {
            trunk,
            actor,
            critic,
            log_std: Array1::from_elem(1, INITIAL_LOG_STD),
            version: 0,
        }
    }

    /// Rebuilds a network from stored parts.
    pub fn from_parts(trunk: Mlp, actor: Mlp, critic: Mlp, log_std: f64) -> Self {
        Self {
            trunk,
            actor,
            critic,
            log_std: Array1::from_elem(1, log_std),
            version: 0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.trunk.input_width()
    }

    pub fn log_std(&self) -> f64 {
        self.log_std[0]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.trunk.parameter_count() + self.actor.parameter_count() + self.critic.parameter_count() + 1
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self
            .trunk
            .layers
            .iter_mut()
            .chain(self.actor.layers.iter_mut())
            .chain(self.critic.layers.iter_mut())
        {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.biases.as_slice_mut().expect("standard layout"));
        }
        out.push(self.log_std.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn zero_grads(&self) -> PolicyGrads {
        let z = |m: &Mlp| {
            m.layers
                .iter()
                .map(|l| DenseGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                })
                .collect()
        };
        PolicyGrads {
            trunk: z(&self.trunk),
            actor: z(&self.actor),
            critic: z(&self.critic),
            log_std: Array1::zeros(1),
        }
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<PolicyBatch, NeuralError> {
        let trunk = self.trunk.forward(x)?;
        let feat = trunk.output().view();
        let actor = self.actor.forward(feat)?;
        let critic = self.critic.forward(feat)?;
        Ok(PolicyBatch {
            mu: actor.output().column(0).to_owned(),
            value: critic.output().column(0).to_owned(),
            cache: PolicyCache {
                trunk,
                actor,
                critic,
                version: self.version,
            },
        })
    }

    /// Deterministic blend, value estimate and cache for one input.
    pub fn forward(&self, input: &[f64]) -> Result<(f64, f64, PolicyCache), NeuralError> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|_| NeuralError::Shape {
            expected: self.input_width(),
            found: input.len(),
        })?;
        let b = self.forward_batch(x)?;
        Ok((squash(b.mu[0]), b.value[0], b.cache))
    }

    /// Pre-squash mean and value for one input.
    pub fn forward_mu(&self, input: &[f64]) -> Result<(f64, f64), NeuralError> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|_| NeuralError::Shape {
            expected: self.input_width(),
            found: input.len(),
        })?;
        let b = self.forward_batch(x)?;
        Ok((b.mu[0], b.value[0]))
    }

    /// Exact gradients of `sum_i d_mu[i]*mu_i + d_value[i]*V_i`.
    pub fn backward_raw(
        &self,
        cache: &PolicyCache,
        d_mu: ArrayView1<f64>,
        d_value: ArrayView1<f64>,
    ) -> Result<PolicyGrads, NeuralError> {
        self.backward_full(cache, d_mu, d_value).map(|(g, _)| g)
    }

    fn backward_full(
        &self,
        cache: &PolicyCache,
        d_mu: ArrayView1<f64>,
        d_value: ArrayView1<f64>,
    ) -> Result<(PolicyGrads, Array2<f64>), NeuralError> {
        if cache.version != self.version {
            return Err(NeuralError::StaleCache {
                cache: cache.version,
                net: self.version,
            });
        }
        let n = cache.trunk.output().nrows();
        if d_mu.len() != n || d_value.len() != n {
            return Err(NeuralError::Shape {
                expected: n,
                found: d_mu.len().min(d_value.len()),
            });
        }
        let (actor, d_feat_a) = self.actor.backward(&cache.actor, d_mu.to_owned().insert_axis(Axis(1)));
        let (critic, d_feat_c) = self.critic.backward(&cache.critic, d_value.to_owned().insert_axis(Axis(1)));
        let (trunk, d_input) = self.trunk.backward(&cache.trunk, d_feat_a + d_feat_c);
        let grads = PolicyGrads {
            trunk,
            actor,
            critic,
            log_std: Array1::zeros(1),
        };
        Ok((grads, d_input))
    }

    /// Exact gradients of `d_gamma*gamma + d_value*V` for a single-sample cache.
    pub fn backward(&self, cache: &PolicyCache, d_gamma: f64, d_value: f64) -> Result<PolicyGrads, NeuralError> {
        let d_mu = d_gamma * gamma_slope(cache.actor.output()[[0, 0]]);
        self.backward_raw(cache, Array1::from_elem(1, d_mu).view(), Array1::from_elem(1, d_value).view())
    }

    /// Gradient of `d_gamma*gamma + d_value*V` with respect to the input.
    pub fn input_gradient(&self, cache: &PolicyCache, d_gamma: f64, d_value: f64) -> Result<Array1<f64>, NeuralError> {
        let d_mu = d_gamma * gamma_slope(cache.actor.output()[[0, 0]]);
        let (_, d_input) =
            self.backward_full(cache, Array1::from_elem(1, d_mu).view(), Array1::from_elem(1, d_value).view())?;
        Ok(d_input.row(0).to_owned())
    }

    /// Applies one optimizer step and invalidates older caches.
    pub fn apply_gradients(&mut self, grads: &PolicyGrads, opt: &mut OptimState) -> StepReport {
        let g = grads.slices();
        let report = opt.step(&mut self.param_slices_mut(), &g);
        if !report.skipped {
            self.version += 1;
        }
        report
    }

    /// Samples a pre-squash action, returning `(u, gamma, log_prob)`.
    pub fn sample<R: Rng>(&self, mu: f64, rng: &mut R) -> (f64, f64, f64) {
        let eps: f64 = StandardNormal.sample(rng);
        let u = mu + self.log_std().exp() * eps;
        (u, squash(u), gaussian_log_prob(u, mu, self.log_std()))
    }

    pub fn is_finite(&self) -> bool {
        self.trunk
            .layers
            .iter()
            .chain(&self.actor.layers)
            .chain(&self.critic.layers)
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
            && self.log_std().is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp::Dense;

    #[test]
    fn zero_network_outputs_half_and_zero() {
        let zero = |i, o, a| Mlp {
            layers: vec![Dense::zeros(i, o, a)],
        };
        let net = PolicyNet::from_parts(
            Mlp {
                layers: vec![Dense::zeros(INPUT_DIM, 8, Activation::Relu)],
            },
            zero(8, 1, Activation::Identity),
            zero(8, 1, Activation::Identity),
            INITIAL_LOG_STD,
        );
        let (g, v, _) = net.forward(&[0.3; INPUT_DIM]).unwrap();
        assert_eq!(g, 0.5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn seeded_init_is_bit_stable() {
        let x = [0.25; INPUT_DIM];
        let a = PolicyNet::new(9).forward(&x).unwrap();
        let b = PolicyNet::new(9).forward(&x).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = PolicyNet::new(1);
        let (_, _, cache) = net.forward(&[0.1; INPUT_DIM]).unwrap();
        let g = net.backward(&cache, 0.0, 0.0).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let net = PolicyNet::new(1);
        assert!(matches!(net.forward(&[0.0; 5]), Err(NeuralError::Shape { .. })));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = PolicyNet::new(1);
        let (_, _, cache) = net.forward(&[0.1; INPUT_DIM]).unwrap();
        let g = net.backward(&cache, 1.0, 1.0).unwrap();
        let mut opt = OptimState::new(&net.param_slices_mut(), 1e-3, 10, None);
        net.apply_gradients(&g, &mut opt);
        assert!(matches!(net.backward(&cache, 1.0, 0.0), Err(NeuralError::StaleCache { .. })));
    }

    #[test]
    fn policy_input_layout() {
        let obs = [1.0; OBS_DIM];
        let x = policy_input(&obs, &[0.5, 0.5], 0.69);
        assert_eq!(&x[OBS_DIM..], &[0.5, 0.5, 0.0, 0.69]);
    }
}
