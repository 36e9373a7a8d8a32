use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::queue::QueueId;

pub const INPUT: usize = NUM_FEATURES;
pub const HIDDEN: usize = 256;
pub const OUTPUT: usize = 4;

/// Two-layer fully connected value network, `11 -> 256 -> 4` with a ReLU
/// between the layers. Weights are stored row-major by output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub hidden: [f64; HIDDEN],
    pub q: [f64; OUTPUT],
}

impl QNetwork {
    pub fn zeros() -> Self {
        QNetwork {
            w1: vec![0.0; HIDDEN * INPUT],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; OUTPUT * HIDDEN],
            b2: vec![0.0; OUTPUT],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation for both
    /// weights and biases.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros();
        let k1 = 1.0 / (INPUT as f64).sqrt();
        let k2 = 1.0 / (HIDDEN as f64).sqrt();
        net.w1.iter_mut().for_each(|w| *w = rng.gen_range(-k1..k1));
        net.b1.iter_mut().for_each(|w| *w = rng.gen_range(-k1..k1));
        net.w2.iter_mut().for_each(|w| *w = rng.gen_range(-k2..k2));
        net.b2.iter_mut().for_each(|w| *w = rng.gen_range(-k2..k2));
        net
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn param(&self, index: usize) -> f64 {
        *self.params().nth(index).expect("parameter index in range")
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        self.params_mut().nth(index).expect("parameter index in range")
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|w| w.is_finite())
    }

    pub fn activations(&self, state: &[f64; INPUT]) -> Activations {
        let mut hidden = [0.0; HIDDEN];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * INPUT..(j + 1) * INPUT];
            let pre: f64 = row.iter().zip(state).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
            *h = pre.max(0.0);
        }
        let mut q = [0.0; OUTPUT];
        for (a, out) in q.iter_mut().enumerate() {
            let row = &self.w2[a * HIDDEN..(a + 1) * HIDDEN];
            *out = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2[a];
        }
        Activations { hidden, q }
    }

    /// Q-values for the four queue placements.
    pub fn forward(&self, state: &[f64; INPUT]) -> Result<[f64; OUTPUT]> {
        if let Some(i) = state.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        Ok(self.activations(state).q)
    }

    /// Scales both layers by `factor`. The output bias takes `factor^2` so
    /// every Q-value is multiplied by exactly `factor^2`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.w1.iter_mut().chain(out.b1.iter_mut()).chain(out.w2.iter_mut()).for_each(|w| *w *= factor);
        out.b2.iter_mut().for_each(|w| *w *= factor * factor);
        out
    }

    /// `target <- tau * self + (1 - tau) * target`.
    pub fn soft_update_into(&self, target: &mut QNetwork, tau: f64) {
        for (t, s) in target.params_mut().zip(self.params()) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

/// Index of the largest value, ties to the lowest index, as a queue id.
pub fn argmax_queue<T: PartialOrd + Copy>(values: &[T]) -> QueueId {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    QueueId(best + 1)
}

/// Epsilon-greedy placement.
pub fn select_action(
    net: &QNetwork,
    state: &[f64; INPUT],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<QueueId> {
    let q = net.forward(state)?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(QueueId(rng.gen_range(1..=OUTPUT)));
    }
    Ok(argmax_queue(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight triple-loop reference, written independently of `activations`.
    fn reference_forward(net: &QNetwork, x: &[f64; INPUT]) -> [f64; OUTPUT] {
        let mut h = vec![0.0; HIDDEN];
        for j in 0..HIDDEN {
            let mut acc = net.b1[j];
            for k in 0..INPUT {
                acc += net.w1[j * INPUT + k] * x[k];
            }
            h[j] = if acc > 0.0 { acc } else { 0.0 };
        }
        let mut q = [0.0; OUTPUT];
        for a in 0..OUTPUT {
            let mut acc = net.b2[a];
            for j in 0..HIDDEN {
                acc += net.w2[a * HIDDEN + j] * h[j];
            }
            q[a] = acc;
        }
        q
    }

    #[test]
    fn zero_network_outputs_zero() {
        let q = QNetwork::zeros().forward(&[17.0; INPUT]).unwrap();
        assert_eq!(q, [0.0; OUTPUT]);
    }

    #[test]
    fn single_path_is_hand_computable() {
        let mut net = QNetwork::zeros();
        net.w1[3 * INPUT + 5] = 2.0; // hidden 3 <- input 5
        net.b1[3] = 1.0;
        net.w2[2 * HIDDEN + 3] = 0.5; // output 2 <- hidden 3
        net.b2[0] = -1.0;
        let mut x = [0.0; INPUT];
        x[5] = 10.0;
        assert_eq!(net.forward(&x).unwrap(), [-1.0, 0.0, 10.5, 0.0]);
        // negative pre-activation is clipped
        x[5] = -10.0;
        assert_eq!(net.forward(&x).unwrap(), [-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_reference_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let net = QNetwork::random(&mut rng);
            let x: [f64; INPUT] = std::array::from_fn(|_| rng.gen_range(0.0..128.0));
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut x = [0.0; INPUT];
        x[4] = f64::NAN;
        assert!(matches!(QNetwork::zeros().forward(&x), Err(Error::NonFiniteInput(4))));
    }

    #[test]
    fn greedy_selection_and_ties() {
        assert_eq!(argmax_queue(&[0.1, 0.9, 0.3, 0.2]), QueueId(2));
        assert_eq!(argmax_queue(&[0.5; 4]), QueueId(1));

        let mut net = QNetwork::zeros();
        net.b2 = vec![0.1, 0.9, 0.3, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&net, &[0.0; INPUT], 0.0, &mut rng).unwrap(), QueueId(2));
        net.b2 = vec![0.0; 4];
        assert_eq!(select_action(&net, &[0.0; INPUT], 0.0, &mut rng).unwrap(), QueueId(1));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = QNetwork::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let mut counts = [0u32; OUTPUT];
        for _ in 0..draws {
            let q = select_action(&net, &[0.0; INPUT], 1.0, &mut rng).unwrap();
            counts[q.0 - 1] += 1;
        }
        let expected = draws as f64 / OUTPUT as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 16.266, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn positive_scaling_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::random(&mut rng);
        for factor in [0.01, 0.5, 3.0, 250.0] {
            let scaled = net.scaled(factor);
            for _ in 0..50 {
                let x: [f64; INPUT] = std::array::from_fn(|_| rng.gen_range(0.0..128.0));
                assert_eq!(
                    argmax_queue(&net.forward(&x).unwrap()),
                    argmax_queue(&scaled.forward(&x).unwrap())
                );
            }
        }
    }

    #[test]
    fn soft_update_contracts_toward_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let online = QNetwork::random(&mut rng);
        let mut target = QNetwork::random(&mut rng);
        let before = target.clone();
        let tau = 0.005;
        online.soft_update_into(&mut target, tau);
        for ((new, old), s) in target.params().zip(before.params()).zip(online.params()) {
            let lhs = (new - s).abs();
            let rhs = (1.0 - tau) * (old - s).abs();
            assert!((lhs - rhs).abs() < 1e-12);
        }
        online.soft_update_into(&mut target, 1.0);
        assert_eq!(target, online);
    }
}
