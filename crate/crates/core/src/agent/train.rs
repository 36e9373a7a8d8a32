use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{QNetwork, HIDDEN, INPUT, OUTPUT};
use super::replay::{ReplayMemory, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training budget over which epsilon is annealed.
    pub epsilon_anneal_fraction: f64,
    pub optimizer: OptimizerKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.9,
            tau: 0.005,
            learning_rate: 1e-4,
            batch: 128,
            replay_capacity: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.25,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidConfig(format!("hyperparams.{field} {why}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and > 0");
        }
        if self.batch == 0 {
            return bad("batch", "must be > 0");
        }
        if self.replay_capacity < self.batch {
            return bad("replay_capacity", "must be >= batch");
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_anneal_fraction) {
            return bad("epsilon_anneal_fraction", "must lie in [0, 1]");
        }
        Ok(())
    }

    /// Linearly annealed exploration rate at `cycle` out of `budget` cycles.
    pub fn epsilon(&self, cycle: u64, budget: u64) -> f64 {
        let horizon = self.epsilon_anneal_fraction * budget as f64;
        if horizon <= 0.0 || cycle as f64 >= horizon {
            return self.epsilon_end;
        }
        let frac = cycle as f64 / horizon;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

pub fn huber(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn huber_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// `y = r + gamma * max_a Q_target(S_{t+1}, a)` for every transition.
pub fn batch_targets(target: &QNetwork, batch: &[&Transition], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            let q = target.activations(&t.next_state).q;
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + gamma * best
        })
        .collect()
}

/// Mean Huber loss of `Q_online(S_t)[a]` against fixed targets.
pub fn batch_loss(online: &QNetwork, batch: &[&Transition], targets: &[f64]) -> f64 {
    let total: f64 = batch
        .iter()
        .zip(targets)
        .map(|(t, y)| huber(online.activations(&t.state).q[t.action.0 - 1] - y))
        .sum();
    total / batch.len() as f64
}

/// Loss and its gradient with respect to every online parameter. The
/// gradient is returned in network shape.
pub fn batch_gradient(online: &QNetwork, batch: &[&Transition], targets: &[f64]) -> (f64, QNetwork) {
    let mut grad = QNetwork::zeros();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let act = online.activations(&t.state);
        let a = t.action.0 - 1;
        let err = act.q[a] - y;
        loss += huber(err) * scale;
        let dq = huber_grad(err) * scale;

        grad.b2[a] += dq;
        let w2_row = &online.w2[a * HIDDEN..(a + 1) * HIDDEN];
        for j in 0..HIDDEN {
            let h = act.hidden[j];
            grad.w2[a * HIDDEN + j] += dq * h;
            if h > 0.0 {
                let dh = dq * w2_row[j];
                grad.b1[j] += dh;
                let g_row = &mut grad.w1[j * INPUT..(j + 1) * INPUT];
                for (g, x) in g_row.iter_mut().zip(&t.state) {
                    *g += dh * x;
                }
            }
        }
    }
    debug_assert_eq!(grad.b2.len(), OUTPUT);
    (loss, grad)
}

/// Gradient-descent state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Option<QNetwork>,
    second: Option<QNetwork>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            first: None,
            second: None,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply(&mut self, net: &mut QNetwork, grad: &QNetwork, lr: f64) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in net.params_mut().zip(grad.params()) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self.first.get_or_insert_with(QNetwork::zeros);
                let v = self.second.get_or_insert_with(QNetwork::zeros);
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, g), m), v) in net
                    .params_mut()
                    .zip(grad.params())
                    .zip(m.params_mut())
                    .zip(v.params_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// One DQN update: sample a batch, regress the online network toward the
/// target-network bootstrap, then soft-update the target. Returns the loss
/// before the step.
pub fn train_step(
    online: &mut QNetwork,
    target: &mut QNetwork,
    memory: &ReplayMemory,
    hp: &Hyperparams,
    optimizer: &mut Optimizer,
    rng: &mut impl Rng,
) -> Result<f64> {
    if memory.len() < hp.batch {
        return Err(Error::InsufficientMemory {
            have: memory.len(),
            need: hp.batch,
        });
    }
    let batch = memory.sample(hp.batch, rng);
    let targets = batch_targets(target, &batch, hp.gamma);
    let (loss, grad) = batch_gradient(online, &batch, &targets);
    optimizer.apply(online, &grad, hp.learning_rate);
    online.soft_update_into(target, hp.tau);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::QueueId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(rng: &mut impl Rng) -> Transition {
        Transition {
            state: std::array::from_fn(|_| rng.gen_range(0.0..128.0f64).round()),
            action: QueueId(rng.gen_range(1..=4)),
            reward: rng.gen_range(-1.0..1.0),
            next_state: std::array::from_fn(|_| rng.gen_range(0.0..128.0f64).round()),
        }
    }

    #[test]
    fn tau_one_copies_online_into_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut online = QNetwork::random(&mut rng);
        let mut target = QNetwork::random(&mut rng);
        let mut mem = ReplayMemory::new(16);
        for _ in 0..16 {
            mem.push(transition(&mut rng));
        }
        let hp = Hyperparams {
            tau: 1.0,
            batch: 8,
            replay_capacity: 16,
            ..Hyperparams::default()
        };
        let mut opt = Optimizer::new(hp.optimizer);
        train_step(&mut online, &mut target, &mem, &hp, &mut opt, &mut rng).unwrap();
        assert_eq!(online, target);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = QNetwork::random(&mut rng);
        let t = Transition {
            reward: 0.375,
            ..transition(&mut rng)
        };
        assert_eq!(batch_targets(&target, &[&t], 0.0), vec![0.375]);
    }

    #[test]
    fn insufficient_memory_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut online = QNetwork::zeros();
        let mut target = QNetwork::zeros();
        let mem = ReplayMemory::new(4);
        let hp = Hyperparams::default();
        let mut opt = Optimizer::new(hp.optimizer);
        assert!(matches!(
            train_step(&mut online, &mut target, &mem, &hp, &mut opt, &mut rng),
            Err(Error::InsufficientMemory { have: 0, need: 128 })
        ));
    }

    #[test]
    fn sgd_step_reduces_loss_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut online = QNetwork::random(&mut rng);
        let target = QNetwork::random(&mut rng);
        let owned: Vec<Transition> = (0..32).map(|_| transition(&mut rng)).collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        let targets = batch_targets(&target, &batch, 0.9);
        let before = batch_loss(&online, &batch, &targets);
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        for _ in 0..20 {
            let (_, grad) = batch_gradient(&online, &batch, &targets);
            opt.apply(&mut online, &grad, 1e-5);
        }
        assert!(batch_loss(&online, &batch, &targets) < before);
    }

    #[test]
    fn epsilon_schedule() {
        let hp = Hyperparams::default();
        assert_eq!(hp.epsilon(0, 1000), 1.0);
        assert!((hp.epsilon(125, 1000) - 0.525).abs() < 1e-12);
        assert_eq!(hp.epsilon(250, 1000), 0.05);
        assert_eq!(hp.epsilon(999, 1000), 0.05);
    }

    #[test]
    fn validation_names_fields() {
        let hp = Hyperparams {
            gamma: 1.0,
            ..Hyperparams::default()
        };
        let err = hp.validate().unwrap_err().to_string();
        assert!(err.contains("hyperparams.gamma"), "{err}");
        let hp = Hyperparams {
            tau: 0.0,
            ..Hyperparams::default()
        };
        assert!(hp.validate().unwrap_err().to_string().contains("tau"));
        Hyperparams::default().validate().unwrap();
    }
}
