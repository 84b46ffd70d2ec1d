//! Task learner: double dueling DQN over the six actions, trained on
//! environment rewards from the shared buffer's dqn priority track.

use ndarray::Ix1;
use rand::Rng;
use thiserror::Error;

use crate::env::{Action, Observation, Transition};
use qmaplab_nn::{build_value_network, Adam, ArchSpec, Network};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DqnError {
    #[error("observation shape mismatch: {0}")]
    Shape(String),
    #[error("architecture: {0}")]
    Arch(String),
}

/// Action values for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues(pub [f64; 6]);

impl QValues {
    pub fn get(&self, a: Action) -> f64 {
        self.0[a.code()]
    }

    /// Argmax with ties broken by lowest action code.
    pub fn argmax(&self) -> Action {
        let mut best = 0usize;
        for a in 1..6 {
            if self.0[a] > self.0[best] {
                best = a;
            }
        }
        Action::from_code(best).unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct DqnConfig {
    pub gamma: f64,
    pub dueling: bool,
    pub lr: f64,
    /// Huber loss instead of the default squared error.
    pub huber: bool,
    pub channels: (usize, usize, usize),
    pub hidden: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            dueling: true,
            lr: 1e-4,
            huber: false,
            channels: (4, 8, 8),
            hidden: 32,
        }
    }
}

pub struct DqnLearner {
    pub cfg: DqnConfig,
    net: Network,
    target: Network,
    adam: Adam,
    in_shape: (usize, usize, usize),
    pub train_steps: u64,
}

impl DqnLearner {
    pub fn new<R: Rng>(
        in_shape: (usize, usize, usize),
        cfg: DqnConfig,
        rng: &mut R,
    ) -> Result<Self, DqnError> {
        let (k, h, w) = in_shape;
        let spec = ArchSpec::fit_encoder(h, w, cfg.channels, cfg.hidden)
            .map_err(|e| DqnError::Arch(e.to_string()))?;
        let net = build_value_network(&spec, k, h, w, 6, cfg.dueling, rng)
            .map_err(|e| DqnError::Arch(e.to_string()))?;
        let mut target = net.clone();
        target.copy_params_from(&net);
        let adam = Adam::new(cfg.lr);
        Ok(Self { net, target, adam, in_shape, cfg, train_steps: 0 })
    }

    /// Wraps externally built online/target networks (tests, custom heads).
    pub fn from_networks(
        net: Network,
        target: Network,
        in_shape: (usize, usize, usize),
        cfg: DqnConfig,
    ) -> Self {
        let adam = Adam::new(cfg.lr);
        Self { net, target, adam, in_shape, cfg, train_steps: 0 }
    }

    pub fn check_input(&self, obs: &Observation) -> Result<(), DqnError> {
        let got = (obs.frames.len(), obs.height(), obs.width());
        if got != self.in_shape {
            return Err(DqnError::Shape(format!("expected {:?}, got {got:?}", self.in_shape)));
        }
        Ok(())
    }

    fn net_forward(net: &Network, obs: &Observation) -> QValues {
        let out = net.forward(&obs.to_tensor().into_dyn());
        let out = out.into_dimensionality::<Ix1>().expect("dqn output is 1d");
        assert_eq!(out.len(), 6, "dqn outputs one value per action");
        let mut q = [0.0; 6];
        for (i, v) in out.iter().enumerate() {
            q[i] = *v;
        }
        QValues(q)
    }

    pub fn forward(&self, obs: &Observation) -> QValues {
        Self::net_forward(&self.net, obs)
    }

    /// Double-Q bootstrap targets: selection by the online net, evaluation by
    /// the target net; terminal transitions collapse to the raw reward.
    pub fn targets(&self, batch: &[&Transition]) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                if t.terminal {
                    return t.reward;
                }
                let chosen = Self::net_forward(&self.net, &t.obs_after).argmax();
                let value = Self::net_forward(&self.target, &t.obs_after).get(chosen);
                t.reward + self.cfg.gamma * value
            })
            .collect()
    }

    /// One Adam step on the weighted taken-action loss; returns mean loss and
    /// per-transition TD errors for priority updates.
    pub fn train_step(&mut self, batch: &[&Transition], weights: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(batch.len(), weights.len());
        let targets = self.targets(batch);
        self.net.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut tds = Vec::with_capacity(batch.len());
        for ((t, &y), &w) in batch.iter().zip(&targets).zip(weights) {
            let input = t.obs_before.to_tensor().into_dyn();
            let (out, caches) = self.net.forward_cached(&input);
            let q = out.as_slice().unwrap()[t.action.code()];
            let td = q - y;
            tds.push(td);
            let (l, dq) = if self.cfg.huber {
                let delta = 1.0;
                if td.abs() <= delta {
                    (0.5 * td * td, td)
                } else {
                    (delta * (td.abs() - 0.5 * delta), delta * td.signum())
                }
            } else {
                (td * td, 2.0 * td)
            };
            loss += w * l;
            let mut grad = ndarray::Array1::<f64>::zeros(6);
            grad[t.action.code()] = w * dq * scale;
            self.net.backward(&caches, grad.into_dyn());
        }
        self.adam.step(self.net.params_mut());
        self.train_steps += 1;
        (loss * scale, tds)
    }

    pub fn greedy_action(&self, obs: &Observation) -> Action {
        self.forward(obs).argmax()
    }

    pub fn sync_target(&mut self) {
        self.target.copy_params_from(&self.net);
    }

    pub fn networks_mut(&mut self) -> Option<(&mut Network, &mut Network)> {
        Some((&mut self.net, &mut self.target))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{Frame, StateKey};
    use crate::util::seeded_rng;
    use qmaplab_nn::{Dense, Dueling, Layer};

    fn obs1(value: f32) -> Observation {
        let frame = Arc::new(Frame { h: 1, w: 1, data: vec![value] });
        Observation { frames: vec![frame; 1] }
    }

    fn transition(from: f32, action: Action, to: f32, reward: f64, terminal: bool) -> Transition {
        let key = StateKey { col: 0, row: 0, vy: 0, scroll: 0 };
        Transition {
            obs_before: obs1(from),
            action,
            obs_after: obs1(to),
            next_cell: (0, 0),
            reward,
            terminal,
            world_pos_after: (0, 0),
            key_before: key,
            key_after: key,
        }
    }

    /// Dense 1->6 net whose output equals its bias regardless of input.
    fn table_net(biases: [f64; 6]) -> Network {
        let mut rng = seeded_rng(0, "table");
        let mut dense = Dense::new(1, 6, &mut rng);
        dense.weight.fill(0.0);
        for (i, b) in biases.into_iter().enumerate() {
            dense.bias[i] = b;
        }
        Network::new(vec![Layer::Flatten, Layer::Dense(dense)])
    }

    #[test]
    fn dueling_head_reduces_to_value_when_advantages_vanish() {
        let mut rng = seeded_rng(1, "dueling");
        let mut head = Dueling::new(4, 6, &mut rng);
        head.advantage.weight.fill(0.0);
        head.advantage.bias.fill(0.0);
        let x = ndarray::Array1::from_vec(vec![0.3, -0.2, 0.9, 0.5]);
        let q = head.forward(&x);
        let v = head.value.forward(&x)[0];
        for a in 0..6 {
            assert!((q[a] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dueling_is_invariant_to_constant_advantage_shifts() {
        let mut rng = seeded_rng(2, "dueling");
        let mut head = Dueling::new(3, 6, &mut rng);
        let x = ndarray::Array1::from_vec(vec![0.1, 0.4, -0.7]);
        let before = head.forward(&x);
        for b in head.advantage.bias.iter_mut() {
            *b += 17.25;
        }
        let after = head.forward(&x);
        for a in 0..6 {
            assert!((before[a] - after[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_is_stable_and_matches_brute_force() {
        let mut rng = seeded_rng(3, "argmax");
        let cfg = DqnConfig { channels: (2, 3, 3), hidden: 8, ..DqnConfig::default() };
        let learner = DqnLearner::new((1, 8, 8), cfg, &mut rng).unwrap();
        let frame = Arc::new(Frame { h: 8, w: 8, data: vec![0.2; 64] });
        let obs = Observation { frames: vec![frame; 1] };
        let a = learner.greedy_action(&obs);
        assert_eq!(a, learner.greedy_action(&obs));
        use rand::Rng as _;
        for _ in 0..50 {
            let mut vals = [0.0; 6];
            for v in &mut vals {
                *v = rng.gen_range(-1.0..1.0);
            }
            let q = QValues(vals);
            let brute = (0..6)
                .max_by(|&a, &b| {
                    vals[a]
                        .partial_cmp(&vals[b])
                        .unwrap()
                        .then(b.cmp(&a)) // prefer lower index on exact ties
                })
                .unwrap();
            assert_eq!(q.argmax().code(), brute);
        }
        let ties = QValues([0.5; 6]);
        assert_eq!(ties.argmax(), Action::Noop);
    }

    #[test]
    fn terminal_targets_are_raw_rewards() {
        let net = table_net([0.0; 6]);
        let target = net.clone();
        let learner = DqnLearner::from_networks(net, target, (1, 1, 1), DqnConfig::default());
        let t = transition(0.0, Action::Right, 1.0, 50.0, true);
        assert_eq!(learner.targets(&[&t]), vec![50.0]);
        let t = transition(0.0, Action::Right, 1.0, 0.0, false);
        assert_eq!(learner.targets(&[&t]), vec![0.0], "zero reward, zero next values");
    }

    #[test]
    fn double_q_evaluates_online_choice_under_target_net() {
        // online prefers Left (code 1); target would prefer Right (code 2)
        let net = table_net([0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let target = table_net([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let learner = DqnLearner::from_networks(net, target, (1, 1, 1), DqnConfig::default());
        let t = transition(0.0, Action::Noop, 1.0, 0.0, false);
        let y = learner.targets(&[&t])[0];
        assert!((y - 0.99 * 2.0).abs() < 1e-12, "target evaluates Left under target net, got {y}");
    }

    #[test]
    fn zero_td_means_zero_loss_and_priorities_match_td() {
        let net = table_net([0.0; 6]);
        let target = net.clone();
        let mut learner = DqnLearner::from_networks(net, target, (1, 1, 1), DqnConfig::default());
        let t = transition(0.0, Action::Jump, 1.0, 0.0, false);
        let (loss, tds) = learner.train_step(&[&t], &[1.0]);
        assert_eq!(loss, 0.0);
        assert_eq!(tds, vec![0.0]);
    }

    #[test]
    fn converges_to_analytic_q_on_two_state_mdp() {
        // From state A every action loops back to A with reward 0, except
        // Right which reaches terminal state B with reward 1.
        // Analytic: Q(A, Right) = 1, Q(A, other) = gamma * 1.
        let mut rng = seeded_rng(5, "mdp");
        let mut net_rng = seeded_rng(6, "mdp-init");
        let _ = &mut rng;
        let mut dense_layers = vec![
            Layer::Flatten,
            Layer::Dense(Dense::new(1, 16, &mut net_rng)),
            Layer::Relu,
            Layer::Dueling(Dueling::new(16, 6, &mut net_rng)),
        ];
        let net = Network::new(dense_layers.drain(..).collect());
        let mut target = net.clone();
        target.copy_params_from(&net);
        let cfg = DqnConfig { gamma: 0.9, lr: 5e-3, ..DqnConfig::default() };
        let mut learner = DqnLearner::from_networks(net, target, (1, 1, 1), cfg);
        let batch: Vec<Transition> = Action::ALL
            .iter()
            .map(|&a| {
                if a == Action::Right {
                    transition(-1.0, a, 1.0, 1.0, true)
                } else {
                    transition(-1.0, a, -1.0, 0.0, false)
                }
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let weights = vec![1.0; refs.len()];
        for step in 0..4000 {
            learner.train_step(&refs, &weights);
            if step % 50 == 0 {
                learner.sync_target();
            }
        }
        learner.sync_target();
        let q = learner.forward(&obs1(-1.0));
        assert!((q.get(Action::Right) - 1.0).abs() < 1e-3, "Q(A,Right)={}", q.get(Action::Right));
        for a in [Action::Noop, Action::Left, Action::Jump, Action::JumpLeft, Action::JumpRight] {
            assert!((q.get(a) - 0.9).abs() < 1e-3, "Q(A,{a:?})={}", q.get(a));
        }
    }
}
