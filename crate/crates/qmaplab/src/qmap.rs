//! Goal-conditioned Q-map learner: one 2D frame of Q-values per action, all
//! viewport goals at once. Two interchangeable backends: an exact table keyed
//! by physical state, and a conv encoder-decoder trained by Adam.

use std::collections::HashMap;

use ndarray::Ix3;
use rand::Rng;
use thiserror::Error;

use crate::env::{Action, Observation, StateKey, Transition};
use crate::util::gamma_pow;
use qmaplab_nn::{build_map_network, Adam, ArchSpec, Network};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QMapError {
    #[error("expected_steps needs 0 < q, got {0}")]
    Domain(String),
    #[error("observation shape mismatch: {0}")]
    Shape(String),
    #[error("architecture: {0}")]
    Arch(String),
}

/// Per-state stack of per-action goal-value frames, layout [y][x][a].
#[derive(Debug, Clone, PartialEq)]
pub struct QMapTensor {
    pub hq: usize,
    pub wq: usize,
    data: Vec<f64>,
}

impl QMapTensor {
    pub fn zeros(hq: usize, wq: usize) -> Self {
        Self { hq, wq, data: vec![0.0; hq * wq * 6] }
    }

    pub fn from_values(hq: usize, wq: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), hq * wq * 6);
        Self { hq, wq, data }
    }

    #[inline]
    fn idx(&self, y: usize, x: usize, a: usize) -> usize {
        (y * self.wq + x) * 6 + a
    }

    pub fn get(&self, y: usize, x: usize, a: Action) -> f64 {
        self.data[self.idx(y, x, a.code())]
    }

    pub fn set(&mut self, y: usize, x: usize, a: Action, v: f64) {
        let i = self.idx(y, x, a.code());
        self.data[i] = v;
    }

    /// Max over actions at one goal cell.
    pub fn max_action(&self, y: usize, x: usize) -> f64 {
        let base = self.idx(y, x, 0);
        self.data[base..base + 6].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over actions, ties broken by lowest action code.
    pub fn argmax_action(&self, y: usize, x: usize) -> Action {
        let base = self.idx(y, x, 0);
        let mut best = 0usize;
        for a in 1..6 {
            if self.data[base + a] > self.data[base + best] {
                best = a;
            }
        }
        Action::from_code(best).unwrap()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Training target for one transition's taken action, layout [y][x].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    pub hq: usize,
    pub wq: usize,
    pub data: Vec<f64>,
}

impl TargetMap {
    pub fn zeros(hq: usize, wq: usize) -> Self {
        Self { hq, wq, data: vec![0.0; hq * wq] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.wq + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.wq + x] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMapBackendKind {
    Tabular,
    Neural,
}

#[derive(Debug, Clone)]
pub struct QMapConfig {
    pub gamma: f64,
    pub backend: QMapBackendKind,
    pub lr: f64,
    /// Decoupled action selection (online net) from evaluation (target net).
    pub double_q: bool,
    pub tabular_step_size: f64,
    pub channels: (usize, usize, usize),
    pub hidden: usize,
}

impl Default for QMapConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            backend: QMapBackendKind::Tabular,
            lr: 1e-4,
            double_q: true,
            tabular_step_size: 1.0,
            channels: (8, 16, 16),
            hidden: 64,
        }
    }
}

/// What the learner needs to evaluate one state: frames for the neural
/// backend, the exact physical key for the tabular one.
#[derive(Debug, Clone, Copy)]
pub struct StateInput<'a> {
    pub obs: &'a Observation,
    pub key: StateKey,
}

enum Backend {
    Tabular {
        table: HashMap<StateKey, Vec<f64>>,
    },
    Neural {
        net: Network,
        target: Network,
        adam: Adam,
        in_shape: (usize, usize, usize),
    },
}

pub struct QMapLearner {
    pub cfg: QMapConfig,
    pub hq: usize,
    pub wq: usize,
    backend: Backend,
    pub train_steps: u64,
}

impl QMapLearner {
    pub fn new_tabular(hq: usize, wq: usize, cfg: QMapConfig) -> Self {
        Self {
            cfg,
            hq,
            wq,
            backend: Backend::Tabular { table: HashMap::new() },
            train_steps: 0,
        }
    }

    /// Builds the conv encoder-decoder backend for `(stack, hpx, wpx)` input.
    pub fn new_neural<R: Rng>(
        hq: usize,
        wq: usize,
        in_shape: (usize, usize, usize),
        cfg: QMapConfig,
        rng: &mut R,
    ) -> Result<Self, QMapError> {
        let (k, h, w) = in_shape;
        let spec = ArchSpec::fit(h, w, 6, hq, wq, cfg.channels, cfg.hidden)
            .map_err(|e| QMapError::Arch(e.to_string()))?;
        let net = build_map_network(&spec, k, h, w, rng).map_err(|e| QMapError::Arch(e.to_string()))?;
        let mut target = net.clone();
        target.copy_params_from(&net);
        let adam = Adam::new(cfg.lr);
        Ok(Self {
            hq,
            wq,
            backend: Backend::Neural { net, target, adam, in_shape },
            cfg,
            train_steps: 0,
        })
    }

    pub fn backend_kind(&self) -> QMapBackendKind {
        match self.backend {
            Backend::Tabular { .. } => QMapBackendKind::Tabular,
            Backend::Neural { .. } => QMapBackendKind::Neural,
        }
    }

    pub fn check_input(&self, obs: &Observation) -> Result<(), QMapError> {
        if let Backend::Neural { in_shape, .. } = &self.backend {
            let got = (obs.frames.len(), obs.height(), obs.width());
            if got != *in_shape {
                return Err(QMapError::Shape(format!("expected {in_shape:?}, got {got:?}")));
            }
        }
        Ok(())
    }

    fn table_row(&self, key: &StateKey) -> Option<&Vec<f64>> {
        match &self.backend {
            Backend::Tabular { table } => table.get(key),
            _ => None,
        }
    }

    fn net_forward(net: &Network, obs: &Observation, hq: usize, wq: usize) -> QMapTensor {
        let input = obs.to_tensor().into_dyn();
        let out = net.forward(&input);
        let out = out.into_dimensionality::<Ix3>().expect("map output is 3d");
        let (a, h, w) = out.dim();
        assert_eq!((a, h, w), (6, hq, wq), "map output shape");
        let mut t = QMapTensor::zeros(hq, wq);
        for y in 0..hq {
            for x in 0..wq {
                for (code, &action) in Action::ALL.iter().enumerate() {
                    t.set(y, x, action, out[(code, y, x)]);
                }
            }
        }
        t
    }

    /// Q(s, ., .) for every goal and action at once.
    pub fn forward(&self, input: &StateInput<'_>) -> QMapTensor {
        match &self.backend {
            Backend::Tabular { .. } => match self.table_row(&input.key) {
                Some(row) => QMapTensor::from_values(self.hq, self.wq, row.clone()),
                None => QMapTensor::zeros(self.hq, self.wq),
            },
            Backend::Neural { net, .. } => Self::net_forward(net, input.obs, self.hq, self.wq),
        }
    }

    /// Next-state values under the bootstrap rule: tabular self-targets,
    /// neural uses the frozen target net (double-Q selects with the online
    /// net and evaluates with the target net).
    fn next_values(&self, obs: &Observation, key: StateKey) -> TargetMap {
        let mut out = TargetMap::zeros(self.hq, self.wq);
        match &self.backend {
            Backend::Tabular { .. } => {
                if let Some(row) = self.table_row(&key) {
                    let t = QMapTensor::from_values(self.hq, self.wq, row.clone());
                    for y in 0..self.hq {
                        for x in 0..self.wq {
                            out.set(y, x, t.max_action(y, x));
                        }
                    }
                }
            }
            Backend::Neural { net, target, .. } => {
                let tgt = Self::net_forward(target, obs, self.hq, self.wq);
                if self.cfg.double_q {
                    let online = Self::net_forward(net, obs, self.hq, self.wq);
                    for y in 0..self.hq {
                        for x in 0..self.wq {
                            let a = online.argmax_action(y, x);
                            out.set(y, x, tgt.get(y, x, a));
                        }
                    }
                } else {
                    for y in 0..self.hq {
                        for x in 0..self.wq {
                            out.set(y, x, tgt.max_action(y, x));
                        }
                    }
                }
            }
        }
        out
    }

    /// Target construction: terminal transitions give an all-zero map;
    /// otherwise gamma * clip(next-state values, 0, 1) with the visited cell
    /// overwritten to exactly 1.
    pub fn compute_targets(&self, batch: &[&Transition]) -> Vec<TargetMap> {
        batch
            .iter()
            .map(|tr| {
                if tr.terminal {
                    return TargetMap::zeros(self.hq, self.wq);
                }
                let mut map = self.next_values(&tr.obs_after, tr.key_after);
                for v in map.data.iter_mut() {
                    *v = self.cfg.gamma * v.clamp(0.0, 1.0);
                }
                let (x, y) = tr.next_cell;
                map.set(y, x, 1.0);
                map
            })
            .collect()
    }

    /// One training step on the taken-action slices. Returns the mean loss
    /// and per-transition mean absolute cell errors (for replay priorities).
    pub fn train_step(&mut self, batch: &[&Transition], weights: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(batch.len(), weights.len());
        let targets = self.compute_targets(batch);
        let cells = (self.hq * self.wq) as f64;
        let mut td_errors = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        match &mut self.backend {
            Backend::Tabular { table } => {
                let step = self.cfg.tabular_step_size;
                for (tr, target) in batch.iter().zip(&targets) {
                    let row = table
                        .entry(tr.key_before)
                        .or_insert_with(|| vec![0.0; self.hq * self.wq * 6]);
                    let a = tr.action.code();
                    let mut abs_sum = 0.0;
                    let mut sq_sum = 0.0;
                    for y in 0..self.hq {
                        for x in 0..self.wq {
                            let i = (y * self.wq + x) * 6 + a;
                            let err = target.get(y, x) - row[i];
                            abs_sum += err.abs();
                            sq_sum += err * err;
                            row[i] += step * err;
                        }
                    }
                    td_errors.push(abs_sum / cells);
                    loss += sq_sum;
                }
            }
            Backend::Neural { net, adam, .. } => {
                net.zero_grad();
                let scale = 1.0 / batch.len() as f64;
                for ((tr, target), &w) in batch.iter().zip(&targets).zip(weights) {
                    let input = tr.obs_before.to_tensor().into_dyn();
                    let (out, caches) = net.forward_cached(&input);
                    let out3 = out.view().into_dimensionality::<Ix3>().unwrap();
                    let a = tr.action.code();
                    let mut grad = ndarray::Array3::<f64>::zeros(out3.dim());
                    let mut abs_sum = 0.0;
                    for y in 0..self.hq {
                        for x in 0..self.wq {
                            let err = out3[(a, y, x)] - target.get(y, x);
                            abs_sum += err.abs();
                            loss += w * err * err;
                            grad[(a, y, x)] = 2.0 * w * err * scale;
                        }
                    }
                    td_errors.push(abs_sum / cells);
                    net.backward(&caches, grad.into_dyn());
                }
                adam.step(net.params_mut());
            }
        }
        self.train_steps += 1;
        (loss / batch.len() as f64, td_errors)
    }

    /// Greedy Q-map action towards a goal cell (gx, gy).
    pub fn greedy_action(&self, input: &StateInput<'_>, goal: (usize, usize)) -> Action {
        self.forward(input).argmax_action(goal.1, goal.0)
    }

    /// Goal cells whose clipped best value corresponds to an expected
    /// distance within [steps_min, steps_max].
    pub fn goals_in_range(
        &self,
        input: &StateInput<'_>,
        steps_min: u32,
        steps_max: u32,
    ) -> Vec<(usize, usize)> {
        goals_in_range_from(&self.forward(input), self.cfg.gamma, steps_min, steps_max)
    }

    /// Inverts q = gamma^(T-1): T = round(1 + ln q / ln gamma), at least 1.
    pub fn expected_steps(&self, q: f64) -> Result<u32, QMapError> {
        expected_steps(q, self.cfg.gamma)
    }

    /// Copies online parameters into the target network (neural backend);
    /// the tabular backend self-targets, so this is a no-op there.
    pub fn sync_target(&mut self) {
        if let Backend::Neural { net, target, .. } = &mut self.backend {
            target.copy_params_from(net);
        }
    }

    /// Snapshot of the tabular table, sorted by key (empty for neural).
    pub fn tabular_entries(&self) -> Vec<(StateKey, &Vec<f64>)> {
        match &self.backend {
            Backend::Tabular { table } => {
                let mut rows: Vec<_> = table.iter().map(|(k, v)| (*k, v)).collect();
                rows.sort_by_key(|(k, _)| *k);
                rows
            }
            _ => Vec::new(),
        }
    }

    pub fn load_tabular_entries(&mut self, rows: Vec<(StateKey, Vec<f64>)>) {
        if let Backend::Tabular { table } = &mut self.backend {
            table.clear();
            for (k, v) in rows {
                table.insert(k, v);
            }
        }
    }

    pub fn networks_mut(&mut self) -> Option<(&mut Network, &mut Network)> {
        match &mut self.backend {
            Backend::Neural { net, target, .. } => Some((net, target)),
            _ => None,
        }
    }
}

pub fn expected_steps(q: f64, gamma: f64) -> Result<u32, QMapError> {
    if q <= 0.0 || !q.is_finite() {
        return Err(QMapError::Domain(format!("{q}")));
    }
    let t = 1.0 + q.ln() / gamma.ln();
    Ok(t.round().max(1.0) as u32)
}

/// Range filter over a precomputed Q-map tensor; bounds are evaluated with
/// the same repeated-product gamma powers the learner converges to.
pub fn goals_in_range_from(
    tensor: &QMapTensor,
    gamma: f64,
    steps_min: u32,
    steps_max: u32,
) -> Vec<(usize, usize)> {
    let q_low = gamma_pow(gamma, steps_max - 1);
    let q_high = gamma_pow(gamma, steps_min - 1);
    let mut out = Vec::new();
    for y in 0..tensor.hq {
        for x in 0..tensor.wq {
            let q = tensor.max_action(y, x).clamp(0.0, 1.0);
            if q >= q_low && q <= q_high {
                out.push((x, y));
            }
        }
    }
    out
}
