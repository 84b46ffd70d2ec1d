//! Experiment orchestration: the training loop with its schedules and
//! warmups, the coverage comparison, and artifact emission.

pub mod artifacts;
pub mod metrics;

use std::path::PathBuf;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, RunMode};
use crate::dqn::{DqnError, DqnLearner};
use crate::env::oracle::{GroundTruth, StateSpace};
use crate::env::{EnvError, Level, LevelError, ScrollWorld};
use crate::explore::ExplorerPolicy;
use crate::qmap::{QMapBackendKind, QMapError, QMapLearner, QMapTensor, StateInput};
use crate::replay::{PrioritizedBuffer, Track};
use crate::util::seeded_rng;
use metrics::{DecisionRow, MetricsRow, VisitationMask};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Level {
        path: PathBuf,
        #[source]
        source: LevelError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    QMap(#[from] QMapError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Artifact(#[from] artifacts::ArtifactError),
}

pub struct RunResult {
    pub rows: Vec<MetricsRow>,
    pub mask: VisitationMask,
    pub decisions: Vec<DecisionRow>,
    pub flags_reached: u64,
    pub episodes: u64,
    pub qmap: QMapLearner,
    pub dqn: Option<DqnLearner>,
    pub stale_priority_updates: u64,
}

pub fn load_level(cfg: &RunConfig) -> Result<Arc<Level>, HarnessError> {
    let text = std::fs::read_to_string(&cfg.level_path)
        .map_err(|source| HarnessError::Io { path: cfg.level_path.clone(), source })?;
    let level = Level::parse(&text)
        .map_err(|source| HarnessError::Level { path: cfg.level_path.clone(), source })?;
    Ok(Arc::new(level))
}

fn explorer_cfg_for_mode(cfg: &RunConfig) -> crate::explore::ExplorerConfig {
    let mut exp = cfg.explorer.clone();
    match cfg.mode {
        RunMode::DqnBaseline => {
            exp.p_goal_init = 0.0;
            exp.p_goal_frozen = true;
        }
        RunMode::QmapWalk => {
            exp.p_goal_init = 1.0;
            exp.p_goal_frozen = true;
        }
        RunMode::QmapDqn | RunMode::RandomWalk => {}
    }
    exp
}

/// Runs the full training/exploration loop for one (config, seed) pair. The
/// loop body is shared by every mode; modes only change the policy
/// configuration and which learners exist.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult, HarnessError> {
    let level = load_level(cfg)?;
    let mut world = ScrollWorld::new(Arc::clone(&level), cfg.env.clone())?;
    let (hq, wq) = (world.qmap_h(), world.qmap_w());
    let in_shape = (
        cfg.env.frame_stack,
        level.viewport_h * cfg.env.px_per_cell,
        level.viewport_w * cfg.env.px_per_cell,
    );

    let mut init_rng = seeded_rng(cfg.seed, "init");
    let mut qmap = match cfg.qmap.backend {
        QMapBackendKind::Tabular => QMapLearner::new_tabular(hq, wq, cfg.qmap.clone()),
        QMapBackendKind::Neural => QMapLearner::new_neural(hq, wq, in_shape, cfg.qmap.clone(), &mut init_rng)?,
    };
    let use_dqn = matches!(cfg.mode, RunMode::QmapDqn | RunMode::DqnBaseline);
    let mut dqn = if use_dqn {
        Some(DqnLearner::new(in_shape, cfg.dqn.clone(), &mut init_rng)?)
    } else {
        None
    };

    let mut replay = PrioritizedBuffer::new(cfg.replay.clone());
    let mut policy = ExplorerPolicy::new(explorer_cfg_for_mode(cfg), cfg.total_steps);
    let mut policy_rng = seeded_rng(cfg.seed, "policy");
    let mut replay_rng = seeded_rng(cfg.seed, "replay");
    let mut env_rng = seeded_rng(cfg.seed, "env");

    let mut mask = VisitationMask::new(level.width, level.height);
    let (state0, _) = world.reset(env_rng.next_u64());
    mask.visit(state0.col, state0.row);

    let mut rows = Vec::new();
    let mut decisions = Vec::with_capacity(cfg.total_steps as usize);
    let mut episode: u64 = 0;
    let mut episode_return = 0.0;
    let mut flags: u64 = 0;
    let mut qmap_loss = f64::NAN;
    let mut dqn_loss = f64::NAN;
    let train_qmap = cfg.mode != RunMode::RandomWalk;
    let train_dqn = use_dqn;

    for t in 0..cfg.total_steps {
        let state = world.state().clone();
        let obs = world.observation();
        let agent_cell = world.agent_qmap_cell(&state);
        let input = StateInput { obs: &obs, key: state.key() };
        let force_random = t < cfg.act_starts || cfg.mode == RunMode::RandomWalk;
        let decision = policy.select_action(
            &world,
            &state,
            &qmap,
            dqn.as_ref(),
            &input,
            agent_cell,
            t,
            &mut policy_rng,
            force_random,
        );
        policy.controller.update(decision.source, t);
        decisions.push(DecisionRow {
            step: t,
            source: decision.source,
            action: decision.action,
            goal_cell: decision.goal_cell,
            budget: decision.budget,
            p_goal: policy.controller.p_goal,
            ema: policy.controller.ema_exploratory,
        });

        let transition = world.step(decision.action)?;
        mask.visit(transition.world_pos_after.0, transition.world_pos_after.1);
        episode_return += transition.reward;
        let flag_event = transition.reward >= 50.0;
        if flag_event {
            flags += 1;
        }
        let terminal = transition.terminal;
        replay.insert(transition);

        if t >= cfg.learning_starts
            && (t - cfg.learning_starts) % cfg.train_interval == 0
            && replay.len() >= cfg.batch_size
        {
            let beta = cfg.replay_beta0
                + (cfg.replay_beta1 - cfg.replay_beta0) * (t as f64 / cfg.total_steps as f64).min(1.0);
            if train_qmap {
                let batch = replay
                    .sample(Track::QMap, cfg.batch_size, beta, &mut replay_rng)
                    .expect("buffer size checked");
                let refs: Vec<&_> = batch.transitions.iter().collect();
                let (loss, tds) = qmap.train_step(&refs, &batch.weights);
                replay.update_priorities(Track::QMap, &batch.slots, &batch.gens, &tds);
                qmap_loss = loss;
            }
            if train_dqn {
                let learner = dqn.as_mut().expect("dqn modes have a task learner");
                let batch = replay
                    .sample(Track::Dqn, cfg.batch_size, beta, &mut replay_rng)
                    .expect("buffer size checked");
                let refs: Vec<&_> = batch.transitions.iter().collect();
                let (loss, tds) = learner.train_step(&refs, &batch.weights);
                replay.update_priorities(Track::Dqn, &batch.slots, &batch.gens, &tds);
                dqn_loss = loss;
            }
        }

        if (t + 1) % cfg.sync_period == 0 {
            qmap.sync_target();
            if let Some(d) = dqn.as_mut() {
                d.sync_target();
            }
        }

        if flag_event || (t + 1) % cfg.log_interval == 0 || t + 1 == cfg.total_steps {
            rows.push(MetricsRow {
                step: t + 1,
                episode,
                episode_return,
                flags_reached_cumulative: flags,
                unique_cells_visited: mask.visited_count(),
                exploratory_proportion_ema: policy.controller.ema_exploratory,
                p_goal: policy.controller.p_goal,
                qmap_loss,
                dqn_loss,
            });
        }

        if terminal {
            episode += 1;
            episode_return = 0.0;
            policy.clear_goal();
            world.reset(env_rng.next_u64());
        }
    }

    Ok(RunResult {
        rows,
        mask,
        decisions,
        flags_reached: flags,
        episodes: episode,
        qmap,
        dqn,
        stale_priority_updates: replay.stale_updates,
    })
}

/// Learned and (when the state space is tractable) ground-truth Q-maps at
/// the level's initial state.
pub fn initial_qmaps(
    cfg: &RunConfig,
    qmap: &QMapLearner,
) -> Result<(QMapTensor, Option<QMapTensor>), HarnessError> {
    let level = load_level(cfg)?;
    let mut world = ScrollWorld::new(Arc::clone(&level), cfg.env.clone())?;
    let (state, obs) = world.reset(0);
    let learned = qmap.forward(&StateInput { obs: &obs, key: state.key() });
    let truth = if cfg.emit_ground_truth {
        let space = StateSpace::explore(&world.dynamics);
        if space.states.len() <= 500_000 {
            let mut gt = GroundTruth::new(&world, &space, cfg.qmap.gamma);
            Some(gt.qmap(state.key()))
        } else {
            None
        }
    } else {
        None
    };
    Ok((learned, truth))
}

/// Exact one-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
pub fn sign_test_p(wins: u64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=n {
        p += binom(n, k);
    }
    p * 0.5f64.powi(n as i32)
}

fn binom(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub qmap_cells: usize,
    pub random_cells: usize,
    pub qmap_rightmost: usize,
    pub random_rightmost: usize,
}

pub struct ExploreReport {
    pub outcomes: Vec<SeedOutcome>,
    pub qmap_cells_median: f64,
    pub random_cells_median: f64,
    pub qmap_rightmost_median: f64,
    pub random_rightmost_median: f64,
    /// One-sided sign-test p-values for qmap > random.
    pub cells_p: f64,
    pub rightmost_p: f64,
    /// Coverage masks united over seeds.
    pub qmap_mask: VisitationMask,
    pub random_mask: VisitationMask,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn union_into(acc: &mut VisitationMask, mask: &VisitationMask) {
    for row in 0..mask.h {
        for col in 0..mask.w {
            if mask.is_visited(col, row) {
                acc.visit(col, row);
            }
        }
    }
}

/// Runs the goal-driven walk and the random walk for the same budget on each
/// seed and reports coverage statistics with sign tests.
pub fn explore_compare(base: &RunConfig, seeds: u64) -> Result<ExploreReport, HarnessError> {
    let level = load_level(base)?;
    let mut outcomes = Vec::new();
    let mut qmap_mask = VisitationMask::new(level.width, level.height);
    let mut random_mask = VisitationMask::new(level.width, level.height);
    for i in 0..seeds {
        let seed = base.seed + i;
        let mut cfg_q = base.clone();
        cfg_q.mode = RunMode::QmapWalk;
        cfg_q.seed = seed;
        let mut cfg_r = base.clone();
        cfg_r.mode = RunMode::RandomWalk;
        cfg_r.seed = seed;
        let q = run_experiment(&cfg_q)?;
        let r = run_experiment(&cfg_r)?;
        union_into(&mut qmap_mask, &q.mask);
        union_into(&mut random_mask, &r.mask);
        outcomes.push(SeedOutcome {
            seed,
            qmap_cells: q.mask.visited_count(),
            random_cells: r.mask.visited_count(),
            qmap_rightmost: q.mask.rightmost_column(),
            random_rightmost: r.mask.rightmost_column(),
        });
    }
    let mut qc: Vec<f64> = outcomes.iter().map(|o| o.qmap_cells as f64).collect();
    let mut rc: Vec<f64> = outcomes.iter().map(|o| o.random_cells as f64).collect();
    let mut qr: Vec<f64> = outcomes.iter().map(|o| o.qmap_rightmost as f64).collect();
    let mut rr: Vec<f64> = outcomes.iter().map(|o| o.random_rightmost as f64).collect();
    let cells_wins = outcomes.iter().filter(|o| o.qmap_cells > o.random_cells).count() as u64;
    let cells_ties = outcomes.iter().filter(|o| o.qmap_cells == o.random_cells).count() as u64;
    let right_wins = outcomes.iter().filter(|o| o.qmap_rightmost > o.random_rightmost).count() as u64;
    let right_ties = outcomes.iter().filter(|o| o.qmap_rightmost == o.random_rightmost).count() as u64;
    let n = outcomes.len() as u64;
    Ok(ExploreReport {
        cells_p: sign_test_p(cells_wins, n - cells_ties),
        rightmost_p: sign_test_p(right_wins, n - right_ties),
        qmap_cells_median: median(&mut qc),
        random_cells_median: median(&mut rc),
        qmap_rightmost_median: median(&mut qr),
        random_rightmost_median: median(&mut rr),
        outcomes,
        qmap_mask,
        random_mask,
    })
}

/// Distance field rendered over world positions (minimum over the extra
/// state dimensions), for the oracle CLI output.
pub fn distance_field_pgm(cfg: &RunConfig, goal: (usize, usize)) -> Result<String, HarnessError> {
    let level = load_level(cfg)?;
    let world = ScrollWorld::new(Arc::clone(&level), cfg.env.clone())?;
    let space = StateSpace::explore(&world.dynamics);
    let dist = crate::env::oracle::oracle_distances(&world.dynamics, &space, goal)?;
    let mut best = vec![u32::MAX; level.width * level.height];
    for (i, key) in space.states.iter().enumerate() {
        let cell = key.row as usize * level.width + key.col as usize;
        if dist[i] < best[cell] {
            best[cell] = dist[i];
        }
    }
    let max_finite = best.iter().copied().filter(|&d| d != u32::MAX).max().unwrap_or(0).max(1);
    let mut out = format!("P2\n{} {}\n255\n", level.width, level.height);
    for row in 0..level.height {
        let line: Vec<String> = (0..level.width)
            .map(|col| {
                let d = best[row * level.width + col];
                if d == u32::MAX {
                    "0".to_string()
                } else {
                    // near goals bright, far goals dim
                    format!("{}", 255 - (d as u64 * 200 / max_finite as u64) as u32)
                }
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Decision-trace fingerprint for mode-equality checks: every per-step
/// observable of the policy, including the emitted action.
pub fn decision_trace(result: &RunResult) -> Vec<(u64, u8, u8, Option<(usize, usize)>, u32, u64, u64)> {
    result
        .decisions
        .iter()
        .map(|d| {
            let source = match d.source {
                crate::explore::ActionSource::Random => 0u8,
                crate::explore::ActionSource::Dqn => 1,
                crate::explore::ActionSource::QMap => 2,
            };
            (
                d.step,
                source,
                d.action.code() as u8,
                d.goal_cell,
                d.budget,
                d.p_goal.to_bits(),
                d.ema.to_bits(),
            )
        })
        .collect()
}
