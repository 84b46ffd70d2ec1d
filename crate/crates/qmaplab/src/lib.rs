//! A desk-scale laboratory for goal-oriented exploration: a deterministic
//! scrolling gridworld, a goal-conditioned Q-map learner, a double dueling
//! DQN task learner sharing a prioritized replay buffer, and the combined
//! goal-driven action-selection policy, with an experiment harness that
//! reproduces coverage and return comparisons against exact oracles.

pub mod dqn;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod harness;
pub mod explore;
pub mod replay;
pub mod qmap;
pub mod util;
