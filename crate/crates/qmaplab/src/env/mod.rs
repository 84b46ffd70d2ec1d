//! ScrollWorld: a deterministic scrolling gridworld with the same observable
//! contract as the paper-style emulator setup (stacked grayscale viewport
//! frames, agent coordinates, right-scrolling window, episode timer, sparse
//! rewards), plus an exact shortest-path oracle.

mod level;
pub mod oracle;
mod world;

pub use level::{Action, CellKind, Level, LevelError, Mode};
pub use world::{
    Dynamics, EnvConfig, EnvError, Frame, Observation, ScrollWorld, StateKey, StepResult,
    Transition, WorldState, INTENSITY_AGENT, INTENSITY_COIN, INTENSITY_EMPTY, INTENSITY_FLAG,
    INTENSITY_HAZARD, INTENSITY_WALL,
};
