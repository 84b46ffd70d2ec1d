use std::collections::BTreeSet;
use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array3;
use thiserror::Error;

use super::level::{Action, CellKind, Level, Mode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("step called on a terminal state")]
    SteppedTerminal,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("goal cell is a wall")]
    GoalIsWall,
}

/// Compact physical state: everything the deterministic dynamics depend on.
/// Coin collection and the episode timer live outside (they never affect
/// movement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub col: u16,
    pub row: u16,
    pub vy: i8,
    pub scroll: u16,
}

/// Full per-episode state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub col: usize,
    pub row: usize,
    pub vertical_velocity: i8,
    pub scroll_col: usize,
    pub collected: BTreeSet<(u16, u16)>,
    pub step_count: u32,
    pub terminal: bool,
}

impl WorldState {
    pub fn key(&self) -> StateKey {
        StateKey {
            col: self.col as u16,
            row: self.row as u16,
            vy: self.vertical_velocity,
            scroll: self.scroll_col as u16,
        }
    }
}

/// Result of one application of the transition function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub key: StateKey,
    /// Hazard or flag entered: the episode ends (timer aside).
    pub terminal: bool,
    pub flag: bool,
    /// Coin cells entered this step (a platformer step can cross two cells).
    pub coins: [Option<(u16, u16)>; 2],
}

/// The deterministic transition function, shared verbatim by the live
/// environment and the breadth-first-search oracle.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub level: Arc<Level>,
    /// Minimum distance kept between the agent and the viewport's leading
    /// (right) edge when scrolling.
    pub margin: usize,
    pub right_only_scroll: bool,
}

impl Dynamics {
    pub fn new(level: Arc<Level>, margin: Option<usize>, right_only_scroll: bool) -> Self {
        let margin = margin.unwrap_or_else(|| level.viewport_w.div_ceil(3));
        Self { level, margin, right_only_scroll }
    }

    fn wall(&self, col: usize, row: usize) -> bool {
        self.level.cell(col, row) == CellKind::Wall
    }

    fn standing(&self, col: usize, row: usize) -> bool {
        row + 1 >= self.level.height || self.wall(col, row + 1)
    }

    fn scroll_after(&self, scroll: usize, col: usize) -> usize {
        let lead = self.level.viewport_w as i64 - 1 - self.margin as i64;
        let desired = (col as i64 - lead).clamp(0, self.level.max_scroll() as i64) as usize;
        if self.right_only_scroll {
            scroll.max(desired)
        } else {
            desired
        }
    }

    pub fn initial_key(&self) -> StateKey {
        let (col, row) = self.level.start;
        StateKey {
            col: col as u16,
            row: row as u16,
            vy: 0,
            scroll: self.scroll_after(0, col) as u16,
        }
    }

    pub fn step(&self, key: StateKey, action: Action) -> StepResult {
        match self.level.mode {
            Mode::Flat => self.step_flat(key, action),
            Mode::Platformer => self.step_platformer(key, action),
        }
    }

    fn step_flat(&self, key: StateKey, action: Action) -> StepResult {
        let level = &*self.level;
        let (col, row) = (key.col as usize, key.row as usize);
        let dy: i32 = if action.is_jump() { -1 } else { 0 };
        let c2 = (col as i32 + action.dx()).clamp(key.scroll as i32, level.width as i32 - 1) as usize;
        let r2 = (row as i32 + dy).clamp(0, level.height as i32 - 1) as usize;
        let (c2, r2) = if self.wall(c2, r2) { (col, row) } else { (c2, r2) };
        let scroll = self.scroll_after(key.scroll as usize, c2);
        let mut result = StepResult {
            key: StateKey { col: c2 as u16, row: r2 as u16, vy: 0, scroll: scroll as u16 },
            terminal: false,
            flag: false,
            coins: [None; 2],
        };
        self.enter_cell(c2, r2, 0, &mut result);
        result
    }

    fn step_platformer(&self, key: StateKey, action: Action) -> StepResult {
        let level = &*self.level;
        let (mut col, mut row) = (key.col as usize, key.row as usize);
        let mut vy = key.vy;
        if action.is_jump() && self.standing(col, row) {
            vy = -2;
        }
        let mut result = StepResult {
            key,
            terminal: false,
            flag: false,
            coins: [None; 2],
        };
        // Horizontal sub-move.
        let c2 = (col as i32 + action.dx()).clamp(key.scroll as i32, level.width as i32 - 1) as usize;
        if !self.wall(c2, row) {
            col = c2;
        }
        self.enter_cell(col, row, 0, &mut result);
        if !result.terminal {
            // Vertical sub-move: rising while vy < 0, otherwise gravity.
            if vy < 0 {
                if row > 0 && !self.wall(col, row - 1) {
                    row -= 1;
                } else {
                    vy = 0;
                }
                if vy < 0 {
                    vy += 1;
                }
            } else if !self.standing(col, row) {
                row += 1;
                vy = 1;
            } else {
                vy = 0;
            }
            self.enter_cell(col, row, 1, &mut result);
        }
        let scroll = self.scroll_after(key.scroll as usize, col);
        result.key = StateKey {
            col: col as u16,
            row: row as u16,
            vy: if result.terminal { 0 } else { vy },
            scroll: scroll as u16,
        };
        result
    }

    fn enter_cell(&self, col: usize, row: usize, slot: usize, result: &mut StepResult) {
        match self.level.cell(col, row) {
            CellKind::Hazard => result.terminal = true,
            CellKind::Flag => {
                result.terminal = true;
                result.flag = true;
            }
            CellKind::Coin => result.coins[slot] = Some((col as u16, row as u16)),
            CellKind::Empty | CellKind::Wall => {}
        }
    }
}

/// One grayscale frame, row-major, values in [-1, 1] (-1 white, +1 black).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

pub const INTENSITY_EMPTY: f32 = -1.0;
pub const INTENSITY_COIN: f32 = -0.33;
pub const INTENSITY_HAZARD: f32 = 0.33;
pub const INTENSITY_WALL: f32 = 1.0;
pub const INTENSITY_FLAG: f32 = 1.0;
pub const INTENSITY_AGENT: f32 = 0.66;

/// A stack of shared frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frames: Vec<Arc<Frame>>,
}

impl Observation {
    pub fn height(&self) -> usize {
        self.frames[0].h
    }

    pub fn width(&self) -> usize {
        self.frames[0].w
    }

    /// (stack, h, w) f64 tensor for network input.
    pub fn to_tensor(&self) -> Array3<f64> {
        let (k, h, w) = (self.frames.len(), self.height(), self.width());
        let mut out = Array3::zeros((k, h, w));
        for (i, frame) in self.frames.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    out[(i, y, x)] = frame.data[y * w + x] as f64;
                }
            }
        }
        out
    }
}

/// One environment step as stored in the replay buffer.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs_before: Observation,
    pub action: Action,
    pub obs_after: Observation,
    /// Agent's Q-map cell (x, y) after the step, clamped into the grid.
    pub next_cell: (usize, usize),
    pub reward: f64,
    pub terminal: bool,
    /// World (col, row) after the step; for coverage metrics only.
    pub world_pos_after: (usize, usize),
    pub key_before: StateKey,
    pub key_after: StateKey,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub px_per_cell: usize,
    /// Q-map resolution divisor over viewport pixels.
    pub rho: usize,
    pub frame_stack: usize,
    pub scroll_margin: Option<usize>,
    pub right_only_scroll: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            px_per_cell: 1,
            rho: 1,
            frame_stack: 3,
            scroll_margin: None,
            right_only_scroll: true,
        }
    }
}

/// The scrolling-gridworld environment.
#[derive(Debug, Clone)]
pub struct ScrollWorld {
    pub dynamics: Dynamics,
    pub cfg: EnvConfig,
    state: WorldState,
    frames: VecDeque<Arc<Frame>>,
}

impl ScrollWorld {
    pub fn new(level: Arc<Level>, cfg: EnvConfig) -> Result<Self, EnvError> {
        if cfg.px_per_cell == 0 || cfg.rho == 0 || cfg.frame_stack == 0 {
            return Err(EnvError::Config("px_per_cell, rho, frame_stack must be positive".into()));
        }
        let (wpx, hpx) = (level.viewport_w * cfg.px_per_cell, level.viewport_h * cfg.px_per_cell);
        if wpx % cfg.rho != 0 || hpx % cfg.rho != 0 {
            return Err(EnvError::Config(format!(
                "viewport {wpx}x{hpx} px not divisible by rho {}",
                cfg.rho
            )));
        }
        let dynamics = Dynamics::new(level, cfg.scroll_margin, cfg.right_only_scroll);
        let mut world = Self {
            dynamics,
            cfg,
            state: WorldState {
                col: 0,
                row: 0,
                vertical_velocity: 0,
                scroll_col: 0,
                collected: BTreeSet::new(),
                step_count: 0,
                terminal: false,
            },
            frames: VecDeque::new(),
        };
        world.reset(0);
        Ok(world)
    }

    pub fn level(&self) -> &Level {
        &self.dynamics.level
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Q-map grid width (cells along x).
    pub fn qmap_w(&self) -> usize {
        self.level().viewport_w * self.cfg.px_per_cell / self.cfg.rho
    }

    /// Q-map grid height (cells along y).
    pub fn qmap_h(&self) -> usize {
        self.level().viewport_h * self.cfg.px_per_cell / self.cfg.rho
    }

    /// Starts a fresh episode. The seed is reserved for future randomized
    /// variants; the dynamics themselves are deterministic.
    pub fn reset(&mut self, _seed: u64) -> (WorldState, Observation) {
        let key = self.dynamics.initial_key();
        self.state = WorldState {
            col: key.col as usize,
            row: key.row as usize,
            vertical_velocity: 0,
            scroll_col: key.scroll as usize,
            collected: BTreeSet::new(),
            step_count: 0,
            terminal: false,
        };
        let frame = Arc::new(self.render_viewport(&self.state));
        self.frames = (0..self.cfg.frame_stack).map(|_| Arc::clone(&frame)).collect();
        (self.state.clone(), self.observation())
    }

    pub fn observation(&self) -> Observation {
        Observation { frames: self.frames.iter().cloned().collect() }
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, EnvError> {
        if self.state.terminal {
            return Err(EnvError::SteppedTerminal);
        }
        let obs_before = self.observation();
        let key_before = self.state.key();
        let result = self.dynamics.step(key_before, action);

        let mut reward = 0.0;
        for coin in result.coins.iter().flatten() {
            if self.state.collected.insert(*coin) {
                reward += 2.0;
            }
        }
        if result.flag {
            reward += 50.0;
        }

        self.state.col = result.key.col as usize;
        self.state.row = result.key.row as usize;
        self.state.vertical_velocity = result.key.vy;
        self.state.scroll_col = result.key.scroll as usize;
        self.state.step_count += 1;
        let timeout = self.state.step_count >= self.level().episode_cap;
        self.state.terminal = result.terminal || timeout;

        let frame = Arc::new(self.render_viewport(&self.state));
        self.frames.pop_front();
        self.frames.push_back(frame);

        let next_cell = self.agent_qmap_cell_clamped(&self.state);
        Ok(Transition {
            obs_before,
            action,
            obs_after: self.observation(),
            next_cell,
            reward,
            terminal: self.state.terminal,
            world_pos_after: (self.state.col, self.state.row),
            key_before,
            key_after: self.state.key(),
        })
    }

    /// Renders the viewport as a grayscale frame, agent sprite on top.
    pub fn render_viewport(&self, state: &WorldState) -> Frame {
        let level = self.level();
        let ppc = self.cfg.px_per_cell;
        let (vw, vh) = (level.viewport_w, level.viewport_h);
        let (w, h) = (vw * ppc, vh * ppc);
        let row_off = level.viewport_row_offset();
        let mut data = vec![INTENSITY_EMPTY; w * h];
        for vy in 0..vh {
            for vx in 0..vw {
                let (col, row) = (state.scroll_col + vx, row_off + vy);
                let mut value = match level.cell(col, row) {
                    CellKind::Empty => INTENSITY_EMPTY,
                    CellKind::Wall => INTENSITY_WALL,
                    CellKind::Hazard => INTENSITY_HAZARD,
                    CellKind::Flag => INTENSITY_FLAG,
                    CellKind::Coin => {
                        if state.collected.contains(&(col as u16, row as u16)) {
                            INTENSITY_EMPTY
                        } else {
                            INTENSITY_COIN
                        }
                    }
                };
                if (col, row) == (state.col, state.row) {
                    value = INTENSITY_AGENT;
                }
                for py in 0..ppc {
                    for px in 0..ppc {
                        data[(vy * ppc + py) * w + vx * ppc + px] = value;
                    }
                }
            }
        }
        Frame { h, w, data }
    }

    /// The agent's Q-map cell (x, y), or None when outside the viewport.
    pub fn agent_qmap_cell(&self, state: &WorldState) -> Option<(usize, usize)> {
        let level = self.level();
        let row_off = level.viewport_row_offset();
        if state.col < state.scroll_col
            || state.col >= state.scroll_col + level.viewport_w
            || state.row < row_off
        {
            return None;
        }
        let px = (state.col - state.scroll_col) * self.cfg.px_per_cell;
        let py = (state.row - row_off) * self.cfg.px_per_cell;
        Some((px / self.cfg.rho, py / self.cfg.rho))
    }

    /// Like `agent_qmap_cell` but clamped into the grid, for transitions.
    pub fn agent_qmap_cell_clamped(&self, state: &WorldState) -> (usize, usize) {
        let level = self.level();
        let row_off = level.viewport_row_offset();
        let col = state
            .col
            .clamp(state.scroll_col, state.scroll_col + level.viewport_w - 1);
        let row = state.row.max(row_off);
        let px = (col - state.scroll_col) * self.cfg.px_per_cell;
        let py = (row - row_off) * self.cfg.px_per_cell;
        (px / self.cfg.rho, py / self.cfg.rho)
    }

    /// Maps a world cell onto the Q-map grid for a given scroll, if visible.
    pub fn world_to_qmap(&self, scroll_col: usize, col: usize, row: usize) -> Option<(usize, usize)> {
        let level = self.level();
        let row_off = level.viewport_row_offset();
        if col < scroll_col || col >= scroll_col + level.viewport_w || row < row_off {
            return None;
        }
        let px = (col - scroll_col) * self.cfg.px_per_cell;
        let py = (row - row_off) * self.cfg.px_per_cell;
        Some((px / self.cfg.rho, py / self.cfg.rho))
    }

    /// World cells covered by the Q-map cell (x, y) for a given scroll.
    pub fn qmap_to_world(&self, scroll_col: usize, x: usize, y: usize) -> Vec<(usize, usize)> {
        let level = self.level();
        let ppc = self.cfg.px_per_cell;
        let row_off = level.viewport_row_offset();
        let px0 = x * self.cfg.rho;
        let px1 = ((x + 1) * self.cfg.rho).min(level.viewport_w * ppc);
        let py0 = y * self.cfg.rho;
        let py1 = ((y + 1) * self.cfg.rho).min(level.viewport_h * ppc);
        let mut cells = Vec::new();
        for vc in px0 / ppc..px1.div_ceil(ppc) {
            for vr in py0 / ppc..py1.div_ceil(ppc) {
                cells.push((scroll_col + vc, row_off + vr));
            }
        }
        cells
    }
}
