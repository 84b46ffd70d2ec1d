//! Exact shortest-path machinery over the environment's deterministic
//! dynamics. Distances count steps to *occupy* a cell; hazard and flag cells
//! are absorbing, so no path may pass through them. The episode timer is not
//! part of the searched state.

use std::collections::{HashMap, VecDeque};
use std::collections::BTreeSet;
use std::sync::Arc;

use super::level::{Action, CellKind};
use super::world::{Dynamics, EnvError, Frame, Observation, ScrollWorld, StateKey, Transition, WorldState};
use crate::qmap::QMapTensor;
use crate::util::gamma_pow;

pub const UNREACHABLE: u32 = u32::MAX;

/// All states reachable from the level start, with the successor table.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub states: Vec<StateKey>,
    pub index: HashMap<StateKey, usize>,
    /// succ[i][a] = state index after taking action a in state i.
    pub succ: Vec<[u32; 6]>,
    /// Hazard/flag cells are absorbing.
    pub terminal: Vec<bool>,
    rev: Vec<Vec<u32>>,
}

impl StateSpace {
    pub fn explore(dynamics: &Dynamics) -> StateSpace {
        let level = &*dynamics.level;
        let is_terminal =
            |k: &StateKey| matches!(level.cell(k.col as usize, k.row as usize), CellKind::Hazard | CellKind::Flag);

        let start = dynamics.initial_key();
        let mut states = vec![start];
        let mut index = HashMap::from([(start, 0usize)]);
        let mut succ: Vec<[u32; 6]> = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let key = states[i];
            let mut row = [i as u32; 6];
            if !is_terminal(&key) {
                for action in Action::ALL {
                    let next = dynamics.step(key, action).key;
                    let j = *index.entry(next).or_insert_with(|| {
                        states.push(next);
                        queue.push_back(states.len() - 1);
                        states.len() - 1
                    });
                    row[action.code()] = j as u32;
                }
            }
            if succ.len() <= i {
                succ.resize(i + 1, [0; 6]);
            }
            succ[i] = row;
        }

        let terminal: Vec<bool> = states.iter().map(|k| is_terminal(k)).collect();
        let mut rev: Vec<Vec<u32>> = vec![Vec::new(); states.len()];
        for (i, row) in succ.iter().enumerate() {
            if terminal[i] {
                continue;
            }
            for &j in row {
                rev[j as usize].push(i as u32);
            }
        }
        StateSpace { states, index, succ, terminal, rev }
    }

    /// Minimal step count from every state to any state occupying one of the
    /// goal positions (reverse multi-source BFS).
    pub fn distances_to_positions(&self, goals: &BTreeSet<(u16, u16)>) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.states.len()];
        let mut queue = VecDeque::new();
        for (i, key) in self.states.iter().enumerate() {
            if goals.contains(&(key.col, key.row)) {
                dist[i] = 0;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let d = dist[i] + 1;
            for &p in &self.rev[i] {
                let p = p as usize;
                if dist[p] == UNREACHABLE {
                    dist[p] = d;
                    queue.push_back(p);
                }
            }
        }
        dist
    }
}

/// Distance field d(s) to occupy a single world cell.
pub fn oracle_distances(
    dynamics: &Dynamics,
    space: &StateSpace,
    goal_world: (usize, usize),
) -> Result<Vec<u32>, EnvError> {
    let level = &*dynamics.level;
    if level.cell(goal_world.0, goal_world.1) == CellKind::Wall {
        return Err(EnvError::GoalIsWall);
    }
    let goals = BTreeSet::from([(goal_world.0 as u16, goal_world.1 as u16)]);
    Ok(space.distances_to_positions(&goals))
}

/// Ground-truth Q-map evaluator with a per-(scroll, goal-cell) BFS cache, so
/// sweeping every state of a fixed-viewport level costs one BFS per goal.
pub struct GroundTruth<'a> {
    pub world: &'a ScrollWorld,
    pub space: &'a StateSpace,
    pub gamma: f64,
    cache: HashMap<(u16, usize, usize), Arc<Vec<u32>>>,
}

impl<'a> GroundTruth<'a> {
    pub fn new(world: &'a ScrollWorld, space: &'a StateSpace, gamma: f64) -> Self {
        Self { world, space, gamma, cache: HashMap::new() }
    }

    fn field(&mut self, scroll: u16, gx: usize, gy: usize) -> Arc<Vec<u32>> {
        let space = self.space;
        let world = self.world;
        Arc::clone(self.cache.entry((scroll, gx, gy)).or_insert_with(|| {
            let goals: BTreeSet<(u16, u16)> = world
                .qmap_to_world(scroll as usize, gx, gy)
                .into_iter()
                .map(|(c, r)| (c as u16, r as u16))
                .collect();
            Arc::new(space.distances_to_positions(&goals))
        }))
    }

    /// Q(s, a, g) = gamma^(d-1), d = minimal steps to occupy g starting with
    /// action a; 1 when the first step lands on g; 0 when unreachable.
    pub fn qmap(&mut self, key: StateKey) -> QMapTensor {
        let (hq, wq) = (self.world.qmap_h(), self.world.qmap_w());
        let mut out = QMapTensor::zeros(hq, wq);
        let i = *self.space.index.get(&key).expect("state key not in explored space");
        if self.space.terminal[i] {
            return out;
        }
        let results: Vec<_> = Action::ALL
            .iter()
            .map(|&a| self.world.dynamics.step(key, a))
            .collect();
        for gy in 0..hq {
            for gx in 0..wq {
                let field = self.field(key.scroll, gx, gy);
                let goal_cells = self.world.qmap_to_world(key.scroll as usize, gx, gy);
                for action in Action::ALL {
                    let result = &results[action.code()];
                    let j = self.space.succ[i][action.code()] as usize;
                    let value = if result.terminal {
                        let pos = (result.key.col as usize, result.key.row as usize);
                        if goal_cells.contains(&pos) {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        match field[j] {
                            UNREACHABLE => 0.0,
                            d => gamma_pow(self.gamma, d),
                        }
                    };
                    out.set(gy, gx, action, value);
                }
            }
        }
        out
    }
}

/// Builds a `WorldState` matching a physical key, with empty episode context.
pub fn state_from_key(key: StateKey) -> WorldState {
    WorldState {
        col: key.col as usize,
        row: key.row as usize,
        vertical_velocity: key.vy,
        scroll_col: key.scroll as usize,
        collected: BTreeSet::new(),
        step_count: 0,
        terminal: false,
    }
}

/// Every (state, action) transition of the explored space, with rendered
/// observations, suitable for exhaustive replay. Episode-timer terminations
/// are deliberately absent.
pub fn enumerate_transitions(world: &ScrollWorld, space: &StateSpace) -> Vec<Transition> {
    let mut frames: HashMap<StateKey, Arc<Frame>> = HashMap::new();
    let mut obs_of = |world: &ScrollWorld, key: StateKey| -> Observation {
        let frame = Arc::clone(
            frames
                .entry(key)
                .or_insert_with(|| Arc::new(world.render_viewport(&state_from_key(key)))),
        );
        Observation { frames: vec![frame; world.cfg.frame_stack] }
    };
    let mut out = Vec::new();
    for (i, &key) in space.states.iter().enumerate() {
        if space.terminal[i] {
            continue;
        }
        for action in Action::ALL {
            let result = world.dynamics.step(key, action);
            let mut reward = 0.0;
            for _ in result.coins.iter().flatten() {
                reward += 2.0;
            }
            if result.flag {
                reward += 50.0;
            }
            let after = state_from_key(result.key);
            out.push(Transition {
                obs_before: obs_of(world, key),
                action,
                obs_after: obs_of(world, result.key),
                next_cell: world.agent_qmap_cell_clamped(&after),
                reward,
                terminal: result.terminal,
                world_pos_after: (after.col, after.row),
                key_before: key,
                key_after: result.key,
            })
        }
    }
    out
}

/// BFS-checkable oracle consistency: d(s) = 1 + min over actions of
/// d(succ(s, a)) for every non-goal, non-terminal state.
pub fn check_bellman_consistency(space: &StateSpace, dist: &[u32], goals: &BTreeSet<(u16, u16)>) -> bool {
    for (i, key) in space.states.iter().enumerate() {
        if goals.contains(&(key.col, key.row)) {
            if dist[i] != 0 {
                return false;
            }
            continue;
        }
        if space.terminal[i] {
            if dist[i] != UNREACHABLE {
                return false;
            }
            continue;
        }
        let best = space.succ[i]
            .iter()
            .map(|&j| dist[j as usize])
            .min()
            .unwrap();
        let expected = if best == UNREACHABLE { UNREACHABLE } else { best + 1 };
        if dist[i] != expected {
            return false;
        }
    }
    true
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Level};

    fn world(text: &str) -> ScrollWorld {
        let level = Arc::new(Level::parse(text).unwrap());
        ScrollWorld::new(level, EnvConfig::default()).unwrap()
    }

    #[test]
    fn distance_zero_at_goal_cell() {
        let w = world("mode=flat cap=100 view=3x3\nS..\n...\n...\n");
        let space = StateSpace::explore(&w.dynamics);
        let dist = oracle_distances(&w.dynamics, &space, (0, 0)).unwrap();
        let i = space.index[&w.dynamics.initial_key()];
        assert_eq!(dist[i], 0);
    }

    #[test]
    fn diagonal_jumps_cross_open_grid_in_two_steps() {
        // bottom-left to top-right of an open 3x3: two JumpRight moves
        let w = world("mode=flat cap=100 view=3x3\n...\n...\nS..\n");
        let space = StateSpace::explore(&w.dynamics);
        let dist = oracle_distances(&w.dynamics, &space, (2, 0)).unwrap();
        let i = space.index[&w.dynamics.initial_key()];
        assert_eq!(dist[i], 2);
    }

    #[test]
    fn sealed_cell_is_unreachable_and_wall_goal_errors() {
        let w = world("mode=flat cap=100 view=5x3\nS.###\n..#.#\n..###\n");
        let space = StateSpace::explore(&w.dynamics);
        let dist = oracle_distances(&w.dynamics, &space, (3, 1)).unwrap();
        let i = space.index[&w.dynamics.initial_key()];
        assert_eq!(dist[i], UNREACHABLE);
        assert_eq!(
            oracle_distances(&w.dynamics, &space, (2, 0)).unwrap_err(),
            EnvError::GoalIsWall
        );
    }

    #[test]
    fn distance_field_satisfies_bellman_recursion() {
        let text = "mode=flat cap=100 view=20x15\n".to_string()
            + &"#".repeat(20)
            + "\n#S.......#........#\n#.######.#.######.#\n#.#....#.#.#....#.#\n#.#.##.#.#.#.##.#.#\n#.#.##.#.#.#.##.#.#\n#.#....#.#.#....#.#\n#.######.#.######.#\n#........#........#\n#.################.#"
                .replace("#.################.#", &("#.".to_string() + &"#".repeat(16) + ".#"))
                .as_str()
            + "\n#..................#\n"
            + &"#".repeat(20)
            + "\n";
        // fall back to a simpler maze if the handcrafted one is ragged
        let level = Level::parse(&text).unwrap_or_else(|_| {
            Level::parse(
                "mode=flat cap=100 view=8x5\n########\n#S.....#\n#.####.#\n#......#\n########\n",
            )
            .unwrap()
        });
        let w = ScrollWorld::new(Arc::new(level), EnvConfig::default()).unwrap();
        let space = StateSpace::explore(&w.dynamics);
        for goal in [(1usize, 1usize), (6, 3), (3, 3)] {
            let goals = BTreeSet::from([(goal.0 as u16, goal.1 as u16)]);
            let dist = space.distances_to_positions(&goals);
            assert!(check_bellman_consistency(&space, &dist, &goals), "goal {goal:?}");
        }
    }

    #[test]
    fn ground_truth_examples() {
        let w = world("mode=flat cap=100 view=5x1\n.S...\n");
        let space = StateSpace::explore(&w.dynamics);
        let mut gt = GroundTruth::new(&w, &space, 0.9);
        let key = w.dynamics.initial_key();
        let map = gt.qmap(key);
        // one Left step lands on (0,0)
        assert_eq!(map.get(0, 0, Action::Left), 1.0);
        // three steps right with first action Right: gamma^2 = 0.81
        assert!((map.get(0, 4, Action::Right) - 0.81).abs() < 1e-12);
        // first action Left makes the same goal five steps away
        assert!((map.get(0, 4, Action::Left) - crate::util::gamma_pow(0.9, 4)).abs() < 1e-15);
        // noop keeps distance: d = 1 + 3
        assert!((map.get(0, 4, Action::Noop) - crate::util::gamma_pow(0.9, 3)).abs() < 1e-15);
        // everything in [0,1], goal-at-own-cell via blocked move gives 1
        for y in 0..map.hq {
            for x in 0..map.wq {
                for a in Action::ALL {
                    let v = map.get(y, x, a);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn ground_truth_unreachable_goal_is_zero_everywhere() {
        let w = world("mode=flat cap=100 view=5x3\nS.###\n..#.#\n..###\n");
        let space = StateSpace::explore(&w.dynamics);
        let mut gt = GroundTruth::new(&w, &space, 0.9);
        let map = gt.qmap(w.dynamics.initial_key());
        for a in Action::ALL {
            assert_eq!(map.get(1, 3, a), 0.0);
        }
    }

    #[test]
    fn ground_truth_monotone_in_distance() {
        let w = world("mode=flat cap=100 view=7x1\nS......\n");
        let space = StateSpace::explore(&w.dynamics);
        let mut gt = GroundTruth::new(&w, &space, 0.9);
        let map = gt.qmap(w.dynamics.initial_key());
        let mut prev = f64::INFINITY;
        for x in 1..7 {
            let v = map.max_action(0, x);
            assert!(v < prev, "value strictly decreasing in distance");
            prev = v;
        }
    }

    #[test]
    fn enumerate_transitions_covers_all_state_actions() {
        let w = world("mode=flat cap=100 view=4x2\n...x\nS..F\n");
        let space = StateSpace::explore(&w.dynamics);
        let transitions = enumerate_transitions(&w, &space);
        let nonterminal = space.terminal.iter().filter(|t| !**t).count();
        assert_eq!(transitions.len(), nonterminal * 6);
        assert!(transitions.iter().any(|t| t.terminal && t.reward == 50.0), "flag transition present");
        assert!(transitions.iter().any(|t| t.terminal && t.reward == 0.0), "hazard transition present");
        for t in &transitions {
            assert!(t.next_cell.0 < w.qmap_w() && t.next_cell.1 < w.qmap_h());
        }
    }
}
