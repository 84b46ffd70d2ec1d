use std::sync::Arc;
use std::time::Instant;

use qmaplab::dqn::{DqnConfig, DqnLearner};
use qmaplab::env::{EnvConfig, Frame, Level, Observation, ScrollWorld, StateKey, Transition};
use qmaplab::util::seeded_rng;

fn main() {
    let mut rng = seeded_rng(0, "bench");
    let cfg = DqnConfig::default();
    let mut dqn = DqnLearner::new((3, 12, 16), cfg, &mut rng).unwrap();
    let frame = Arc::new(Frame { h: 12, w: 16, data: vec![0.3; 192] });
    let obs = Observation { frames: vec![frame; 3] };
    let key = StateKey { col: 0, row: 0, vy: 0, scroll: 0 };
    let t = Transition {
        obs_before: obs.clone(),
        action: qmaplab::env::Action::Right,
        obs_after: obs.clone(),
        next_cell: (0, 0),
        reward: 1.0,
        terminal: false,
        world_pos_after: (0, 0),
        key_before: key,
        key_after: key,
    };
    let batch: Vec<&Transition> = std::iter::repeat(&t).take(32).collect();
    let weights = vec![1.0; 32];

    let start = Instant::now();
    for _ in 0..100 {
        dqn.train_step(&batch, &weights);
    }
    println!("dqn train_step (batch 32): {:?}/call", start.elapsed() / 100);

    let start = Instant::now();
    for _ in 0..10000 {
        std::hint::black_box(dqn.forward(&obs));
    }
    println!("dqn forward: {:?}/call", start.elapsed() / 10000);

    let start = Instant::now();
    for _ in 0..10000 {
        std::hint::black_box(obs.to_tensor());
    }
    println!("obs to_tensor: {:?}/call", start.elapsed() / 10000);

    // env stepping cost
    let text = std::fs::read_to_string("crates/qmaplab/assets/corridor.lvl").unwrap();
    let level = Arc::new(Level::parse(&text).unwrap());
    let mut world = ScrollWorld::new(level, EnvConfig::default()).unwrap();
    world.reset(0);
    let start = Instant::now();
    let mut n = 0u64;
    for i in 0..100000 {
        if world.state().terminal {
            world.reset(i);
        }
        let a = qmaplab::env::Action::from_code((i % 6) as usize).unwrap();
        world.step(a).unwrap();
        n += 1;
    }
    println!("env step: {:?}/call ({n} steps)", start.elapsed() / 100000);
}
