use std::collections::BTreeMap;

use qmaplab::config::RunConfig;
use qmaplab::explore::ActionSource;
use qmaplab::harness::run_experiment;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut map = BTreeMap::new();
    map.insert("mode".to_string(), "qmap_walk".to_string());
    map.insert("total_steps".to_string(), "50000".to_string());
    map.insert("emit_ground_truth".to_string(), "false".to_string());
    for pair in &args[2..] {
        let (k, v) = pair.split_once('=').unwrap();
        map.insert(k.to_string(), v.to_string());
    }
    let mut cfg = RunConfig::from_map(map).unwrap();
    cfg.level_path = args[1].clone().into();
    let result = run_experiment(&cfg).unwrap();
    let mut actions = [[0u64; 6]; 3];
    let mut noop_streak_qmap = 0u64;
    let mut max_streak = 0u64;
    for d in &result.decisions {
        let s = match d.source {
            ActionSource::Random => 0,
            ActionSource::Dqn => 1,
            ActionSource::QMap => 2,
        };
        actions[s][d.action.code() as usize] += 1;
        if s == 2 && d.action.code() == 0 {
            noop_streak_qmap += 1;
            max_streak = max_streak.max(noop_streak_qmap);
        } else {
            noop_streak_qmap = 0;
        }
    }
    println!("actions[random] = {:?}", actions[0]);
    println!("actions[qmap]   = {:?} (noop,left,right,jump,jl,jr)", actions[2]);
    println!("longest qmap-noop freeze: {max_streak}");
    println!(
        "episodes={} cells={} rightmost={}",
        result.episodes,
        result.mask.visited_count(),
        result.mask.rightmost_column()
    );
}
