use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qmaplab::checkpoint;
use qmaplab::config::RunConfig;
use qmaplab::env::oracle::{GroundTruth, StateSpace};
use qmaplab::env::ScrollWorld;
use qmaplab::harness::artifacts::{
    coverage_overlay_ppm, emit_artifacts, manifest_json, qmap_heatmap_pgm, svg_line_chart,
    write_file, ArtifactSet,
};
use qmaplab::harness::metrics::VisitationMask;
use qmaplab::harness::{distance_field_pgm, explore_compare, initial_qmaps, run_experiment};

#[derive(Parser)]
#[command(name = "qmaplab", version, about = "Goal-oriented exploration laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment (training loop) and emit its artifacts.
    Run(CommonArgs),
    /// Compare the goal-driven walk against the random walk across seeds.
    Explore(CommonArgs),
    /// Emit exact ground-truth Q-maps and a distance field for a level.
    Oracle(CommonArgs),
    /// Render SVG curves and coverage overlays from emitted artifacts.
    Plot(PlotArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. --set total_steps=1000 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding a previous run's artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Second artifact directory to overlay in red (e.g. a baseline run).
    #[arg(long)]
    compare: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(args) => run(args),
        Cmd::Explore(args) => explore(args),
        Cmd::Oracle(args) => oracle(args),
        Cmd::Plot(args) => plot(args),
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    RunConfig::load(&args.config, &args.sets, args.seed)
        .with_context(|| format!("loading config {}", args.config.display()))
}

fn run(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    eprintln!(
        "run: mode={} level={} steps={} seed={}",
        cfg.mode.as_str(),
        cfg.level_path.display(),
        cfg.total_steps,
        cfg.seed
    );
    let result = run_experiment(&cfg)?;
    let (learned, truth) = initial_qmaps(&cfg, &result.qmap)?;

    let mut summary = BTreeMap::new();
    summary.insert("mode".into(), json!(cfg.mode.as_str()));
    summary.insert("episodes".into(), json!(result.episodes));
    summary.insert("flags_reached".into(), json!(result.flags_reached));
    summary.insert("unique_cells_visited".into(), json!(result.mask.visited_count()));
    summary.insert("rightmost_column".into(), json!(result.mask.rightmost_column()));
    summary.insert("stale_priority_updates".into(), json!(result.stale_priority_updates));

    let set = ArtifactSet {
        rows: &result.rows,
        mask: &result.mask,
        decisions: cfg.write_decision_log.then_some(result.decisions.as_slice()),
        learned_qmap: Some(&learned),
        truth_qmap: truth.as_ref(),
        config: cfg.raw_pairs(),
        seed: cfg.seed,
        summary,
    };
    let written = emit_artifacts(&set, &args.out)?;

    let qmap_path = args.out.join(match result.qmap.backend_kind() {
        qmaplab::qmap::QMapBackendKind::Tabular => "qmap_tabular.ckpt",
        qmaplab::qmap::QMapBackendKind::Neural => "qmap_net.ckpt",
    });
    let mut qmap = result.qmap;
    match qmap.networks_mut() {
        Some((net, _)) => {
            let mut bytes = Vec::new();
            checkpoint::save_network(net, &mut bytes)?;
            write_file(&qmap_path, &bytes)?;
        }
        None => {
            let mut bytes = Vec::new();
            checkpoint::save_tabular(&qmap, &mut bytes)?;
            write_file(&qmap_path, &bytes)?;
        }
    }
    if let Some(mut dqn) = result.dqn {
        let (net, _) = dqn.networks_mut().expect("dqn always has networks");
        let mut bytes = Vec::new();
        checkpoint::save_network(net, &mut bytes)?;
        write_file(&args.out.join("dqn_net.ckpt"), &bytes)?;
    }

    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    println!(
        "done: episodes={} flags={} unique_cells={} rightmost={}",
        result.episodes,
        result.flags_reached,
        result.mask.visited_count(),
        result.mask.rightmost_column()
    );
    Ok(())
}

fn explore(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let seeds = cfg.explore_seeds;
    eprintln!(
        "explore: level={} steps={} seeds={}..{}",
        cfg.level_path.display(),
        cfg.total_steps,
        cfg.seed,
        cfg.seed + seeds
    );
    let report = explore_compare(&cfg, seeds)?;
    write_file(&args.out.join("qmap_mask.pgm"), report.qmap_mask.to_pgm().as_bytes())?;
    write_file(&args.out.join("random_mask.pgm"), report.random_mask.to_pgm().as_bytes())?;
    write_file(
        &args.out.join("coverage_overlay.ppm"),
        coverage_overlay_ppm(&report.qmap_mask, &report.random_mask).as_bytes(),
    )?;
    let mut summary = BTreeMap::new();
    summary.insert("seeds".into(), json!(seeds));
    summary.insert("qmap_cells_median".into(), json!(report.qmap_cells_median));
    summary.insert("random_cells_median".into(), json!(report.random_cells_median));
    summary.insert("qmap_rightmost_median".into(), json!(report.qmap_rightmost_median));
    summary.insert("random_rightmost_median".into(), json!(report.random_rightmost_median));
    summary.insert("cells_sign_test_p".into(), json!(report.cells_p));
    summary.insert("rightmost_sign_test_p".into(), json!(report.rightmost_p));
    summary.insert(
        "per_seed".into(),
        json!(report
            .outcomes
            .iter()
            .map(|o| {
                json!({
                    "seed": o.seed,
                    "qmap_cells": o.qmap_cells,
                    "random_cells": o.random_cells,
                    "qmap_rightmost": o.qmap_rightmost,
                    "random_rightmost": o.random_rightmost,
                })
            })
            .collect::<Vec<_>>()),
    );
    write_file(
        &args.out.join("coverage_report.json"),
        manifest_json(cfg.raw_pairs(), cfg.seed, &summary).as_bytes(),
    )?;
    println!(
        "coverage: qmap median cells {} vs random {} (p={:.4}); rightmost {} vs {} (p={:.4})",
        report.qmap_cells_median,
        report.random_cells_median,
        report.cells_p,
        report.qmap_rightmost_median,
        report.random_rightmost_median,
        report.rightmost_p
    );
    Ok(())
}

fn oracle(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let level = qmaplab::harness::load_level(&cfg)?;
    let mut world = ScrollWorld::new(level.clone(), cfg.env.clone())?;
    let (state, _) = world.reset(0);
    let space = StateSpace::explore(&world.dynamics);
    eprintln!("oracle: {} reachable states", space.states.len());

    let mut gt = GroundTruth::new(&world, &space, cfg.qmap.gamma);
    let truth = gt.qmap(state.key());
    for action in qmaplab::env::Action::ALL {
        let name = format!("qmap_truth_a{}.pgm", action.code());
        write_file(&args.out.join(name), qmap_heatmap_pgm(&truth, action).as_bytes())?;
    }

    let goal = cfg.oracle_goal.unwrap_or(level.start);
    let pgm = distance_field_pgm(&cfg, goal)?;
    write_file(&args.out.join("distance_field.pgm"), pgm.as_bytes())?;

    let mut summary = BTreeMap::new();
    summary.insert("reachable_states".into(), json!(space.states.len()));
    summary.insert("goal".into(), json!([goal.0, goal.1]));
    summary.insert("qmap_grid".into(), json!([world.qmap_w(), world.qmap_h()]));
    write_file(
        &args.out.join("oracle_report.json"),
        manifest_json(cfg.raw_pairs(), cfg.seed, &summary).as_bytes(),
    )?;
    println!(
        "oracle: wrote truth heatmaps and distance field for goal ({},{})",
        goal.0, goal.1
    );
    Ok(())
}

fn read_csv_columns(path: &Path, cols: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty csv")?.split(',').collect();
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .with_context(|| format!("column {c} missing in {}", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); cols.len()];
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for (slot, &i) in idx.iter().enumerate() {
            let v: f64 = match fields.get(i) {
                Some(s) if !s.is_empty() && *s != "nan" => s.parse().unwrap_or(f64::NAN),
                _ => f64::NAN,
            };
            out[slot].push(v);
        }
    }
    Ok(out)
}

fn plot(args: PlotArgs) -> Result<()> {
    let metrics = args.out.join("metrics.csv");
    let mut wrote_any = false;
    if metrics.exists() {
        let cols = read_csv_columns(
            &metrics,
            &["step", "episode_return", "exploratory_proportion_ema", "p_goal", "flags_reached_cumulative"],
        )?;
        let steps = &cols[0];
        let returns: Vec<(f64, f64)> = steps.iter().copied().zip(cols[1].iter().copied()).collect();
        let flags: Vec<(f64, f64)> = steps.iter().copied().zip(cols[4].iter().copied()).collect();
        let svg = svg_line_chart(
            &[("episode_return", "#007700", returns), ("flags_cumulative", "#cc6600", flags)],
            "Episode return and flag count",
        );
        write_file(&args.out.join("return_curve.svg"), svg.as_bytes())?;
        let ema: Vec<(f64, f64)> = steps.iter().copied().zip(cols[2].iter().copied()).collect();
        let pg: Vec<(f64, f64)> = steps.iter().copied().zip(cols[3].iter().copied()).collect();
        let svg = svg_line_chart(
            &[("exploratory_ema", "#0044cc", ema), ("p_goal", "#cc0044", pg)],
            "Exploration tracking",
        );
        write_file(&args.out.join("exploration_tracking.svg"), svg.as_bytes())?;
        eprintln!("wrote return_curve.svg, exploration_tracking.svg");
        wrote_any = true;
    }
    let q = args.out.join("qmap_mask.pgm");
    let r = args.out.join("random_mask.pgm");
    if q.exists() && r.exists() {
        let green = VisitationMask::from_pgm(&std::fs::read_to_string(&q)?)
            .context("qmap_mask.pgm is not a P2 graymap")?;
        let red = VisitationMask::from_pgm(&std::fs::read_to_string(&r)?)
            .context("random_mask.pgm is not a P2 graymap")?;
        write_file(
            &args.out.join("coverage_overlay.ppm"),
            coverage_overlay_ppm(&green, &red).as_bytes(),
        )?;
        eprintln!("wrote coverage_overlay.ppm");
        wrote_any = true;
    }
    if let Some(compare) = &args.compare {
        let a = args.out.join("mask.pgm");
        let b = compare.join("mask.pgm");
        if a.exists() && b.exists() {
            let green = VisitationMask::from_pgm(&std::fs::read_to_string(&a)?)
                .context("mask.pgm is not a P2 graymap")?;
            let red = VisitationMask::from_pgm(&std::fs::read_to_string(&b)?)
                .context("compare mask.pgm is not a P2 graymap")?;
            write_file(
                &args.out.join("mask_overlay.ppm"),
                coverage_overlay_ppm(&green, &red).as_bytes(),
            )?;
            eprintln!("wrote mask_overlay.ppm");
            wrote_any = true;
        }
    }
    if !wrote_any {
        bail!("nothing to plot in {}", args.out.display());
    }
    println!("plot: done");
    Ok(())
}
