use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use tdp_core::harness::{
    effective_workers, leaf_split, read_records, render_table, run_experiment, summarize, write_csv, ExperimentConfig,
    PreparedTask, Prior, SeedList, DETERMINISTIC_ENV,
};
use tdp_core::par::Parallelism;
use tdp_core::planner::{plan, Problem, Variant};
use tdp_core::prop1::{run_prop1, Init, Prop1Config};
use tdp_core::rng::SeedStream;
use tdp_core::score::{fit_gaussian, load_demo_set, save_demo_set, EmpiricalScoreModel};

#[derive(Parser)]
#[command(name = "tdp", version, about = "Tree-guided diffusion planning over exact score models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demo set described by an experiment config.
    Demos {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the CSV files and manifest.
        #[arg(long, default_value = "demos")]
        out: PathBuf,
        /// Overrides the config's demo seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the config's score model to a demo set and write a summary.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Demo manifest; generated from the config when omitted.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a single plan from the task start and dump its tree.
    Plan {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first variant in the config.
        #[arg(long)]
        variant: Option<Variant>,
        /// Leaf budget; defaults to the first budget in the config.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the full experiment grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the results file; overrides the config's output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel grid cells; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Cold versus warm start on the linear subspace experiment.
    Prop1 {
        /// TOML overrides of the default configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Aggregate results files into a table and a CSV.
    Report {
        /// Results files written by `run`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Demos { config, out, seed } => demos(&config, &out, seed),
        Command::Fit { config, demos, out } => fit(&config, demos.as_deref(), &out),
        Command::Plan {
            config,
            variant,
            budget,
            seed,
            out,
        } => plan_once(&config, variant, budget, seed, &out),
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => run(&config, out, seed, workers),
        Command::Prop1 {
            config,
            seed,
            trials,
            out,
        } => prop1(config.as_deref(), seed, trials, &out),
        Command::Report { inputs, out } => report(&inputs, &out),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn demos(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut model = load(config)?.task.model().clone();
    if let Some(s) = seed {
        model.demo_seed = s;
    }
    let env = model.env()?;
    let demos = model.generate_demos(&env)?;
    let manifest = save_demo_set(out, &demos)?;
    println!("{} demos written; manifest {}", demos.len(), manifest.display());
    Ok(())
}

fn fit(config: &Path, demos: Option<&Path>, out: &Path) -> Result<()> {
    let model = load(config)?.task.model().clone();
    let demos = match demos {
        Some(p) => load_demo_set(p)?,
        None => model.generate_demos(&model.env()?)?,
    };
    let first = demos.first().context("empty demo set")?;
    let summary = match model.prior {
        Prior::Empirical { kernel_floor } => {
            let m = EmpiricalScoreModel::fit(&demos, kernel_floor)?;
            json!({
                "prior": "empirical",
                "kernel_floor": kernel_floor,
                "unique_demos": m.len(),
                "demo_mean": m.demo_mean(),
            })
        }
        Prior::Gaussian { ridge } => {
            let m = fit_gaussian(&demos, ridge)?;
            let cov = m.covariance();
            json!({
                "prior": "gaussian",
                "ridge": ridge,
                "mean": m.mean(),
                "covariance_trace": cov.trace(),
            })
        }
    };
    let summary = json!({
        "horizon": first.horizon(),
        "channels": first.channels(),
        "demos": demos.len(),
        "model": summary,
    });
    write_json(&out.join("model.json"), &summary)
}

fn plan_once(config: &Path, variant: Option<Variant>, budget: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let cfg = load(config)?;
    let variant = variant.unwrap_or(cfg.variants[0]);
    let budget = budget.unwrap_or(cfg.budgets[0]);
    let (samples, children) = leaf_split(variant, budget)?;
    let pcfg = tdp_core::planner::PlannerConfig {
        variant,
        samples,
        children,
        seed,
        ..cfg.planner.clone()
    };
    let task = PreparedTask::prepare(&cfg.task, cfg.schedule)?;
    let seeds = SeedStream::new(seed);
    let problem = Problem {
        denoiser: &task.denoiser,
        guide: task.guide(),
        true_guide: task.true_guide(),
        conditions: task.conditions(&task.start_for(&seeds)),
        mask: task.mask().clone(),
    };
    let output = plan(&problem, &pcfg, &seeds)?;
    let tree = &output.tree;
    println!(
        "{variant}: {} parents, {} children, selected leaf {} (true score {:.4}), {} reverse steps",
        tree.parents.len(),
        tree.children.len(),
        tree.selected,
        tree.true_scores()[tree.selected],
        output.reverse_steps
    );
    let leaves: Vec<Vec<Vec<f64>>> = (0..tree.leaf_count())
        .map(|k| tree.leaf(k).rows().map(<[f64]>::to_vec).collect())
        .collect();
    let dump = json!({
        "variant": variant,
        "budget": budget,
        "seed": seed,
        "observation_channels": task.mask().observation_channels(),
        "reverse_steps": output.reverse_steps,
        "selected": tree.selected,
        "leaves": tree.records(),
        "trajectories": leaves,
    });
    write_json(&out.join("tree.json"), &dump)
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, workers: usize) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(dir) = out {
        cfg.output = dir.join(format!("{}.jsonl", cfg.name));
    }
    if let Some(s) = seed {
        cfg.seeds = SeedList::List(vec![s]);
    }
    let workers = effective_workers(workers);
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
        log::info!("{DETERMINISTIC_ENV}=1: running on one worker");
    }
    let summary = run_experiment(&cfg, workers)?;
    println!("{} records written to {}", summary.records, summary.output.display());
    if !summary.ok() {
        for f in &summary.failures {
            eprintln!("failed: {f}");
        }
        bail!("{} of the grid cells failed", summary.failures.len());
    }
    Ok(())
}

fn prop1(config: Option<&Path>, seed: Option<u64>, trials: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => Prop1Config::from_toml(&fs::read_to_string(p)?)?,
        None => Prop1Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = trials {
        cfg.trials = n;
    }
    let par = if effective_workers(0) == 1 {
        Parallelism::Sequential
    } else {
        Parallelism::available()
    };
    let cold = run_prop1(&cfg, Init::Cold, par)?;
    let warm = run_prop1(&cfg, Init::Warm, par)?;
    println!(
        "E[J1] = {:.3e}, E[J2] = {:.3e}, |w_perp| = {:.3}, |A v1| = {:.3}",
        cold.expected_j1, cold.expected_j2, cold.w_perp_norm, cold.target_norm
    );
    println!("{:<6} {:>8} {:>14} {:>14}", "init", "trials", "mean |X_perp|", "mean |X-Av1|");
    for s in [&cold, &warm] {
        println!(
            "{:<6} {:>8} {:>14.5} {:>14.5}",
            format!("{:?}", s.init).to_lowercase(),
            s.trials,
            s.mean_perp_norm,
            s.mean_dist_to_target
        );
    }
    write_json(
        &out.join("prop1.json"),
        &json!({ "config": cfg, "cold": cold, "warm": warm }),
    )
}

fn report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for p in inputs {
        records.extend(read_records(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let rows = summarize(&records);
    print!("{}", render_table(&rows));
    fs::create_dir_all(out)?;
    let csv = out.join("report.csv");
    write_csv(&csv, &rows)?;
    log::info!("wrote {}", csv.display());
    Ok(())
}
