//! `td7`: train, evaluate and ablate agents from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, CommandFactory, Parser, Subcommand};
use td7::agent::Policy;
use td7::envsuite::{generate_dataset, make_env, scripted_controller, write_dataset};
use td7::harness::{
    evaluate, grid, load_policy, mean, parse_override, parse_pairs, preset, presets, read_metrics, render_svg, run,
    Mode, RandomPolicy, RunConfig, RunSummary, Series, GRIDS,
};
use td7::Error;

#[derive(Parser)]
#[command(name = "td7", version, about = "Train, evaluate and ablate TD7 agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct RunArgs {
    /// Config file, one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metric file, or output directory for `ablate`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Online training with policy checkpoints.
    TrainOnline {
        #[command(flatten)]
        run: RunArgs,
        /// Write the final agent snapshot here.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Offline training on a dataset file.
    TrainOffline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Roll out a scripted or random policy into a dataset file.
    GenDataset {
        #[arg(long)]
        env: String,
        /// `scripted` or `random`.
        #[arg(long, default_value = "scripted")]
        policy: String,
        /// Std of the Gaussian noise added to every action.
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 100_000)]
        transitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean return of a policy over fresh episodes.
    Evaluate {
        /// `scripted`, `random`, or the path of an agent snapshot.
        #[arg(long, default_value = "scripted")]
        policy: String,
        /// Defaults to the config's env.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
        /// Config the snapshot was trained with.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every preset of a named grid (or a single preset).
    Ablate {
        /// Grid or preset name.
        #[arg(required_unless_present = "list")]
        grid: Option<String>,
        #[command(flatten)]
        run: RunArgs,
        /// Seeds per preset, counted up from the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// List grids and presets, then exit.
        #[arg(long)]
        list: bool,
    },
    /// Render evaluation curves from metric files to an SVG image.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "evaluation return")]
        title: String,
        /// Series labels in file order; defaults to file names.
        #[arg(long)]
        label: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Usage(_))) => {
            eprintln!("error: {e}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> td7::Result<()> {
    match command {
        Command::TrainOnline { run: args, save } => {
            let mut cfg = build_config(&args)?;
            cfg.mode = Mode::Online;
            cfg.snapshot = save.or(cfg.snapshot);
            report(&cfg, &run(&cfg)?);
            Ok(())
        }
        Command::TrainOffline { run: args, dataset, save } => {
            let mut cfg = build_config(&args)?;
            cfg.mode = Mode::Offline;
            cfg.dataset = dataset.or(cfg.dataset);
            cfg.snapshot = save.or(cfg.snapshot);
            report(&cfg, &run(&cfg)?);
            Ok(())
        }
        Command::GenDataset {
            env,
            policy,
            noise,
            transitions,
            seed,
            out,
        } => {
            let mut env_box = make_env(&env)?;
            let pol = builtin_policy(&policy, &env, seed)?;
            let data = generate_dataset(env_box.as_mut(), pol.as_ref(), &policy, noise, transitions, seed)?;
            write_dataset(&out, &data)?;
            println!("wrote {} transitions of {env} to {}", data.transitions.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            policy,
            env,
            episodes,
            config,
            set,
            seed,
        } => {
            let args = RunArgs {
                config,
                set,
                ..RunArgs::default()
            };
            let mut cfg = build_config(&args)?;
            if let Some(env) = env {
                cfg.env = env;
            }
            let pol: Box<dyn Policy + Send + Sync> = match policy.as_str() {
                "scripted" | "random" => builtin_policy(&policy, &cfg.env, seed)?,
                path => load_policy(&cfg, Path::new(path))?,
            };
            let returns = evaluate(pol.as_ref(), &cfg.env, episodes, seed, 0)?;
            println!("{} {policy}: mean return {:.4} over {episodes} episodes", cfg.env, mean(&returns));
            Ok(())
        }
        Command::Ablate {
            grid: name,
            run: args,
            seeds,
            jobs,
            list,
        } => {
            if list {
                print_catalogue();
                return Ok(());
            }
            let name = name.ok_or_else(|| Error::usage("ablate needs a grid or preset name"))?;
            ablate(&name, &args, seeds, jobs)
        }
        Command::Plot {
            files,
            out,
            title,
            label,
        } => {
            if !label.is_empty() && label.len() != files.len() {
                return Err(Error::usage(format!("{} labels for {} files", label.len(), files.len())));
            }
            let mut series = Vec::with_capacity(files.len());
            for (k, f) in files.iter().enumerate() {
                let points = read_metrics(f)?
                    .iter()
                    .map(|r| (r.env_step as f64, r.eval_mean_return))
                    .collect();
                let label = label.get(k).cloned().unwrap_or_else(|| series_label(f));
                series.push(Series { label, points });
            }
            std::fs::write(&out, render_svg(&title, &series)).map_err(|e| Error::io(&out, e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn build_config(args: &RunArgs) -> td7::Result<RunConfig> {
    let file = match &args.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    let overrides = args.set.iter().map(|s| parse_override(s)).collect::<td7::Result<Vec<_>>>()?;
    let mut cfg = RunConfig::from_pairs(&file, &overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn builtin_policy(name: &str, env: &str, seed: u64) -> td7::Result<Box<dyn Policy + Send + Sync>> {
    match name {
        "scripted" => scripted_controller(env),
        "random" => Ok(Box::new(RandomPolicy::new(make_env(env)?.spec().action_dim, seed))),
        other => Err(Error::usage(format!("unknown policy `{other}` (scripted, random)"))),
    }
}

fn report(cfg: &RunConfig, s: &RunSummary) {
    println!(
        "{} seed {}: {} env steps, {} train steps, final return {:.4}, metrics in {}",
        cfg.env,
        cfg.seed,
        s.env_steps,
        s.train_steps,
        s.final_return().unwrap_or(f64::NAN),
        cfg.out.display()
    );
}

fn series_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

fn print_catalogue() {
    println!("grids:");
    for (g, members) in GRIDS {
        println!("  {g:<16} {}", members.join(", "));
    }
    println!("presets:");
    for p in presets() {
        println!("  {:<26} {}", p.name(), p.summary());
    }
}

struct Job {
    preset: &'static str,
    config: RunConfig,
}

fn ablate(name: &str, args: &RunArgs, seeds: u64, jobs: usize) -> td7::Result<()> {
    if seeds == 0 || jobs == 0 {
        return Err(Error::usage("--seeds and --jobs must be at least 1"));
    }
    let base = build_config(args)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("ablate_{name}")));
    let mut queue = Vec::new();
    for p in grid(name)? {
        for k in 0..seeds {
            let mut config = base.clone();
            preset(p)?.apply(&mut config)?;
            config.seed = base.seed + k;
            config.out = dir.join(p).join(format!("seed{}.jsonl", config.seed));
            config.validate()?;
            queue.push(Job { preset: p, config });
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<td7::Result<RunSummary>>>> = Mutex::new((0..queue.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(queue.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = queue.get(i) else { break };
                log::info!("{} seed {} -> {}", job.preset, job.config.seed, job.config.out.display());
                let r = run(&job.config);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    println!("{:<26} {:>6} {:>14} {:>14}", "preset", "runs", "final mean", "best mean");
    let mut failed = None;
    let mut i = 0;
    while i < queue.len() {
        let p = queue[i].preset;
        let (mut finals, mut bests) = (Vec::new(), Vec::new());
        while i < queue.len() && queue[i].preset == p {
            match results[i].take() {
                Some(Ok(s)) => {
                    finals.push(s.final_return().unwrap_or(f64::NAN));
                    bests.push(s.best_return_by(u64::MAX).unwrap_or(f64::NAN));
                }
                Some(Err(e)) => {
                    eprintln!("{p} seed {}: {e}", queue[i].config.seed);
                    failed.get_or_insert(e);
                }
                None => {}
            }
            i += 1;
        }
        println!("{p:<26} {:>6} {:>14.4} {:>14.4}", finals.len(), mean(&finals), mean(&bests));
    }
    failed.map_or(Ok(()), Err)
}
