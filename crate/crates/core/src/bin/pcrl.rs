use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pcrl::env::{self, Modality, Observation};
use pcrl::harness::{
    compare_csv, compare_modalities, contrib_csv, contrib_report, grad_check_suite, load_agent, pixel_correspondence,
    probe_robustness, RunConfig, CORRESPONDENCE_HEADER,
};
use pcrl::rng::{stream, Stream};
use pcrl::sac::{evaluate, metrics_csv, train_with, METRICS_HEADER};

#[derive(Parser)]
#[command(name = "pcrl", version, about = "Point-cloud and image SAC agents on the 3D reacher")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`section.key = value` lines).
    config: PathBuf,
    /// Master seed, overriding `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration override applied after the file, e.g. `agent.lr=3e-4`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("run.seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("run.out_dir={}", o.display()));
        }
        RunConfig::load(&self.config, &overrides).with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics and checkpoints.
    Train(Common),
    /// Mean return of the deterministic policy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
        /// Evaluation episodes (default: `run.eval_episodes`).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Relative Q-value change under shifted observations.
    Probe {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
        /// Perturbation magnitudes: world units for clouds, pixels for images.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        magnitudes: Vec<f64>,
        /// Fresh states per magnitude.
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Points that survive max-pooling, per episode.
    Contrib {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Dump sample observations (PPM images, depth and point-cloud text).
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
    },
    /// Finite-difference check of every op and of the composed losses.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train every modality and seed and collect the evaluation curves.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "pointcloud,rgbd,rgb")]
        modalities: Vec<Modality>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Prints `csv` and, with an output directory, also writes it there as `name`.
fn emit(cfg: &RunConfig, name: &str, csv: &str) -> Result<()> {
    print!("{csv}");
    if let Some(dir) = &cfg.run.out_dir {
        write(&dir.join(name), csv)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            if let Some(dir) = &cfg.run.out_dir {
                write(&dir.join("config.txt"), &cfg.to_text())?;
            }
            eprintln!("{METRICS_HEADER}");
            let out = train_with(&cfg.env, &cfg.agent, &cfg.run, &mut |row| eprintln!("{}", row.to_csv()))?;
            if cfg.run.out_dir.is_none() {
                print!("{}", metrics_csv(&out.rows));
            }
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = common.load()?;
            let agent = load_agent(&cfg, &checkpoint)?;
            let n = episodes.unwrap_or(cfg.run.eval_episodes);
            if n == 0 {
                bail!("--episodes must be at least 1");
            }
            let ret = evaluate(&agent, &cfg.env, cfg.agent.frame_stack, n, cfg.run.seed)?;
            println!("episodes,eval_return\n{n},{ret}");
        }
        Command::Probe {
            common,
            checkpoint,
            magnitudes,
            samples,
        } => {
            let cfg = common.load()?;
            let agent = load_agent(&cfg, &checkpoint)?;
            let mut rng = stream(cfg.run.seed, Stream::Probe);
            let report = probe_robustness(&agent, &cfg, &magnitudes, samples, &mut rng)?;
            emit(&cfg, "robustness.csv", &report.to_csv())?;
            if let Some(dir) = &cfg.run.out_dir {
                let c = pixel_correspondence(&cfg, 1, samples.min(32), &mut rng)?;
                write(&dir.join("correspondence.csv"), &format!("{CORRESPONDENCE_HEADER}\n{}\n", c.to_csv_line()))?;
            }
        }
        Command::Contrib {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = common.load()?;
            let agent = load_agent(&cfg, &checkpoint)?;
            let rows = contrib_report(&agent, &cfg, episodes, &mut stream(cfg.run.seed, Stream::Probe))?;
            emit(&cfg, "contrib.csv", &contrib_csv(&rows))?;
        }
        Command::Render { common, episodes } => {
            let cfg = common.load()?;
            let Some(dir) = cfg.run.out_dir.clone() else {
                bail!("render needs an output directory (--out or run.out_dir)");
            };
            let mut rng = stream(cfg.run.seed, Stream::Env);
            for i in 0..episodes {
                let state = env::sample_state(&cfg.env, &mut rng)?;
                let r = env::render(&state, &cfg.env);
                write(&dir.join(format!("obs_{i}_rgb.ppm")), &env::to_ppm(&r.rgb))?;
                let mut depth = String::new();
                for v in 0..r.depth.height {
                    let row: Vec<String> = (0..r.depth.width).map(|u| r.depth.at(v, u)[0].to_string()).collect();
                    depth.push_str(&row.join(","));
                    depth.push('\n');
                }
                write(&dir.join(format!("obs_{i}_depth.csv")), &depth)?;
                let mut pc_cfg = cfg.env.clone();
                pc_cfg.obs_modality = Modality::PointCloud;
                if let Observation::Cloud(c) = env::observe(&state, &pc_cfg, &mut rng)? {
                    write(&dir.join(format!("obs_{i}_cloud.txt")), &c.to_dump())?;
                }
            }
            println!("wrote {episodes} observations to {}", dir.display());
        }
        Command::GradCheck { seed } => {
            let lines = grad_check_suite(seed)?;
            println!("check,max_rel_error,threshold,status");
            for l in &lines {
                let status = if l.passed() { "pass" } else { "FAIL" };
                println!("{},{:.3e},{:.0e},{status}", l.name, l.max_rel_error, l.threshold);
            }
            let failed = lines.iter().filter(|l| !l.passed()).count();
            if failed > 0 {
                bail!("{failed} gradient checks above threshold");
            }
        }
        Command::Compare {
            common,
            modalities,
            seeds,
        } => {
            let cfg = common.load()?;
            let rows = compare_modalities(&cfg, &modalities, &seeds, &mut |m, s, row| {
                eprintln!("{m},{s},{}", row.to_csv())
            })?;
            emit(&cfg, "compare.csv", &compare_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
