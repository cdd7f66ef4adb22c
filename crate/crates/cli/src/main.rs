use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stablebound::certify::{check_contraction, g_and_h, rnn_constants};
use stablebound::experiment::{crossovers, emit_curves, generate_dataset, run_experiment, ExperimentContext};
use stablebound::mixing::effective_data_constants;
use stablebound::numerics::{truncated_gaussian, SeededRng};
use stablebound::bound::save_reports_csv;
use stablebound::{simulate, ExperimentConfig, LambdaRule, RnnSystem, Trajectory};

#[derive(Parser)]
#[command(name = "stablebound", version, about = "PAC-Bayesian bounds for stable recurrent predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stability certificate of a model as JSON.
    Constants {
        #[arg(long)]
        model: PathBuf,
    },
    /// Exit nonzero unless the model's state map is a contraction.
    CheckStability {
        #[arg(long)]
        model: PathBuf,
    },
    /// Print the amplitude and dependence constants of a generator's output process.
    DataConstants {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.27)]
        e_inf: f64,
    },
    /// Drive a model from the zero state with truncated-Gaussian noise and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        e_std: f64,
        #[arg(long, default_value_t = 1.27)]
        e_inf: f64,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the experiment's generator model and one synthetic dataset.
    GenerateData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (receives generator.json and data.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the bound for a single dataset size and seed.
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Overrides,
        /// Output directory for bound_report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full grid of dataset sizes and seeds and write the CSV reports.
    Experiment {
        #[command(flatten)]
        common: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `sqrt_n` or a fixed positive value.
    #[arg(long)]
    lambda: Option<LambdaRule>,
    #[arg(long)]
    delta: Option<f64>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(l) = self.lambda {
            cfg.lambda_rule = l;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_model(path: &Path) -> Result<RnnSystem> {
    Ok(RnnSystem::load(path)?)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Constants { model } => {
            let sys = load_model(&model)?;
            let k = rnn_constants(&sys)?;
            let gh = g_and_h(&k)?;
            print_json(&json!({
                "c": k.c,
                "tau": k.tau,
                "l_v": k.l_v,
                "l_gs": k.l_gs,
                "l_gv": k.l_gv,
                "g": gh.g,
                "h": gh.h,
            }))?;
        }
        Command::CheckStability { model } => {
            let sys = load_model(&model)?;
            let check = check_contraction(&sys)?;
            print_json(&serde_json::to_value(check)?)?;
            if !check.passed {
                eprintln!("not certified: Lip(sigma_f)*||A||_2 = {} >= 1", check.value);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DataConstants { model, e_inf } => {
            let sys = load_model(&model)?;
            let k = rnn_constants(&sys)?;
            let d = effective_data_constants(&sys, &k, e_inf)?;
            print_json(&serde_json::to_value(d)?)?;
        }
        Command::Simulate {
            model,
            n,
            seed,
            e_std,
            e_inf,
            out,
        } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let sys = load_model(&model)?;
            let mut rng = SeededRng::new(seed);
            let noise = truncated_gaussian(&mut rng, e_std, e_inf, n * sys.n_v())?;
            let inputs: Vec<Vec<f64>> = noise.chunks(sys.n_v()).map(<[f64]>::to_vec).collect();
            let sim = simulate(&sys, &vec![0.0; sys.n_s()], &inputs)?;
            Trajectory::new(inputs, sim.outputs)?.save_csv(&out)?;
        }
        Command::GenerateData { n, seed, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = generate_dataset(seed, n, cfg.e_std, cfg.e_inf)?;
            create_dir(&out)?;
            stablebound::experiment::build_paper_generator().save(&out.join("generator.json"))?;
            data.save_csv(&out.join("data.csv"))?;
        }
        Command::Bound { n, seed, common, out } => {
            let cfg = common.resolve()?;
            let ctx = ExperimentContext::new(cfg)?;
            let cell = ctx.run_cell(seed, n)?;
            if let Some(dir) = out {
                create_dir(&dir)?;
                save_reports_csv(std::slice::from_ref(&cell.report), &dir.join("bound_report.csv"))?;
            }
            let mut value = serde_json::to_value(&cell.report)?;
            value["acceptance_rate"] = json!(cell.acceptance_rate);
            print_json(&value)?;
        }
        Command::Experiment { common, out } => {
            let cfg = common.resolve()?;
            let reports = run_experiment(&cfg)?;
            let files = emit_curves(&reports, &out)?;
            let c = crossovers(&reports);
            let per_seed: Vec<_> = c.per_seed.iter().map(|(s, n)| json!({"seed": s, "n_star": n})).collect();
            print_json(&json!({
                "bound_report": files.bound_report,
                "summary": files.summary,
                "crossover": files.crossover,
                "median_n_star": c.median,
                "per_seed": per_seed,
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
