use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybridcub::cubature::{make_rule, rule_to_csv, RuleKind};
use hybridcub::scenario::{bench_csv, bench_points, calibrate_to, execute, load_scenario, write_artifacts};

#[derive(Parser)]
#[command(name = "hybridcub", version, about = "Hybrid-degree dual cubature estimation and engine fault diagnosis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write CSV artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. `--set scenario.horizon=12`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write a rule's points and weights as CSV (columns w, x1..xn).
    DumpRule {
        kind: RuleKind,
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point counts, stability factors and per-step timings.
    BenchPoints {
        #[arg(long, default_value_t = 7)]
        nmin: usize,
        #[arg(long, default_value_t = 8)]
        nmax: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
    /// Calibrate thresholds from healthy runs.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn overrides(mut set: Vec<String>, runs: Option<usize>, seed: Option<u64>, calibrate: bool) -> Vec<String> {
    if let Some(r) = runs {
        let key = if calibrate { "fdii.calibration_runs" } else { "scenario.runs" };
        set.push(format!("{key}={r}"));
    }
    if let Some(s) = seed {
        set.push(format!("scenario.seed={s}"));
    }
    set
}

fn real_main() -> Result<(), Box<dyn std::error::Error>> {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            runs,
            seed,
            out,
            set,
        } => {
            let file = load_scenario(&config, &overrides(set, runs, seed, false))?;
            let out = out
                .or_else(|| file.scenario.out.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&file.scenario.name));
            let res = execute(&file)?;
            write_artifacts(&res, &out)?;
            for l in &res.labels {
                let detected = l.metrics.iter().filter(|m| m.fdt.is_some()).count();
                let fa = l.metrics.iter().filter(|m| m.false_alarm_samples > 0).count();
                println!(
                    "{:<20} {:<18} runs {:>4}  detected {:>4}  runs with false alarms {:>4}",
                    l.label,
                    l.name,
                    l.metrics.len(),
                    detected,
                    fa
                );
            }
            println!("artifacts written to {}", out.display());
        }
        Cmd::DumpRule { kind, n, out } => {
            let csv = rule_to_csv(&make_rule(kind, n)?);
            match out {
                Some(p) => std::fs::write(&p, csv)?,
                None => print!("{csv}"),
            }
        }
        Cmd::BenchPoints { nmin, nmax, reps } => {
            print!("{}", bench_csv(&bench_points(nmin, nmax, reps)));
        }
        Cmd::Calibrate {
            config,
            runs,
            seed,
            out,
            set,
        } => {
            let file = load_scenario(&config, &overrides(set, runs, seed, true))?;
            let out = out
                .or_else(|| file.scenario.out.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(&file.scenario.name));
            for (label, th) in calibrate_to(&file, &out)? {
                let vals: Vec<String> = th.r_max.iter().map(|v| format!("{v:.3e}")).collect();
                println!("{label}: {}", vals.join(" "));
            }
            println!("thresholds written to {}", out.join("thresholds.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
