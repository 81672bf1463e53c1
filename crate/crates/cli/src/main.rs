//! Command-line front end for the simulation harness.
//!
//! Exit codes: 0 on success, 1 when more than 10% of trials failed,
//! 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adaknock::engine::EstimatorKind;
use adaknock::sim::{csv_string, run_experiment, write_csv, ExperimentConfig, FilterKind, RunReport};

#[derive(Parser)]
#[command(
    name = "adaknock",
    version,
    about = "Monte-Carlo benchmarks for adaptive knockoff filtering",
    after_help = "Examples:\n  adaknock sim1 --preset desk --trials 20 --q-grid 0.05:0.3:0.05 \\\n      --methods knockoff_vanilla,knockoff_em,bh --out sim1.csv\n  adaknock sim2 --preset desk --filter em --methods knockoff --trials 10\n  adaknock run --config experiment.toml"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linear AR(1) design with decaying signal placement over the index
    Sim1(SimArgs),
    /// Logistic design on a 2-D grid with a geometric signal region
    Sim2(SimArgs),
    /// Run an experiment described by a TOML config file
    Run(RunArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size benchmark
    Native,
    /// Shrunk dimensions for quick runs
    Desk,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value_t = Preset::Native)]
    preset: Preset,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with ExperimentConfig keys; flags below override it
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    /// Observations per trial
    #[arg(long)]
    n: Option<usize>,
    /// Number of hypotheses (a perfect square for sim2)
    #[arg(long)]
    p: Option<usize>,
    /// Monte-Carlo trials
    #[arg(long)]
    trials: Option<usize>,
    /// Target FDR levels: START:STOP:STEP (inclusive) or a single value
    #[arg(long = "q-grid", value_name = "START:STOP:STEP")]
    q_grid: Option<String>,
    /// Comma-separated: knockoff, knockoff_vanilla, knockoff_logistic,
    /// knockoff_gam, knockoff_rf, knockoff_em, bh, storey_bh, seqstep
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Filter behind the plain `knockoff` token
    #[arg(long, value_name = "vanilla|logistic|gam|rf|em")]
    filter: Option<String>,
    /// FDR estimate driving the stop rule
    #[arg(long, value_name = "plus|zero")]
    estimator: Option<String>,
    /// Master seed for every random stream
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Signal magnitude (default 3.5/sqrt(n) linear, 25/sqrt(n) grid)
    #[arg(long)]
    amplitude: Option<f64>,
    /// Number of signals (linear designs)
    #[arg(long = "n-signals")]
    n_signals: Option<usize>,
    /// Signals land in the first FRONT coordinates (sim1)
    #[arg(long)]
    front: Option<usize>,
    /// AR(1) lag correlation of the covariates
    #[arg(long)]
    rho: Option<f64>,
    /// Refit the filter model every this many reveals
    #[arg(long = "refit-every")]
    refit_every: Option<usize>,
    /// Vanilla warm-start fraction in [0, 1)
    #[arg(long = "reveal-fraction")]
    reveal_fraction: Option<f64>,
    /// EM sweeps per refit
    #[arg(long = "em-iters")]
    em_iters: Option<usize>,
    /// Record per-method wall time (breaks byte-identical output)
    #[arg(long)]
    timings: bool,
}

fn parse_q_grid(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let parse = |s: &str| -> Result<f64, String> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{s}` is not a number in q-grid `{text}`"))
    };
    match parts.as_slice() {
        [single] => Ok(vec![parse(single)?]),
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if !(step > 0.0 && stop >= start) {
                return Err(format!(
                    "q-grid `{text}` needs stop >= start and step > 0"
                ));
            }
            let mut grid = Vec::new();
            let mut k = 0u32;
            loop {
                let q = start + k as f64 * step;
                if q > stop + 1e-12 {
                    break;
                }
                grid.push(q);
                k += 1;
            }
            Ok(grid)
        }
        _ => Err(format!(
            "q-grid `{text}` must be a single level or START:STOP:STEP"
        )),
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<ExperimentConfig, String> {
    if let Some(n) = ov.n {
        cfg.n = n;
    }
    if let Some(p) = ov.p {
        cfg.p = p;
    }
    if let Some(t) = ov.trials {
        cfg.n_trials = t;
    }
    if let Some(text) = &ov.q_grid {
        cfg.q_grid = parse_q_grid(text)?;
    }
    if let Some(methods) = &ov.methods {
        cfg.methods = methods.clone();
    }
    if let Some(f) = &ov.filter {
        cfg.filter = FilterKind::parse(f).map_err(|e| e.to_string())?;
    }
    if let Some(e) = &ov.estimator {
        cfg.estimator = match e.as_str() {
            "plus" => EstimatorKind::Plus,
            "zero" => EstimatorKind::Zero,
            other => return Err(format!("unknown estimator `{other}` (expected plus|zero)")),
        };
    }
    if let Some(seed) = ov.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.output = Some(out.clone());
    }
    if let Some(a) = ov.amplitude {
        cfg.amplitude = Some(a);
    }
    if let Some(s) = ov.n_signals {
        cfg.n_signals = s;
    }
    if let Some(f) = ov.front {
        cfg.front = f;
    }
    if let Some(r) = ov.rho {
        cfg.rho = r;
    }
    if let Some(r) = ov.refit_every {
        cfg.refit_every = r;
    }
    if let Some(r) = ov.reveal_fraction {
        cfg.reveal_fraction = r;
    }
    if let Some(s) = ov.em_iters {
        cfg.em_iters = s;
    }
    if ov.timings {
        cfg.timings = true;
    }
    Ok(cfg)
}

fn build_config(command: &Command) -> Result<ExperimentConfig, String> {
    match command {
        Command::Sim1(args) => {
            apply_overrides(ExperimentConfig::sim1(args.preset == Preset::Desk), &args.overrides)
        }
        Command::Sim2(args) => {
            apply_overrides(ExperimentConfig::sim2(args.preset == Preset::Desk), &args.overrides)
        }
        Command::Run(args) => {
            let text = std::fs::read_to_string(&args.config)
                .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
            let cfg: ExperimentConfig = toml::from_str(&text)
                .map_err(|e| format!("{}: {e}", args.config.display()))?;
            apply_overrides(cfg, &args.overrides)
        }
    }
}

fn print_summary(report: &RunReport) {
    // mean FDP / power per (method, q), in row order
    let mut groups: Vec<(String, f64, f64, f64, usize)> = Vec::new();
    for row in &report.rows {
        match groups.last_mut() {
            Some((m, q, fdp, power, count)) if *m == row.method && *q == row.q => {
                *fdp += row.fdp;
                *power += row.power;
                *count += 1;
            }
            _ => groups.push((row.method.clone(), row.q, row.fdp, row.power, 1)),
        }
    }
    for (method, q, fdp, power, count) in groups {
        eprintln!(
            "{method} q={q:.3}: mean FDP {:.4}, mean power {:.4} ({count} trials)",
            fdp / count as f64,
            power / count as f64
        );
    }
}

fn execute(cli: Cli) -> ExitCode {
    let cfg = match build_config(&cli.command) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("configuration error: {e}");
        return ExitCode::from(2);
    }
    let report = match run_experiment(&cfg) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    for (trial, msg) in &report.failures {
        eprintln!("trial {trial} failed: {msg}");
    }
    match &cfg.output {
        Some(path) => {
            if let Err(e) = write_csv(&report.rows, path) {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
            eprintln!(
                "wrote {} rows to {} ({}/{} trials ok)",
                report.rows.len(),
                path.display(),
                report.n_trials - report.failures.len(),
                report.n_trials
            );
            print_summary(&report);
        }
        None => print!("{}", csv_string(&report.rows)),
    }
    if report.acceptable() {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "{} of {} trials failed (more than 10%)",
            report.failures.len(),
            report.n_trials
        );
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    execute(Cli::parse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_grid_parsing() {
        assert_eq!(parse_q_grid("0.2").unwrap(), vec![0.2]);
        let grid = parse_q_grid("0.03:0.3:0.03").unwrap();
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 0.03).abs() < 1e-12);
        assert!((grid[9] - 0.3).abs() < 1e-12);
        assert!(parse_q_grid("0.3:0.1:0.1").is_err());
        assert!(parse_q_grid("a:b:c").is_err());
        assert!(parse_q_grid("0.1:0.2").is_err());
    }

    #[test]
    fn overrides_apply() {
        let ov = Overrides {
            n: Some(77),
            filter: Some("em".into()),
            estimator: Some("zero".into()),
            q_grid: Some("0.1:0.2:0.1".into()),
            ..Overrides::default()
        };
        let cfg = apply_overrides(ExperimentConfig::sim1(true), &ov).unwrap();
        assert_eq!(cfg.n, 77);
        assert_eq!(cfg.filter, FilterKind::Em);
        assert_eq!(cfg.estimator, EstimatorKind::Zero);
        assert_eq!(cfg.q_grid.len(), 2);
        assert!(apply_overrides(
            ExperimentConfig::sim1(true),
            &Overrides {
                estimator: Some("median".into()),
                ..Overrides::default()
            }
        )
        .is_err());
    }
}
