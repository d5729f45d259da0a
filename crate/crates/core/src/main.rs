use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sce_core::harness::{self, config, ExperimentConfig};

#[derive(Parser)]
#[command(name = "sce-bench", about = "Policy-evaluation benchmarks for SCE-MSPBEM and TD baselines")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the built-in presets.
    ListPresets,
    /// Run an experiment and write per-run CSVs plus a manifest.
    Run(RunArgs),
    /// Print the mean final √MSE table for a result directory.
    Compare(DirArgs),
    /// Write averaged plot series for a result directory.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list or inclusive range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct DirArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Destination for the series files; defaults to OUT/plot.
    #[arg(long)]
    dest: Option<PathBuf>,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_config(a: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => config::preset(p).map_err(|e| e.to_string())?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        (None, None) => return Err("need --preset or --config".into()),
    };
    if let Some(s) = &a.seeds {
        cfg.seeds = config::parse_seeds(s).map_err(|e| e.to_string())?;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(a: &RunArgs) -> ExitCode {
    let cfg = match load_config(a) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let records = match harness::run(&cfg, a.jobs) {
        Ok(r) => r,
        Err(e) => return fail(1, e),
    };
    if let Err(e) = harness::write_records(&cfg.out, &records) {
        return fail(1, e);
    }
    if let Err(e) = std::fs::write(cfg.out.join("config.txt"), cfg.to_text()) {
        return fail(1, e);
    }
    for r in &records {
        let last = r.last();
        println!(
            "{:<24} {:<6} seed {:<4} {:<9} sqrt_mspbe={} sqrt_mse={}",
            r.env,
            r.alg.name(),
            r.seed,
            r.status.to_string(),
            last.map(|x| harness::output::fmt_sig(x.sqrt_mspbe)).unwrap_or_else(|| "-".into()),
            last.and_then(|x| x.sqrt_mse).map(harness::output::fmt_sig).unwrap_or_else(|| "-".into()),
        );
    }
    let bad = harness::unexpected_divergences(&cfg, &records);
    if !bad.is_empty() {
        for r in bad {
            eprintln!("unexpected divergence: {} {} seed {}", r.env, r.alg, r.seed);
        }
        return ExitCode::from(EXIT_DIVERGED);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::ListPresets => {
            for (name, about) in config::PRESETS {
                println!("{name:<20} {about}");
            }
            ExitCode::SUCCESS
        }
        Cmd::Run(a) => run(&a),
        Cmd::Compare(d) => match harness::load_records(&d.out).and_then(|r| harness::compare(&r)) {
            Ok(t) => {
                print!("{}", t.render());
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_VALIDATION, e),
        },
        Cmd::PlotData(p) => {
            let dest = p.dest.unwrap_or_else(|| p.out.join("plot"));
            match harness::load_records(&p.out).and_then(|r| harness::emit_plot_data(&r, &dest)) {
                Ok(files) => {
                    println!("wrote {} series to {}", files.len(), dest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_VALIDATION, e),
            }
        }
    }
}
