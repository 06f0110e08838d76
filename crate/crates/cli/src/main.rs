use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambiprop::config::{ExperimentConfig, SweepSpec};
use ambiprop::validation::{containment_report, simulate_true, ContainmentOptions};
use ambiprop::{fixed_point_bound, propagate, CompressionAccounting, Dynamics, Error, Trace};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "ambiprop", version, about = "Propagate Wasserstein ambiguity sets through nonlinear dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the configured ambiguity set and write trace.json and steps.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Also run the Monte Carlo containment check.
        #[arg(long)]
        validate: bool,
    },
    /// Run every combination of a parameter grid and write table.csv.
    Sweep {
        config: PathBuf,
        sweep: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Propagate and compare against Monte Carlo samples of the true system.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Dump the true-system samples to samples.csv.
        #[arg(long)]
        samples: bool,
    },
    /// Print the limiting radius for a contractive system.
    FixedPoint {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Per-step quantization error ceiling; measured from a run when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    compression_accounting: Option<Accounting>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Accounting {
    Post,
    Paper,
}

impl From<Accounting> for CompressionAccounting {
    fn from(a: Accounting) -> Self {
        match a {
            Accounting::Post => CompressionAccounting::Post,
            Accounting::Paper => CompressionAccounting::Paper,
        }
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
}

fn load(path: &Path, common: &Common) -> ambiprop::Result<Loaded> {
    let (mut cfg, base) = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(a) = common.compression_accounting {
        cfg.compression_accounting = a.into();
    }
    let out = match (&common.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("out").join(&cfg.name),
    };
    Ok(Loaded { cfg, base, out })
}

/// Writes through a temp file in the target directory, then renames.
fn write_atomic<F>(dir: &Path, name: &str, fill: F) -> ambiprop::Result<()>
where
    F: FnOnce(&mut dyn Write) -> ambiprop::Result<()>,
{
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> ambiprop::Result<()> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn run_trace(cfg: &ExperimentConfig, base: &Path) -> ambiprop::Result<(Trace, ambiprop::Model)> {
    let model = cfg.build_model(base)?;
    let trace = propagate(&cfg.initial_ball()?, &cfg.noise_ball()?, &model, cfg.horizon, &cfg.propagation_config())?;
    Ok((trace, model))
}

fn write_trace(out: &Path, trace: &Trace) -> ambiprop::Result<()> {
    write_json(out, "trace.json", trace)?;
    write_atomic(out, "steps.csv", |w| trace.write_steps_csv(w))
}

fn validate_trace(
    loaded: &Loaded,
    trace: &Trace,
    model: &ambiprop::Model,
    dump_samples: bool,
) -> ambiprop::Result<()> {
    let cfg = &loaded.cfg;
    let opts = ContainmentOptions {
        distance_samples: cfg.validation.distance_samples,
        mean_samples: cfg.validation.mean_samples,
        seed: cfg.seed ^ 0x5eed,
    };
    let init = cfg.initial_ball()?.center;
    let noise = cfg.noise_ball()?.center;
    let report = containment_report(trace, model, &init, &noise, &opts)?;
    write_atomic(&loaded.out, "validation.csv", |w| report.write_csv(w))?;
    write_json(&loaded.out, "validation.json", &report)?;
    if dump_samples {
        let cloud = simulate_true(model, &init, &noise, cfg.horizon, opts.distance_samples, opts.seed)?;
        write_atomic(&loaded.out, "samples.csv", |w| cloud.write_csv(w))?;
    }
    println!(
        "validation: {} steps, {} mean violations, {} distance violations",
        report.rows.len(),
        report.mean_violations(),
        report.distance_violations()
    );
    Ok(())
}

fn cmd_run(config: &Path, common: &Common, validate: bool) -> ambiprop::Result<()> {
    let loaded = load(config, common)?;
    let (trace, model) = run_trace(&loaded.cfg, &loaded.base)?;
    write_trace(&loaded.out, &trace)?;
    println!("{}: theta_{} = {:.6}", loaded.cfg.name, loaded.cfg.horizon, trace.final_radius());
    if validate {
        validate_trace(&loaded, &trace, &model, false)?;
    }
    println!("wrote {}", loaded.out.display());
    Ok(())
}

fn cmd_sweep(config: &Path, sweep: &Path, common: &Common) -> ambiprop::Result<()> {
    let loaded = load(config, common)?;
    let spec = SweepSpec::load(sweep)?;
    let points = spec.points(&loaded.cfg)?;
    let model = loaded.cfg.build_model(&loaded.base)?;
    let rows: Vec<ambiprop::Result<(u64, f64)>> = points
        .par_iter()
        .map(|p| {
            let cfg = p.apply(&loaded.cfg)?;
            let trace =
                propagate(&cfg.initial_ball()?, &cfg.noise_ball()?, &model, cfg.horizon, &cfg.propagation_config())?;
            Ok((cfg.seed, trace.final_radius()))
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for (p, r) in points.iter().zip(rows) {
        table.push((p, r?));
    }
    let horizon = loaded.cfg.horizon;
    write_atomic(&loaded.out, "table.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let theta = format!("theta_{horizon}");
        csv.write_record(["budget", "compression", "initial_radius", "noise_radius", "seed", theta.as_str()])?;
        for (p, (seed, radius)) in &table {
            csv.write_record([
                p.budget.to_string(),
                p.compression.to_string(),
                format!("{:.16e}", p.initial_radius),
                format!("{:.16e}", p.noise_radius),
                seed.to_string(),
                format!("{radius:.16e}"),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    for (p, (_, radius)) in &table {
        println!(
            "budget={:<5} N={:<3} theta_x0={:<6} theta_w={:<6} theta_{horizon}={radius:.6}",
            p.budget, p.compression, p.initial_radius, p.noise_radius
        );
    }
    println!("wrote {}", loaded.out.join("table.csv").display());
    Ok(())
}

fn cmd_validate(config: &Path, common: &Common, samples: bool) -> ambiprop::Result<()> {
    let loaded = load(config, common)?;
    let (trace, model) = run_trace(&loaded.cfg, &loaded.base)?;
    write_trace(&loaded.out, &trace)?;
    validate_trace(&loaded, &trace, &model, samples)?;
    println!("wrote {}", loaded.out.display());
    Ok(())
}

fn cmd_fixed_point(config: &Path, common: &Common, epsilon: Option<f64>) -> ambiprop::Result<()> {
    let loaded = load(config, common)?;
    let cfg = &loaded.cfg;
    let model = cfg.build_model(&loaded.base)?;
    let lipschitz = model.lipschitz_bound()?;
    println!("lipschitz: {lipschitz:.6}");
    if lipschitz >= 1.0 {
        return Err(Error::NotContractive(lipschitz));
    }
    let epsilon = match epsilon.or(cfg.fixed_point_epsilon) {
        Some(e) => e,
        None => {
            let (trace, _) = run_trace(cfg, &loaded.base)?;
            trace.reports.iter().map(|r| r.theta_delta).fold(0.0, f64::max)
        }
    };
    let theta_omega = cfg.noise.radius;
    let theta_star = fixed_point_bound(theta_omega, lipschitz, epsilon, cfg.rho)?;
    println!("epsilon: {epsilon:.6}");
    println!("theta_omega: {theta_omega:.6}");
    println!("theta_star: {theta_star:.6}");
    let certified = model.is_continuous();
    println!("certified: {certified}");
    if !certified {
        println!("note: {} dynamics are discontinuous; jump terms are not covered by this bound", model.family());
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::NotContractive(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common, validate } => cmd_run(config, common, *validate),
        Command::Sweep { config, sweep, common } => cmd_sweep(config, sweep, common),
        Command::Validate { config, common, samples } => cmd_validate(config, common, *samples),
        Command::FixedPoint { config, common, epsilon } => cmd_fixed_point(config, common, *epsilon),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
