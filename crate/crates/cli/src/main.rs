use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use superrad::analysis::{
    analyze_record, driven_photon_number, purcell_rate, rabi_oracle, write_allan_csv, write_psd_csv, SpectrumReport,
};
use superrad::config::{preset_text, Config, Scenario, PRESET_NAMES};
use superrad::detection::{TrajectoryRecord, RNG_ALGORITHM};
use superrad::experiment::{batch_allan, run_batch, run_sweep, write_sweep_csv, SweepSpec, SweepVariable};
use superrad::model::{zeeman_splitting, SPIN_F_SR87};
use superrad::Error;

static VERSION: LazyLock<String> = LazyLock::new(|| format!("{} (rng {RNG_ALGORITHM})", env!("CARGO_PKG_VERSION")));

/// Simulate heterodyne-detected superradiant pulses and extract clock frequencies.
#[derive(Parser)]
#[command(name = "superrad", version = VERSION.as_str())]
struct Cli {
    /// Print an embedded preset as TOML and exit.
    #[arg(long, value_name = "NAME")]
    dump_preset: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Embedded preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, env = "SUPERRAD_OUT", default_value = "superrad-out")]
    out: PathBuf,
    /// Overrides the trajectory seed (the master seed for `allan`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batches and sweeps (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory: full time series plus spectrum fits.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the compact binary record.
        #[arg(long)]
        binary: bool,
        /// Switch the measurement backaction off.
        #[arg(long)]
        unmonitored: bool,
    },
    /// Power spectrum and Lorentzian fits of one trajectory.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Analyze a stored record (.csv or .bin) instead of simulating.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Batch of trajectories, frequency sequence and Allan deviation.
    Allan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: Option<usize>,
        /// Duty cycle per measurement in seconds.
        #[arg(long)]
        t_c: Option<f64>,
    },
    /// Pulse shape over a grid of initial angles or magnetic fields.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variable: Option<Variable>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Closed-form photon number, Purcell rates and Rabi frequencies.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum Variable {
    Theta,
    BField,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(name) = cli.dump_preset {
        let text = preset_text(&name).ok_or_else(|| {
            Error::config(
                "--dump-preset",
                format!("unknown preset `{name}`; available: {}", PRESET_NAMES.join(", ")),
            )
        })?;
        print!("{text}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::config("<command>", "no command given; see --help"));
    };
    match command {
        Command::Simulate {
            common,
            binary,
            unmonitored,
        } => simulate(&common, binary, unmonitored),
        Command::Spectrum { common, record } => spectrum(&common, record.as_deref()),
        Command::Allan {
            common,
            trajectories,
            t_c,
        } => allan(&common, trajectories, t_c),
        Command::Sweep {
            common,
            variable,
            values,
        } => sweep(&common, variable, values),
        Command::Oracle { common } => oracle(&common),
    }
}

fn load(common: &Common) -> Result<Config, Error> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => Config::from_path(path)?,
        (None, Some(name)) => Config::preset(name)?,
        (None, None) => return Err(Error::config("--config", "give --config <file> or --preset <name>")),
    };
    if let Some(w) = common.workers {
        cfg.batch.workers = w;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path, Error> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn summary(command: &str, scenario: &Scenario, results: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "rng": RNG_ALGORITHM,
        "config_hash": scenario.hash,
        "config": scenario.config,
        "results": results,
    })
}

/// Integrates one trajectory; on divergence the snapshot goes next to the outputs.
fn integrate(scenario: &Scenario, out: &Path) -> Result<TrajectoryRecord, Error> {
    let result = scenario.engine()?.integrate(scenario.grid.seed);
    if let Err(Error::Diverged { snapshot, .. }) = &result {
        let path = out.join("divergence_snapshot.json");
        write_json(&path, &json!(snapshot))?;
        eprintln!("diagnostic snapshot written to {}", path.display());
    }
    result
}

fn describe_peaks(report: &SpectrumReport) -> String {
    let fits = report.fitted();
    if fits.is_empty() {
        return "no fitted peaks".into();
    }
    let list: Vec<String> = fits
        .iter()
        .map(|p| format!("{:+.2} Hz (hwhm {:.2})", p.f0, p.hwhm))
        .collect();
    format!("peaks {}", list.join(", "))
}

fn simulate(common: &Common, binary: bool, unmonitored: bool) -> Result<(), Error> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.grid.seed = s;
    }
    if unmonitored {
        cfg.monitored = false;
    }
    let scenario = cfg.resolve()?;
    let out = out_dir(common)?;
    let record = integrate(&scenario, out)?;
    record.write_csv(BufWriter::new(File::create(out.join("trajectory.csv"))?))?;
    if binary {
        record.write_binary(BufWriter::new(File::create(out.join("trajectory.bin"))?))?;
    }
    let analysis = analyze_record(&record, &scenario.analysis).ok();
    let line = match &analysis {
        Some((_, report)) => describe_peaks(report),
        None => "no spectrum (detection window too short)".into(),
    };
    write_json(
        &out.join("summary.json"),
        &summary(
            "simulate",
            &scenario,
            json!({ "seed": scenario.grid.seed, "samples": record.len(), "spectrum": analysis.map(|a| a.1) }),
        ),
    )?;
    println!("simulate: {} samples, {line}", record.len());
    Ok(())
}

fn read_record(path: &Path) -> Result<TrajectoryRecord, Error> {
    let file = BufReader::new(File::open(path).map_err(|e| Error::config("--record", format!("{}: {e}", path.display())))?);
    if path.extension().is_some_and(|e| e == "bin") {
        TrajectoryRecord::read_binary(file)
    } else {
        TrajectoryRecord::read_csv(file)
    }
}

fn spectrum(common: &Common, stored: Option<&Path>) -> Result<(), Error> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.grid.seed = s;
    }
    let scenario = cfg.resolve()?;
    let record = match stored {
        Some(p) => Some(read_record(p)?),
        None => None,
    };
    let out = out_dir(common)?;
    let record = match record {
        Some(r) => r,
        None => integrate(&scenario, out)?,
    };
    let (psd, report) = analyze_record(&record, &scenario.analysis)?;
    write_psd_csv(&psd, BufWriter::new(File::create(out.join("psd.csv"))?))?;
    write_json(&out.join("peaks.json"), &json!(report))?;
    write_json(
        &out.join("summary.json"),
        &summary(
            "spectrum",
            &scenario,
            json!({ "seed": record.meta.seed, "record_hash": record.meta.config_hash, "spectrum": report }),
        ),
    )?;
    let pair = report
        .pairs
        .first()
        .map(|p| format!(", center {:+.3} Hz, half-difference {:.3} Hz", p.center, p.half_difference))
        .unwrap_or_default();
    println!("spectrum: {}{pair}", describe_peaks(&report));
    Ok(())
}

fn allan(common: &Common, trajectories: Option<usize>, t_c: Option<f64>) -> Result<(), Error> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.batch.master_seed = s;
    }
    if let Some(n) = trajectories {
        cfg.batch.n_trajectories = n;
    }
    if let Some(t) = t_c {
        cfg.batch.t_c_s = t;
    }
    let scenario = cfg.resolve()?;
    let out = out_dir(common)?;
    let batch = scenario.batch;
    let result = run_batch(&scenario, &batch)?;

    let mut w = BufWriter::new(File::create(out.join("frequencies.csv"))?);
    writeln!(w, "index,center_hz,half_diff_hz,fit_ok")?;
    for o in &result.outcomes {
        let (c, h) = o.pair.map_or((f64::NAN, f64::NAN), |p| (p.center, p.half_difference));
        writeln!(w, "{},{c:.16e},{h:.16e},{}", o.index, o.fit_ok())?;
    }
    w.flush()?;

    let stats = batch_allan(&result, batch.t_c, scenario.params.omega_a_abs, batch.groups)?;
    write_allan_csv(&stats.center.allan, BufWriter::new(File::create(out.join("allan.csv"))?))?;
    write_allan_csv(
        &stats.half_difference.allan,
        BufWriter::new(File::create(out.join("allan_half_difference.csv"))?),
    )?;
    let seeds: Vec<u64> = result.outcomes.iter().map(|o| o.seed).collect();
    let errors: Vec<Value> = result
        .outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| json!({ "index": o.index, "error": e })))
        .collect();
    write_json(
        &out.join("summary.json"),
        &summary(
            "allan",
            &scenario,
            json!({
                "master_seed": batch.master_seed,
                "seeds": seeds,
                "trajectories": batch.n_trajectories,
                "failed": result.failed,
                "failed_fits": result.failed_fits,
                "errors": errors,
                "t_c_s": batch.t_c,
                "center": stats.center,
                "half_difference": stats.half_difference,
            }),
        ),
    )?;
    let coef = |f: &Option<superrad::analysis::AllanFit>| f.map_or("n/a".to_string(), |f| format!("{:.3e}", f.coefficient));
    println!(
        "allan: {} trajectories ({} failed), center c = {}/sqrt(tau/s), half-difference c = {}/sqrt(tau/s)",
        batch.n_trajectories,
        result.failed,
        coef(&stats.center.fit),
        coef(&stats.half_difference.fit)
    );
    Ok(())
}

fn sweep(common: &Common, variable: Option<Variable>, values: Option<Vec<f64>>) -> Result<(), Error> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.grid.seed = s;
    }
    let base = cfg.sweep.clone();
    let variable = match (variable, &base) {
        (Some(Variable::Theta), _) => SweepVariable::Theta,
        (Some(Variable::BField), _) => SweepVariable::BFieldGauss,
        (None, Some(b)) => b.variable,
        (None, None) => return Err(Error::config("sweep.variable", "no sweep in the config; pass --variable")),
    };
    let values = values
        .or_else(|| base.map(|b| b.values))
        .ok_or_else(|| Error::config("sweep.values", "no sweep values; pass --values"))?;
    let spec = SweepSpec { variable, values };
    spec.validate()?;
    for &v in &spec.values {
        spec.apply(&cfg, v).resolve()?;
    }
    cfg.sweep = Some(superrad::config::SweepSection {
        variable,
        values: spec.values.clone(),
    });
    let scenario = cfg.resolve()?;
    let out = out_dir(common)?;
    let points = run_sweep(&cfg, &spec, cfg.batch.workers)?;
    write_sweep_csv(&points, BufWriter::new(File::create(out.join("sweep.csv"))?))?;
    write_json(&out.join("summary.json"), &summary("sweep", &scenario, json!({ "points": points })))?;
    let failed = points.iter().filter(|p| p.metrics.is_none()).count();
    let best = points
        .iter()
        .filter_map(|p| p.metrics.map(|m| (p.value, m)))
        .max_by(|a, b| a.1.peak.total_cmp(&b.1.peak));
    let best = best.map_or(String::new(), |(v, m)| {
        format!(", largest peak n = {:.3e} at value {v} (t = {:.4} s)", m.peak, m.t_peak)
    });
    println!("sweep: {} points ({failed} failed){best}", points.len());
    Ok(())
}

fn oracle(common: &Common) -> Result<(), Error> {
    let scenario = load(common)?.resolve()?;
    let p = &scenario.params;
    let kappa = p.kappa();
    let drive = scenario.schedule.stages.iter().find_map(|s| s.drive().copied());
    let n_ss = drive.map(|d| driven_photon_number(p.kappa1, kappa, d.omega_m));
    let a_cav = n_ss.map(f64::sqrt);
    let delta_b = zeeman_splitting(scenario.config.atoms.b_field_gauss)?;
    let spin_f = superrad::model::HalfInt::from_f64(scenario.config.atoms.spin_f).unwrap_or(SPIN_F_SR87);
    let rows: Vec<Value> = scenario
        .ensembles
        .iter()
        .map(|e| {
            let gamma = purcell_rate(e.m_f, p.g0, spin_f, delta_b, kappa);
            let rabi = a_cav.map(|a| {
                let r = rabi_oracle(a, p.g0, spin_f, e.m_f, delta_b, 0.0);
                let omega = e.m_f.value().abs() * r.omega0;
                let nu = a * e.m_f.value() * p.g0 / (spin_f.value() * (spin_f.value() + 1.0)).sqrt();
                json!({ "rabi_hz": omega / std::f64::consts::TAU, "max_excitation": (2.0 * nu / omega).powi(2) })
            });
            json!({
                "m_f": e.label(),
                "n_atoms": e.n_atoms,
                "detuning_hz": e.detuning / std::f64::consts::TAU,
                "coupling_hz": e.coupling / std::f64::consts::TAU,
                "purcell_rate_per_s": gamma,
                "collective_rate_per_s": gamma * e.n_atoms,
                "rabi": rabi,
            })
        })
        .collect();
    let out = out_dir(common)?;
    write_json(
        &out.join("summary.json"),
        &summary(
            "oracle",
            &scenario,
            json!({ "driven_photon_number": n_ss, "cavity_amplitude": a_cav, "ensembles": rows }),
        ),
    )?;
    match n_ss {
        Some(n) => println!("oracle: steady-state driven photon number {n:.1}"),
        None => println!("oracle: no drive stage"),
    }
    println!("{:>6} {:>12} {:>16} {:>14}", "m_F", "detuning_Hz", "Purcell_rate_1/s", "Rabi_Hz");
    for r in &rows {
        println!(
            "{:>6} {:>12.3} {:>16.6e} {:>14}",
            r["m_f"].as_str().unwrap_or(""),
            r["detuning_hz"].as_f64().unwrap_or(f64::NAN),
            r["purcell_rate_per_s"].as_f64().unwrap_or(f64::NAN),
            r["rabi"]["rabi_hz"].as_f64().map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    Ok(())
}
