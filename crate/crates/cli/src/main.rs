//! `qbe`: simulate acquisitions, fit them, and run the Monte Carlo experiments.
//!
//! Every subcommand reads an optional TOML scenario file (`--config`) and
//! accepts `--seed` and `--out` overrides. Exit status is 0 on success,
//! 2 for bad input and 3 when an estimation or experiment fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qbe_core::baseline::{dft_frequency_guess, sinefit3, sinefit4};
use qbe_core::estimator::{cdf_to_csv, qbe_fit_partitioned};
use qbe_core::harness::{run_cdf_experiment, run_motivating_example, run_scenario, Frequency, ScenarioConfig};
use qbe_core::partition::async_partition;
use qbe_core::quantizer::{compute_inl, servo_calibrate, NoisyAdc, QuantizerModel, ServoConfig};
use qbe_core::search::qbe_fit_unknown_freq;
use qbe_core::signal::{acquire_with_noise, AcquisitionRecord, BasisSet, ParamVector, RecordMeta};
use qbe_core::{Error, Result};

#[derive(Parser)]
#[command(name = "qbe", version, about = "Quantile-based estimation of periodic signals from ADC codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out_dir`.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Acquire one record from the configured converter and signal.
    Simulate,
    /// Fit a record written by `simulate` with QBE and, if enabled, the sine fit.
    Fit {
        /// Record sidecar (`record.toml`) or its CSV.
        #[arg(long)]
        record: PathBuf,
        /// Also write the index partition as `partition.csv`.
        #[arg(long)]
        dump_partition: bool,
    },
    /// RMSE of QBE and LSE over the sigma and N grid.
    Sweep,
    /// Sine-fit error on ideal and displaced levels.
    Motivate,
    /// Noise CDF and density recovery.
    Cdf,
    /// Measure every transition level of a converter with a servo loop.
    Calibrate {
        /// Levels file of the converter; the configured quantizer when omitted.
        #[arg(long)]
        levels: Option<PathBuf>,
        /// Input noise during the measurement (Δ).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 200)]
        samples_per_step: usize,
        /// Final bisection width (Δ).
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Least-squares INL of a converter.
    Inl {
        /// Levels file; the configured quantizer when omitted.
        #[arg(long)]
        levels: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.run.out_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &ScenarioConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.run.out_dir)?;
    Ok(&cfg.run.out_dir)
}

fn read_levels(path: &Path) -> Result<QuantizerModel> {
    QuantizerModel::read(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn quantizer_for(cfg: &ScenarioConfig, levels: Option<&Path>) -> Result<QuantizerModel> {
    match levels {
        Some(p) => read_levels(p),
        None => cfg.build_quantizer(),
    }
}

fn simulate(cfg: &ScenarioConfig) -> Result<()> {
    let truth = cfg.build_quantizer()?;
    let believed = cfg.believed_quantizer(&truth)?;
    let step = truth.step();
    let basis = cfg.basis()?;
    let s = &cfg.signal;
    let theta: Vec<f64> = s.theta.iter().map(|v| v * step).collect();
    let sigma = Some(s.sigma[0] * step).filter(|&v| v > 0.0);
    let params = ParamVector::new(theta.clone(), sigma)?;
    let rec = acquire_with_noise(&params, &basis, s.lambda, s.samples[0], &truth, cfg.run.seed, s.noise)?;

    let dir = out_dir(cfg)?;
    rec.write_csv(dir.join("record.csv"))?;
    // The fit sees the levels the estimator is told about.
    believed.write(dir.join("levels.txt"))?;
    let meta = RecordMeta {
        lambda: s.lambda,
        seed: cfg.run.seed,
        samples: rec.len(),
        quantizer: "levels.txt".into(),
        theta: Some(theta),
        sigma,
        basis: Some(basis.name().into()),
    };
    std::fs::write(dir.join("record.toml"), meta.to_toml()?)?;
    println!("wrote {} samples to {}", rec.len(), dir.join("record.csv").display());
    Ok(())
}

fn fit(cfg: &ScenarioConfig, record: &Path, dump_partition: bool) -> Result<()> {
    let sidecar = record.with_extension("toml");
    let meta_text = std::fs::read_to_string(&sidecar)
        .map_err(|e| Error::Config(format!("{}: {e}", sidecar.display())))?;
    let meta = RecordMeta::from_toml(&meta_text)?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    let q = read_levels(&base.join(&meta.quantizer))?;
    let csv = base.join(sidecar.file_stem().unwrap_or_default()).with_extension("csv");
    let csv_text =
        std::fs::read_to_string(&csv).map_err(|e| Error::Config(format!("{}: {e}", csv.display())))?;
    let rec = AcquisitionRecord::from_csv(&csv_text, meta.lambda, meta.seed, q.codes())?;
    let basis = match &meta.basis {
        Some(name) => BasisSet::by_name(name)?,
        None => cfg.basis()?,
    };
    let dir = out_dir(cfg)?;

    let mut opts = cfg.qbe_options();
    if cfg.estimator.known_sigma {
        opts.sigma = Some(meta.sigma.ok_or_else(|| Error::Config("known_sigma needs sigma in the record".into()))?);
    }
    let fit = match cfg.estimator.frequency {
        Frequency::Known => {
            let part = async_partition(rec.len(), meta.lambda, opts.epsilon)?;
            if dump_partition {
                std::fs::write(dir.join("partition.csv"), part.to_csv(meta.lambda))?;
            }
            qbe_fit_partitioned(&rec, &basis, meta.lambda, &q, &opts, &part)?.0
        }
        Frequency::Unknown => {
            let mut uf = cfg.unknown_freq_options();
            uf.qbe = opts;
            let (fit, trace) = qbe_fit_unknown_freq(&rec, &basis, &q, &uf)?;
            trace.write_csv(dir.join("trace.csv"))?;
            if dump_partition {
                let part = async_partition(rec.len(), fit.lambda, opts.epsilon)?;
                std::fs::write(dir.join("partition.csv"), part.to_csv(fit.lambda))?;
            }
            fit
        }
    };
    fit.write_csv(&basis, dir.join("fit.csv"))?;
    std::fs::write(dir.join("cdf.csv"), cdf_to_csv(&fit.cdf_points))?;
    print!("{}", fit.to_csv(&basis));

    if cfg.estimator.lse && basis.name() == "sine" {
        let x = q.nominal().reconstruct(&rec.codes)?;
        let lse = match cfg.estimator.frequency {
            Frequency::Known => sinefit3(&x, meta.lambda)?,
            Frequency::Unknown => sinefit4(&x, dft_frequency_guess(&x)?, cfg.estimator.gamma)?,
        };
        lse.write_csv(dir.join("lse.csv"))?;
    }
    Ok(())
}

fn calibrate(cfg: &ScenarioConfig, levels: Option<&Path>, noise: f64, samples_per_step: usize, tolerance: f64) -> Result<()> {
    let model = quantizer_for(cfg, levels)?;
    let step = model.step();
    let mut adc = NoisyAdc::new(model.clone(), noise * step, cfg.run.seed)?;
    let servo = ServoConfig {
        samples_per_step,
        tolerance: tolerance * step,
    };
    let measured = servo_calibrate(&mut adc, &model.nominal(), servo)?;
    let dir = out_dir(cfg)?;
    measured.write(dir.join("levels.txt"))?;
    let worst = measured
        .levels()
        .iter()
        .zip(model.levels())
        .map(|(a, b)| (a - b).abs() / step)
        .fold(0.0, f64::max);
    println!("measured {} levels, max deviation {worst:.3e} step", measured.levels().len());
    Ok(())
}

fn inl(cfg: &ScenarioConfig, levels: Option<&Path>) -> Result<()> {
    let table = compute_inl(&quantizer_for(cfg, levels)?)?;
    let mut text = String::from("code,inl\n");
    for (i, v) in table.values.iter().enumerate() {
        text.push_str(&format!("{},{v:.9e}\n", i + 1));
    }
    let dir = out_dir(cfg)?;
    std::fs::write(dir.join("inl.csv"), text)?;
    println!("max |INL| {:.6} step", table.max_abs());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Fit { record, dump_partition } => fit(&cfg, &record, dump_partition),
        Command::Sweep => {
            let r = run_scenario(&cfg)?;
            r.write(out_dir(&cfg)?)?;
            for f in &r.failures {
                eprintln!(
                    "trial {} at sigma {} N {} ({}) failed: {}",
                    f.trial, f.sigma, f.samples, f.estimator, f.message
                );
            }
            print!("{}", r.to_csv());
            Ok(())
        }
        Command::Motivate => {
            let r = run_motivating_example(&cfg)?;
            r.write(out_dir(&cfg)?)?;
            print!("{}", r.to_csv());
            Ok(())
        }
        Command::Cdf => {
            let r = run_cdf_experiment(&cfg)?;
            r.write(out_dir(&cfg)?)?;
            println!("max |p_hat - phi| {:.4}", r.max_deviation());
            if let Some((mean, std)) = r.sigma_stats() {
                println!("sigma_hat over sweep: mean {mean:.4} std {std:.4} (step units)");
            }
            Ok(())
        }
        Command::Calibrate {
            levels,
            noise,
            samples_per_step,
            tolerance,
        } => calibrate(&cfg, levels.as_deref(), noise, samples_per_step, tolerance),
        Command::Inl { levels } => inl(&cfg, levels.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
