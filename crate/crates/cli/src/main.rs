use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mveb::data::{generate, linear_probe_with, read_dataset, write_dataset, ViewPairBatch};
use mveb::encoder::{load_checkpoint, save_checkpoint, EncoderModel};
use mveb::kernels::{BandwidthMode, KernelFamily};
use mveb::train::{beta_sweep, probe_model, summary_csv, train_with_observer, LossKind, TrainConfig, Wiring};
use mveb::verify::{verify_suite, Comparison, VerifyOptions};
use mveb::{Error, Matrix};

#[derive(Parser)]
#[command(name = "mveb", version, about = "Multi-view entropy bottleneck trainer and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one encoder; metrics go out as one JSON object per line.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Write the trained online encoder here.
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
        /// Write the one-row CSV summary here instead of stderr.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train once per β and print a CSV comparison table.
    SweepBeta {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Comma-separated β values.
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Run the property suite. Exit 1 on any failure, 2 on a config error.
    Verify {
        #[command(flatten)]
        out: OutArg,
        /// Negate all scores (mutation fixture; checks should fail).
        #[arg(long)]
        flip_score_sign: bool,
        /// Ridge used by the Stein checks.
        #[arg(long)]
        ridge_override: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Linear-probe accuracy of a saved encoder or of raw inputs.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Encoder checkpoint to evaluate.
        #[arg(long, required_unless_present = "raw")]
        checkpoint: Option<PathBuf>,
        /// Probe the raw view-1 inputs instead of embeddings.
        #[arg(long, conflicts_with = "checkpoint")]
        raw: bool,
        /// Use a dataset dump (first half trains the probe, second half tests)
        /// instead of the config's generated evaluation sets.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    DumpConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Write a synthetic dataset dump for the configured generator.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of view pairs.
        #[arg(long)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OutArg {
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WiringArg {
    Symmetric,
    MomentumTarget,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mveb,
    Infonce,
    Decorrelation,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Vmf,
    Rbf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandwidthModeArg {
    Fixed,
    MedianHeuristic,
}

/// Every field is optional; set ones override the config file, which
/// overrides the defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file whose keys match TrainConfig field names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sgd_momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    wiring: Option<WiringArg>,
    #[arg(long)]
    ema_base: Option<f64>,
    #[arg(long, value_enum)]
    loss_kind: Option<LossArg>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    decorrelation_lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    probe_every: Option<usize>,
    #[arg(long)]
    eval_size: Option<usize>,
    #[arg(long, value_enum)]
    stein_kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    stein_bandwidth_mode: Option<BandwidthModeArg>,
    #[arg(long)]
    stein_bandwidth: Option<f64>,
    #[arg(long)]
    stein_bandwidth_floor: Option<f64>,
    #[arg(long)]
    ridge_eta: Option<f64>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    shared_scale: Option<f64>,
    #[arg(long)]
    nuisance_scale: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    jitter_scale: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    probe_steps: Option<usize>,
    #[arg(long)]
    probe_lr: Option<f64>,
    #[arg(long)]
    probe_l2: Option<f64>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        set(&mut c.beta, self.beta);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.steps, self.steps);
        set(&mut c.lr, self.lr);
        set(&mut c.sgd_momentum, self.sgd_momentum);
        set(&mut c.weight_decay, self.weight_decay);
        set(
            &mut c.wiring,
            self.wiring.map(|w| match w {
                WiringArg::Symmetric => Wiring::Symmetric,
                WiringArg::MomentumTarget => Wiring::MomentumTarget,
            }),
        );
        set(&mut c.ema_base, self.ema_base);
        set(
            &mut c.loss_kind,
            self.loss_kind.map(|l| match l {
                LossArg::Mveb => LossKind::Mveb,
                LossArg::Infonce => LossKind::Infonce,
                LossArg::Decorrelation => LossKind::Decorrelation,
            }),
        );
        set(&mut c.temperature, self.temperature);
        set(&mut c.decorrelation_lambda, self.decorrelation_lambda);
        set(&mut c.seed, self.seed);
        set(&mut c.hidden, self.hidden.clone());
        set(&mut c.output_dim, self.output_dim);
        set(&mut c.log_every, self.log_every);
        set(&mut c.probe_every, self.probe_every);
        set(&mut c.eval_size, self.eval_size);
        set(
            &mut c.stein.kernel.family,
            self.stein_kernel.map(|k| match k {
                KernelArg::Vmf => KernelFamily::Vmf,
                KernelArg::Rbf => KernelFamily::Rbf,
            }),
        );
        set(
            &mut c.stein.kernel.mode,
            self.stein_bandwidth_mode.map(|m| match m {
                BandwidthModeArg::Fixed => BandwidthMode::Fixed,
                BandwidthModeArg::MedianHeuristic => BandwidthMode::MedianHeuristic,
            }),
        );
        set(&mut c.stein.kernel.bandwidth, self.stein_bandwidth);
        set(&mut c.stein.kernel.floor, self.stein_bandwidth_floor);
        set(&mut c.stein.ridge_eta, self.ridge_eta);
        set(&mut c.data.num_classes, self.num_classes);
        set(&mut c.data.latent_dim, self.latent_dim);
        set(&mut c.data.input_dim, self.input_dim);
        set(&mut c.data.shared_scale, self.shared_scale);
        set(&mut c.data.nuisance_scale, self.nuisance_scale);
        set(&mut c.data.noise_scale, self.noise_scale);
        set(&mut c.data.jitter_scale, self.jitter_scale);
        set(&mut c.data.seed, self.data_seed);
        set(&mut c.probe.steps, self.probe_steps);
        set(&mut c.probe.lr, self.probe_lr);
        set(&mut c.probe.l2, self.probe_l2);
        c.validate()?;
        Ok(c)
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Train {
            cfg,
            out,
            save_checkpoint: ckpt,
            summary,
        } => {
            let cfg = cfg.resolve()?;
            let mut w = open_out(&out.out)?;
            let mut io_err = None;
            let outcome = train_with_observer(&cfg, |rec| {
                if io_err.is_none() {
                    io_err = writeln!(w, "{}", rec.to_json_line()).err();
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            w.flush()?;
            if let Some(path) = ckpt {
                let mut f = BufWriter::new(File::create(&path)?);
                save_checkpoint(&outcome.model, &mut f)?;
                f.flush()?;
            }
            let table = summary_csv(&[outcome.final_metrics]);
            match summary {
                Some(p) => write_file(&p, &table)?,
                None => eprint!("{table}"),
            }
            Ok(0)
        }
        Command::SweepBeta { cfg, out, betas } => {
            let cfg = cfg.resolve()?;
            let rows = beta_sweep(&cfg, &betas)?;
            let mut w = open_out(&out.out)?;
            write!(w, "{}", summary_csv(&rows))?;
            w.flush()?;
            Ok(0)
        }
        Command::Verify {
            out,
            flip_score_sign,
            ridge_override,
            seed,
        } => {
            let report = verify_suite(&VerifyOptions {
                flip_score_sign,
                ridge_override,
                seed,
            });
            let mut w = open_out(&out.out)?;
            for r in &report.results {
                let op = match r.comparison {
                    Comparison::Below => "<",
                    Comparison::AtMost => "<=",
                    Comparison::Above => ">",
                };
                let status = if r.pass { "PASS" } else { "FAIL" };
                write!(
                    w,
                    "{status} {:<13} {}: observed {:.3e} (bound {op} {:.3e})",
                    r.module, r.property, r.observed, r.bound
                )?;
                match &r.error {
                    Some(e) => writeln!(w, " error: {e}")?,
                    None => writeln!(w)?,
                }
            }
            for c in &report.config_errors {
                writeln!(w, "CONFIG {:<13} {}: {}", c.module, c.property, c.message)?;
            }
            let failed = report.failures().count();
            writeln!(
                w,
                "{} checks, {} failed, {} config errors",
                report.results.len(),
                failed,
                report.config_errors.len()
            )?;
            w.flush()?;
            Ok(report.exit_code() as u8)
        }
        Command::Probe {
            cfg,
            out,
            checkpoint,
            raw,
            dataset,
        } => {
            let cfg = cfg.resolve()?;
            let model: Option<EncoderModel<f64>> = match &checkpoint {
                Some(p) => Some(load_checkpoint(BufReader::new(File::open(p)?))?),
                None => None,
            };
            let mut w = open_out(&out.out)?;
            match (dataset, model) {
                (None, Some(model)) if !raw => {
                    let m = probe_model(&cfg, &model)?;
                    writeln!(w, "{}", serde_json::to_string(&m).map_err(|e| Failure::Run(e.to_string()))?)?;
                }
                (dataset, model) => {
                    let batch: ViewPairBatch<f64> = match dataset {
                        Some(p) => read_dataset(BufReader::new(File::open(p)?))?.1,
                        None => generate(&cfg.data, 2 * cfg.eval_size)?,
                    };
                    let n = batch.len() / 2;
                    let feats = match &model {
                        Some(m) => m.embed(&batch.v1)?,
                        None => batch.v1.clone(),
                    };
                    let split = |lo: usize, hi: usize| -> Result<Matrix<f64>, Failure> {
                        let rows: Vec<Vec<f64>> = (lo..hi).map(|i| feats.row(i).to_vec()).collect();
                        Ok(Matrix::from_rows(&rows)?)
                    };
                    let acc = linear_probe_with(
                        &split(0, n)?,
                        &batch.labels[..n],
                        &split(n, batch.len())?,
                        &batch.labels[n..],
                        &cfg.probe,
                    )?;
                    writeln!(w, "{{\"probe_accuracy\":{acc},\"train\":{n},\"test\":{}}}", batch.len() - n)?;
                }
            }
            w.flush()?;
            Ok(0)
        }
        Command::DumpConfig { cfg, out } => {
            let cfg = cfg.resolve()?;
            let text = toml::to_string(&cfg).map_err(|e| Failure::Run(e.to_string()))?;
            let mut w = open_out(&out.out)?;
            write!(w, "{text}")?;
            w.flush()?;
            Ok(0)
        }
        Command::GenData { cfg, m, out } => {
            let cfg = cfg.resolve()?;
            let batch: ViewPairBatch<f64> = generate(&cfg.data, m)?;
            let mut f = BufWriter::new(File::create(&out)?);
            write_dataset(&batch, &cfg.data, &mut f)?;
            f.flush()?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("config error", m),
                Failure::Run(m) => ("error", m),
            };
            eprintln!("mveb: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
