use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hycas::attacks::{robust_accuracy, AttackConfig, AttackMethod};
use hycas::audit::{audit_network, AuditConfig};
use hycas::block::HycasNetwork;
use hycas::certify::{certify_batch, LipMode, McConfig};
use hycas::data::{generate, Dataset, Pattern};
use hycas::io::{self, RADIUS_GRID};
use hycas::train::{train, TrainMode};
use hycas::HycasError;

#[derive(Parser)]
#[command(name = "hycas", version, about = "Train, certify, attack and audit randomized Lipschitz networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Certified,
    Adversarial,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pgd,
    Apgd,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        count: usize,
        /// Image size as `HxW` or a single side length.
        #[arg(long, default_value = "8x8")]
        hw: String,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// `blob-stripe` or `quadrant`.
        #[arg(long, default_value = "blob-stripe")]
        pattern: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network and write a checkpoint plus `<checkpoint>.history.csv`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Overrides the `mode` key of the config file.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Certify every `--every`-th sample with both branches.
    Certify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        sigma: f64,
        #[arg(long, default_value_t = 100)]
        n0: u64,
        /// Defaults to 2000, or 100000 with `--paper-scale`.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 0.001)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long)]
        paper_scale: bool,
        /// Average the margin branch over this many noise states instead of freezing one.
        #[arg(long)]
        expected_samples: Option<usize>,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Robust accuracy under an ℓ∞ attack.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8.0 / 255.0)]
        eps: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        /// Signed-gradient step; defaults to `eps / 4`.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, value_enum, default_value = "apgd")]
        method: Method,
        #[arg(long)]
        out_report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check kernel norms and sampled Lipschitz ratios against their bounds.
    Audit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 32)]
        mc_samples: usize,
        #[arg(long)]
        out_report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &HycasError) -> u8 {
    match e {
        HycasError::Divergence(_) => 3,
        HycasError::InvalidModel(_) => 4,
        HycasError::AuditViolation { .. } => 5,
        _ => 2,
    }
}

fn with_path(path: &Path, e: HycasError) -> HycasError {
    match e {
        HycasError::Io(io) => HycasError::Config(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> hycas::Result<()> {
    fs::write(path, text).map_err(|e| with_path(path, e.into()))
}

fn read_data(path: &Path) -> hycas::Result<Dataset> {
    io::read_dataset(path).map_err(|e| with_path(path, e))
}

fn load(path: &Path) -> hycas::Result<HycasNetwork<f64>> {
    io::load_network(path).map_err(|e| with_path(path, e))
}

fn load_calibrated(path: &Path) -> hycas::Result<HycasNetwork<f64>> {
    let net = load(path)?;
    if !net.is_calibrated() {
        return Err(HycasError::InvalidModel(format!("{} is not calibrated", path.display())));
    }
    net.network_lip_bound()?;
    Ok(net)
}

fn parse_hw(s: &str) -> hycas::Result<(usize, usize)> {
    let bad = || HycasError::Config(format!("bad --hw '{s}', expected HxW"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            Ok((v, v))
        }
    }
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn run(cli: Cli) -> hycas::Result<()> {
    match cli.command {
        Command::GenData { out, count, hw, classes, pattern, seed } => {
            let d = generate(Pattern::parse(&pattern)?, count, parse_hw(&hw)?, classes, seed)?;
            write(&out, io::encode_dataset(&d)?)?;
            println!("wrote {} samples to {}", d.len(), out.display());
        }
        Command::Train { config, data, out_checkpoint, mode } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| HycasError::Config(format!("cannot read config {}: {e}", config.display())))?;
            let rc = io::parse_config(&text)?;
            let data = read_data(&data)?;
            let mode = match mode {
                Some(Mode::Certified) => TrainMode::Certified,
                Some(Mode::Adversarial) => TrainMode::Adversarial,
                None => rc.mode.unwrap_or(TrainMode::Certified),
            };
            let mut nc = rc.network.clone();
            nc.input_hw = (data.height, data.width);
            nc.in_channels = data.channels;
            nc.num_classes = data.num_classes;
            let mut net = HycasNetwork::<f64>::new(nc)?;
            let history = train(&mut net, &data, &rc.train_config(mode), mode)?;
            write(&out_checkpoint, io::network_checkpoint(&net).encode()?)?;
            write(&history_path(&out_checkpoint), io::history_csv(&history))?;
            let last = history.epochs.last();
            println!(
                "trained {} epochs: loss {:.4}, train accuracy {:.4}, gamma {:.4}, bound {:.4}",
                history.epochs.len(),
                last.map_or(f64::NAN, |e| e.mean_loss),
                last.map_or(f64::NAN, |e| e.train_accuracy),
                history.gamma,
                history.lip_bound
            );
        }
        Command::Certify {
            checkpoint,
            data,
            sigma,
            n0,
            n,
            alpha,
            every,
            paper_scale,
            expected_samples,
            out_report,
            seed,
        } => {
            if every == 0 {
                return Err(HycasError::Config("--every must be positive".into()));
            }
            let net = load_calibrated(&checkpoint)?;
            let data = read_data(&data)?;
            let n = n.unwrap_or(if paper_scale { 100_000 } else { 2000 });
            let lip_mode = match expected_samples {
                Some(samples) => LipMode::ExpectedLcb { samples },
                None => LipMode::Frozen,
            };
            let cfg = McConfig { n0, n, alpha, sigma, lip_mode };
            let idx: Vec<usize> = (0..data.len()).step_by(every).collect();
            let mut samples = Vec::with_capacity(idx.len());
            if !idx.is_empty() {
                let (xs, ys) = data.batch::<f64>(&idx);
                let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
                let certs = certify_batch(&net, &xs, &ids, &cfg, seed)?;
                samples = idx.iter().zip(ys).zip(certs).map(|((&i, y), c)| (i, y, c)).collect();
            }
            let mut summary = vec![format!("certified {} of {} samples, sigma = {sigma}, n0 = {n0}, n = {n}, alpha = {alpha}", samples.len(), data.len())];
            summary.push("radius_l2,certified_accuracy_rs,certified_accuracy_lip,certified_accuracy_best".into());
            for (r, rs, lip, best) in io::certified_accuracy(&samples, &RADIUS_GRID) {
                summary.push(format!("{r},{rs},{lip},{best}"));
            }
            summary.push("branch sample_index,rs_radius_l2,lip_radius_l2".into());
            for (i, _, c) in &samples {
                summary.push(format!("branch {i},{},{}", c.rs.radius_l2, c.lip.radius_l2));
            }
            write(&out_report, io::write_report(&io::certificate_rows(&samples), &summary))?;
            let acc0 = io::certified_accuracy(&samples, &[0.0])[0].3;
            println!("certified {} samples; certified accuracy at r=0: {acc0:.4}", samples.len());
        }
        Command::Attack { checkpoint, data, eps, steps, restarts, step_size, method, out_report, seed } => {
            let net = load_calibrated(&checkpoint)?;
            let data = read_data(&data)?;
            let method = match method {
                Method::Pgd => AttackMethod::Pgd,
                Method::Apgd => AttackMethod::Apgd,
            };
            let cfg = AttackConfig {
                epsilon: eps,
                step: step_size.unwrap_or(eps / 4.0),
                iters: steps,
                restarts,
                random_init: true,
                seed,
            };
            let (xs, ys) = data.all::<f64>();
            let (robust, outcomes) =
                if data.is_empty() { (0.0, Vec::new()) } else { robust_accuracy(&net, &xs, &ys, &cfg, method, seed)? };
            let clean = outcomes.iter().filter(|o| o.clean_correct).count() as f64 / outcomes.len().max(1) as f64;
            let summary = vec![
                format!("method = {}, eps = {eps}, steps = {steps}, restarts = {restarts}", method.name()),
                format!("clean_accuracy = {clean}"),
                format!("robust_accuracy = {robust}"),
            ];
            write(&out_report, io::write_report(&io::attack_rows(&outcomes, method, eps), &summary))?;
            println!("clean accuracy {clean:.4}, robust accuracy {robust:.4}");
        }
        Command::Audit { checkpoint, pairs, mc_samples, out_report, seed } => {
            let net = load(&checkpoint)?;
            let report = audit_network(&net, &AuditConfig { pairs, mc_samples, seed, ..AuditConfig::default() })?;
            let text = report.render();
            match &out_report {
                Some(p) => write(p, &text)?,
                None => print!("{text}"),
            }
            if let Some(e) = report.to_error() {
                return Err(e);
            }
            println!("audit passed: bound {:.6}, gamma {:.6}", report.network_bound.unwrap_or(f64::NAN), report.gamma);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let threads = std::env::var("HYCAS_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
