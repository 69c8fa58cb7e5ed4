use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use fedldp::checkpoint::{load_params, save_batch, save_params};
use fedldp::metrics::psi_robustness;
use fedldp::sweep::describe_trend;
use fedldp::{
    certify_equivalence, compute_alpha_thresholds, fgsm_batch, fuzz_equivalence, randomized_response_matrix, run_sweep,
    run_training, AttackConfig, BandOracle, BoxDomain, DiscreteMechanism, EquivalenceRecord, Error, ExperimentConfig,
    FuzzSummary, LabeledBatch, LabelingOracle, OracleLabel, PrivacyBudget, RoundLog,
};

#[derive(Parser, Debug)]
#[command(
    name = "fedldp",
    version,
    about = "Federated learning under local differential privacy: certification, training, attacks and sweeps"
)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; its meaning depends on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuzz the LDP / hockey-stick equivalence and check named mechanisms.
    Certify {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// One federated training run; writes the round log (--out) and a checkpoint.
    Train {
        /// Budget for this run, e.g. 1.0 or inf. Defaults to the first grid value.
        #[arg(long)]
        epsilon: Option<PrivacyBudget>,
        /// Defaults to the round log path with a .ckpt extension.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// FGSM on the test split against a checkpoint; writes the adversarial batch (--out).
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the config's alpha.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// α₁/α₂ grid search around a point for the two-class band oracle on [−1,1]².
    Thresholds {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0")]
        point: Vec<f64>,
        #[arg(long, default_value_t = BandOracle::DEFAULT_BAND)]
        band: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// The full ε sweep; writes the detail CSV (--out) and its summary.
    Sweep,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        ensure_parent(path)?;
        fs::write(path, format!("{text}\n")).map_err(Error::from)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NamedCheck {
    mechanism: String,
    epsilon: f64,
    expected: bool,
    record: EquivalenceRecord,
}

#[derive(Serialize)]
struct CertifyReport {
    fuzz: FuzzSummary,
    named: Vec<NamedCheck>,
    passed: bool,
}

fn certify(cli: &Cli, instances: usize) -> anyhow::Result<()> {
    let seed = cli.seed.unwrap_or(ExperimentConfig::default().master_seed);
    let fuzz = fuzz_equivalence(instances, seed)?;
    let ln3 = 3f64.ln();
    let cases: Vec<(String, DiscreteMechanism, f64, bool)> = vec![
        (
            "randomized_response(k=2, eps=ln 3)".into(),
            randomized_response_matrix(2, PrivacyBudget::finite(ln3)?)?,
            ln3,
            true,
        ),
        (
            "randomized_response(k=2, eps=ln 3)".into(),
            randomized_response_matrix(2, PrivacyBudget::finite(ln3)?)?,
            2.9f64.ln(),
            false,
        ),
        (
            "randomized_response(k=3, eps=1)".into(),
            randomized_response_matrix(3, PrivacyBudget::finite(1.0)?)?,
            1.0,
            true,
        ),
        ("identity(k=3)".into(), DiscreteMechanism::identity(3), 5.0, false),
    ];
    let mut named = Vec::new();
    for (mechanism, m, epsilon, expected) in cases {
        let record = certify_equivalence(&m, PrivacyBudget::finite(epsilon)?)?;
        named.push(NamedCheck { mechanism, epsilon, expected, record });
    }
    let passed = fuzz.disagreements.is_empty() && named.iter().all(|c| c.record.agree && c.record.ldp == c.expected);
    print_json(&CertifyReport { fuzz, named, passed }, cli.out.as_deref())?;
    if !passed {
        bail!("equivalence certificate failed");
    }
    Ok(())
}

fn train(cli: &Cli, epsilon: Option<PrivacyBudget>, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let budget = epsilon.unwrap_or(cfg.epsilon_grid[0]);
    let (train, _) = cfg.load_splits()?;
    let run = run_training(&train.data, &cfg.round_config(budget), cfg.master_seed)?;

    let log_path = cli.out.clone().unwrap_or_else(|| PathBuf::from("results/train.csv"));
    ensure_parent(&log_path)?;
    let mut text = format!("{}\n", RoundLog::CSV_HEADER);
    for row in &run.log {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    fs::write(&log_path, text).map_err(Error::from)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| log_path.with_extension("ckpt"));
    ensure_parent(&ckpt)?;
    save_params(&ckpt, &run.params)?;

    if let Some(last) = run.log.last() {
        eprintln!(
            "eps = {budget}: round {} loss {:.4} accuracy {:.4}",
            last.round, last.global_loss, last.global_accuracy
        );
    }
    eprintln!("round log: {}\ncheckpoint: {}", log_path.display(), ckpt.display());
    Ok(())
}

fn attack(cli: &Cli, checkpoint: &Path, alpha: Option<f64>) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let params = load_params(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (_, test) = cfg.load_splits()?;
    let config = AttackConfig::linf(alpha.unwrap_or(cfg.alpha))?;
    let adv = fgsm_batch(&params, &test.data, &config)?;
    let batch = LabeledBatch::new(adv, test.data.labels().to_vec())?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results/adversarial.bin"));
    ensure_parent(&out)?;
    save_batch(&out, &batch)?;
    let measurement = psi_robustness(&params, &test.data, &config)?;
    if !measurement.psi.is_finite() {
        return Err(Error::Numeric("non-finite robustness score".into()).into());
    }
    print_json(&measurement, None)?;
    eprintln!("adversarial batch: {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ThresholdReport {
    point: Vec<f64>,
    label: usize,
    band: f64,
    step: f64,
    alpha1: Option<f64>,
    alpha2: Option<f64>,
}

fn thresholds(cli: &Cli, point: &[f64], band: f64, step: f64) -> anyhow::Result<()> {
    if point.len() != 2 {
        return Err(Error::InvalidArgument(format!("--point needs two coordinates, got {}", point.len())).into());
    }
    if !(0.0..1.0).contains(&band) {
        return Err(Error::InvalidArgument(format!("--band must lie in [0, 1), got {band}")).into());
    }
    let oracle = BandOracle { band };
    let label = match oracle.label(point) {
        OracleLabel::Label(l) => l,
        OracleLabel::Unlabelable => {
            return Err(Error::InvalidArgument(format!("{point:?} lies inside the unlabelable band")).into())
        }
    };
    let domain: BoxDomain = BandOracle::domain();
    if !domain.contains(point) {
        return Err(Error::InvalidArgument(format!("{point:?} lies outside [-1, 1]^2")).into());
    }
    let t = compute_alpha_thresholds(&oracle, point, label, &domain, step)?;
    let report = ThresholdReport { point: point.to_vec(), label, band, step, alpha1: t.alpha1, alpha2: t.alpha2 };
    print_json(&report, cli.out.as_deref())
}

fn sweep(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    let started = std::time::Instant::now();
    let outcome = run_sweep(&cfg)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", describe_trend(&outcome.summary))?;
    writeln!(
        stdout,
        "{} runs in {:.1} s\ndetail: {}\nsummary: {}",
        outcome.reports.len(),
        started.elapsed().as_secs_f64(),
        outcome.detail_path.display(),
        outcome.summary_path.display()
    )?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Format(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify { instances } => certify(&cli, *instances),
        Command::Train { epsilon, checkpoint } => train(&cli, *epsilon, checkpoint.as_deref()),
        Command::Attack { checkpoint, alpha } => attack(&cli, checkpoint, *alpha),
        Command::Thresholds { point, band, step } => thresholds(&cli, point, *band, *step),
        Command::Sweep => sweep(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
