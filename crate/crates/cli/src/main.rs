use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use amlb::attack::{self, evaluate, labelled_windows, AttackModel};
use amlb::defense::{self, perturb, verify_billing, PrivacyLevel, SurrogateModel};
use amlb::ledger::Chain;
use amlb::neural::{load_weights, save_weights};
use amlb::sim::{self, ExperimentReport, Household, SimConfig};
use amlb::timeseries::{export_csv_many, ingest_csv, write_csv, LoadProfile};

mod render;

/// Timestamp of the first generated sample (2023-11-14T22:13:20Z).
const START_TS: i64 = 1_700_000_000;

#[derive(Parser)]
#[command(name = "amlb", version, about = "Smart-meter occupancy privacy testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic household load profiles as CSV.
    GenData(GenData),
    /// Train the feature-DNN occupancy attacker on labelled CSV data.
    TrainAttack(TrainAttack),
    /// Train a household LSTM surrogate, optionally from population weights.
    TrainSurrogate(TrainSurrogate),
    /// Perturb a household stream against a surrogate and check billing.
    Defend(Defend),
    /// Run the setup phase and write the resulting chain.
    ChainBuild(ChainBuild),
    /// Decode and validate a chain file.
    ChainVerify(ChainVerify),
    /// Run the full experiment and write a JSON report.
    RunExperiment(RunExperiment),
    /// Render a JSON report as a plain-text summary.
    Report(Report),
}

#[derive(Args)]
struct Synthetic {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    households: Option<usize>,
    #[arg(long)]
    hours: Option<f64>,
}

impl Synthetic {
    fn load(&self, seed: u64) -> anyhow::Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SimConfig::default(),
        };
        cfg.seed = seed;
        if let Some(n) = self.households {
            cfg.households = n;
        }
        if let Some(h) = self.hours {
            if !(h.is_finite() && h > 0.0) {
                bail!("--hours must be positive");
            }
            cfg.duration_s = (h * 3600.0).round() as i64;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenData {
    #[command(flatten)]
    synthetic: Synthetic,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainAttack {
    /// Labelled CSV files; all are pooled.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = attack::DEFAULT_ATTACK_WINDOW)]
    window: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSurrogate {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Population weights to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Defend {
    #[arg(long)]
    data: PathBuf,
    /// Surrogate weights from `train-surrogate`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "high")]
    level: PrivacyLevel,
    /// Billing window in samples.
    #[arg(long, default_value_t = 2)]
    window: usize,
    /// Optional attacker weights; prints its accuracy before and after.
    #[arg(long)]
    attacker: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChainBuild {
    #[command(flatten)]
    synthetic: Synthetic,
    /// One CSV per household; without it, households are generated.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    difficulty: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChainVerify {
    #[arg(long)]
    chain: PathBuf,
}

#[derive(Args)]
struct RunExperiment {
    #[command(flatten)]
    synthetic: Synthetic,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    level: Option<PrivacyLevel>,
    #[arg(long)]
    difficulty: Option<u32>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Report {
    #[arg(long)]
    input: PathBuf,
    /// Text output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_profiles(paths: &[PathBuf]) -> anyhow::Result<Vec<LoadProfile>> {
    paths
        .iter()
        .map(|p| ingest_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: GenData) -> anyhow::Result<()> {
    let cfg = a.synthetic.load(a.seed)?;
    let households = sim::generate_households(&cfg)?;
    // Write whole timelines: undo the train/test split.
    let profiles = households
        .iter()
        .map(|h| {
            let mut readings = h.train.readings().to_vec();
            readings.extend_from_slice(h.test.readings());
            let mut occ = h.train.occupancy().to_vec();
            occ.extend_from_slice(h.test.occupancy());
            LoadProfile::new(h.id.clone(), h.train.sampling_period_s(), readings, occ)
        })
        .collect::<amlb::Result<Vec<_>>>()?;
    export_csv_many(&profiles, START_TS, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    log::info!("wrote {} households to {}", profiles.len(), a.out.display());
    Ok(())
}

fn train_attack(a: TrainAttack) -> anyhow::Result<()> {
    let profiles = read_profiles(&a.data)?;
    let mut cfg = attack::AttackConfig { window_len: a.window, ..Default::default() };
    cfg.train.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    let (mut windows, mut labels) = (Vec::new(), Vec::new());
    for p in &profiles {
        let (w, l) = labelled_windows(p, cfg.window_len)?;
        windows.extend(w);
        labels.extend(l);
    }
    let model = attack::train_attacker(&windows, &labels, &cfg)?;
    let m = evaluate(&model, &windows, &labels, 0.5)?;
    println!("training windows: {}  training accuracy: {:.4}", windows.len(), m.accuracy);
    write_file(&a.out, &save_weights(&model))
}

fn train_surrogate(a: TrainSurrogate) -> anyhow::Result<()> {
    let profile = ingest_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let init: Option<SurrogateModel> = match &a.init {
        Some(p) => Some(load_weights(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    let mut cfg = defense::SurrogateConfig::default();
    cfg.train.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(c) = a.context {
        cfg.context_len = c;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    let model = defense::train_surrogate(&profile, &cfg, init.as_ref())?;
    println!("surrogate accuracy on training data: {:.4}", model.accuracy(&profile)?);
    write_file(&a.out, &save_weights(&model))
}

fn defend(a: Defend) -> anyhow::Result<()> {
    let profile = ingest_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let model: SurrogateModel =
        load_weights(&std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?)?;
    let stream = perturb(&model, profile.readings(), profile.occupancy(), a.level, a.window)?;
    if let Err(e) = stream.check_invariants(profile.readings()) {
        bail!("perturbed stream violates an invariant: {e}");
    }
    let perturbed = profile.with_readings(stream.readings.clone())?;
    let tariff = SimConfig { billing_window: a.window, ..SimConfig::default() }.tariff()?;
    let bill = verify_billing(&profile, &stream, &tariff)?;
    let file = std::fs::File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_csv(&perturbed, START_TS, std::io::BufWriter::new(file))?;
    println!(
        "level {}  noise bound {:.3} W  bill {:.6} -> {:.6} (rel {:.2e})  max window delta {:.3e}",
        a.level, stream.noise_bound_w, bill.bill_before, bill.bill_after, bill.relative_delta, bill.max_window_delta
    );
    if let Some(path) = &a.attacker {
        let attacker: AttackModel =
            load_weights(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
        let (w, l) = labelled_windows(&profile, attack::DEFAULT_ATTACK_WINDOW)?;
        let before = evaluate(&attacker, &w, &l, 0.5)?;
        let (w, l) = labelled_windows(&perturbed, attack::DEFAULT_ATTACK_WINDOW)?;
        let after = evaluate(&attacker, &w, &l, 0.5)?;
        println!("attacker accuracy {:.4} -> {:.4}", before.accuracy, after.accuracy);
    }
    Ok(())
}

fn chain_build(a: ChainBuild) -> anyhow::Result<()> {
    let mut cfg = a.synthetic.load(a.seed)?;
    if let Some(d) = a.difficulty {
        cfg.chain.difficulty = d;
    }
    if let Some(e) = a.epochs {
        cfg.chain.epochs = e;
    }
    let households = if a.data.is_empty() {
        sim::generate_households(&cfg)?
    } else {
        read_profiles(&a.data)?
            .into_iter()
            .enumerate()
            .map(|(index, p)| Household {
                id: p.household_id().to_string(),
                index,
                test: p.slice(p.len()..p.len()),
                train: p,
            })
            .collect()
    };
    cfg.households = households.len();
    let setup = sim::run_setup_phase(&cfg, &households)?;
    write_file(&a.out, &setup.chain.to_bytes())?;
    println!(
        "blocks: {}  meter transactions: {}  mean mining attempts: {:.1}  tip: {}",
        setup.chain.len(),
        setup.meter_transactions,
        setup.chain.mean_mining_attempts(),
        hex::encode(setup.chain.tip_hash())
    );
    Ok(())
}

fn chain_verify(a: ChainVerify) -> anyhow::Result<()> {
    let bytes = std::fs::read(&a.chain).with_context(|| format!("reading {}", a.chain.display()))?;
    let chain = Chain::from_bytes(&bytes)?;
    println!(
        "valid: {} blocks, {} transactions, difficulty {}, tip {}",
        chain.len(),
        chain.transactions().count(),
        chain.difficulty(),
        hex::encode(chain.tip_hash())
    );
    Ok(())
}

fn run_experiment(a: RunExperiment) -> anyhow::Result<()> {
    let mut cfg = a.synthetic.load(a.seed)?;
    if let Some(level) = a.level {
        cfg.level = level;
    }
    if let Some(d) = a.difficulty {
        cfg.chain.difficulty = d;
    }
    let report = sim::run_experiment(&cfg)?;
    let json = report.to_json()?;
    match &a.out {
        Some(path) => write_file(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    if let Some(e) = &report.error {
        bail!("experiment failed: {e}");
    }
    Ok(())
}

fn report(a: Report) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: ExperimentReport = serde_json::from_str(&text).context("parsing report")?;
    let table = render::render(&report);
    match &a.out {
        Some(path) => write_file(path, table.as_bytes()),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AMLB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for usage errors
        Err(e) => e.exit(),
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainAttack(a) => train_attack(a),
        Command::TrainSurrogate(a) => train_surrogate(a),
        Command::Defend(a) => defend(a),
        Command::ChainBuild(a) => chain_build(a),
        Command::ChainVerify(a) => chain_verify(a),
        Command::RunExperiment(a) => run_experiment(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
