//! End-to-end experiment: setup phase on the ledger, online defense, and a
//! black-box evaluation of the attacker before and after perturbation.
//!
//! All randomness flows from `SimConfig::seed` through
//! [`seed::derive_seed`] with these roles: `household` (generator, per
//! index), `kdc`, `shuffle` (per epoch), `population`, `surrogate` (per
//! household) and `attack`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{self, evaluate, labelled_windows, AttackConfig, Metrics};
use crate::defense::{
    self, perturb, verify_billing, PerturbedStream, PrivacyLevel, SurrogateConfig, SurrogateModel,
};
use crate::error::{invalid, Error, Result};
use crate::ledger::{
    validate_chain, Chain, KeyDistributionCenter, MeterTransaction, ReadingBatch, TxKind,
};
use crate::neural::{self, load_weights, save_weights, Sample, SequenceClassifier, TrainConfig};
use crate::seed;
use crate::timeseries::{
    check_window_len, generate_profile, window_energy_wh, GeneratorParams, LoadProfile, Tariff,
};

pub const REPORT_VERSION: &str = concat!("amlb-core ", env!("CARGO_PKG_VERSION"));

/// Interval-rate schedule; rates repeat cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffSpec {
    pub resolution_samples: usize,
    /// Currency per kWh.
    pub rates: Vec<f64>,
}

impl Default for TariffSpec {
    fn default() -> Self {
        // Half-hour slots over a day: night, day, evening peak, late.
        let mut rates = vec![0.12; 14];
        rates.extend(vec![0.20; 20]);
        rates.extend(vec![0.32; 8]);
        rates.extend(vec![0.20; 6]);
        Self { resolution_samples: 1800, rates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSpec {
    pub difficulty: u32,
    /// Reporting epochs the training history is cut into; each becomes one
    /// block holding one transaction per household.
    pub epochs: usize,
    pub genesis_timestamp: u64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self { difficulty: 12, epochs: 4, genesis_timestamp: 1_700_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerSpec {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for AttackerSpec {
    fn default() -> Self {
        let t = AttackConfig::default().train;
        Self { epochs: t.epochs, learning_rate: t.learning_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSpec {
    pub hidden: usize,
    pub context_len: usize,
    pub learning_rate: f64,
    /// Epochs the utility spends on the pooled population model.
    pub population_epochs: usize,
    /// Local epochs each household adds on top of the population weights.
    pub fine_tune_epochs: usize,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        let d = SurrogateConfig::default();
        Self {
            hidden: d.hidden,
            context_len: d.context_len,
            learning_rate: d.train.learning_rate,
            population_epochs: 3,
            fine_tune_epochs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub households: usize,
    pub duration_s: i64,
    /// Leading share of each timeline used for training; the rest is test.
    pub train_fraction: f64,
    /// `seed` inside is ignored: each household gets a derived one.
    pub generator: GeneratorParams,
    pub billing_window: usize,
    pub attack_window: usize,
    pub level: PrivacyLevel,
    pub tariff: TariffSpec,
    pub chain: ChainSpec,
    pub attacker: AttackerSpec,
    pub surrogate: SurrogateSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            households: 20,
            duration_s: 48 * 3600,
            train_fraction: 0.7,
            generator: GeneratorParams::default(),
            billing_window: 2,
            attack_window: attack::DEFAULT_ATTACK_WINDOW,
            level: PrivacyLevel::High,
            tariff: TariffSpec::default(),
            chain: ChainSpec::default(),
            attacker: AttackerSpec::default(),
            surrogate: SurrogateSpec::default(),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        check_window_len(self.billing_window)?;
        self.tariff()?;
        if self.households == 0 {
            return Err(invalid("at least one household is required"));
        }
        if self.duration_s <= 0 {
            return Err(invalid("duration must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train fraction must lie strictly between 0 and 1"));
        }
        if self.attack_window == 0 || self.surrogate.context_len == 0 || self.surrogate.hidden == 0 {
            return Err(invalid("window, context and hidden sizes must be positive"));
        }
        if self.surrogate.context_len % self.billing_window != 0 {
            return Err(invalid("surrogate context must be a whole number of billing windows"));
        }
        if self.chain.epochs == 0 {
            return Err(invalid("at least one reporting epoch is required"));
        }
        if self.chain.difficulty > crate::ledger::MAX_DIFFICULTY {
            return Err(invalid("chain difficulty exceeds 32"));
        }
        for lr in [self.attacker.learning_rate, self.surrogate.learning_rate] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(invalid(format!("learning rate {lr} is not usable")));
            }
        }
        Ok(())
    }

    pub fn tariff(&self) -> Result<Tariff> {
        Tariff::new(self.tariff.resolution_samples, self.tariff.rates.clone(), self.billing_window)
    }

    /// Split points are multiples of every window length in play.
    pub fn split_alignment(&self) -> usize {
        lcm(lcm(self.attack_window, self.surrogate.context_len), self.billing_window)
    }

    pub fn attack_config(&self) -> AttackConfig {
        let base = AttackConfig::default();
        AttackConfig {
            window_len: self.attack_window,
            onoff_threshold_w: self.generator.onoff_threshold_w(),
            train: TrainConfig {
                learning_rate: self.attacker.learning_rate,
                epochs: self.attacker.epochs,
                seed: seed::derive_seed(self.seed, "attack", 0),
                ..base.train
            },
        }
    }

    pub fn surrogate_config(&self, epochs: usize, seed: u64) -> SurrogateConfig {
        let base = SurrogateConfig::default();
        SurrogateConfig {
            hidden: self.surrogate.hidden,
            context_len: self.surrogate.context_len,
            train: TrainConfig {
                learning_rate: self.surrogate.learning_rate,
                epochs,
                seed,
                ..base.train
            },
        }
    }
}

/// One grid user's locally held data. Never leaves the household except as
/// pseudonymous reading batches.
#[derive(Debug, Clone)]
pub struct Household {
    pub id: String,
    pub index: usize,
    pub train: LoadProfile,
    pub test: LoadProfile,
}

pub fn household_id(index: usize) -> String {
    format!("household-{index:04}")
}

pub fn generate_households(cfg: &SimConfig) -> Result<Vec<Household>> {
    cfg.validate()?;
    (0..cfg.households)
        .map(|i| {
            let params = GeneratorParams {
                seed: seed::derive_seed(cfg.seed, "household", i as u64),
                ..cfg.generator.clone()
            };
            let id = household_id(i);
            let profile = generate_profile(&params, &id, cfg.duration_s)?;
            let (train, test) = profile.split_at_fraction(cfg.train_fraction, cfg.split_alignment());
            if train.is_empty() || test.is_empty() {
                return Err(invalid("duration too short for the train/test split"));
            }
            Ok(Household { id, index: i, train, test })
        })
        .collect()
}

/// Billing-window energies (Wh) for each reporting epoch of a history.
pub fn epoch_batches(history: &LoadProfile, epochs: usize, window_len: usize) -> Result<Vec<ReadingBatch>> {
    check_window_len(window_len)?;
    let windows = history.len() / window_len;
    if windows < epochs {
        return Err(invalid("history shorter than one billing window per epoch"));
    }
    let per_epoch = windows / epochs;
    Ok((0..epochs)
        .map(|e| {
            let start = e * per_epoch * window_len;
            let end = if e + 1 == epochs { windows * window_len } else { start + per_epoch * window_len };
            let energies_wh = history.readings()[start..end]
                .chunks_exact(window_len)
                .map(|w| window_energy_wh(w, history.sampling_period_s()))
                .collect();
            ReadingBatch { epoch: e as u32, energies_wh }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SetupOutcome {
    pub chain: Chain,
    pub population: SurrogateModel,
    pub meter_transactions: usize,
}

/// 1-D two-means on `values`; returns the midpoint between the centroids.
fn two_means_threshold(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut a, mut b) = (lo, hi);
    for _ in 0..100 {
        let cut = 0.5 * (a + b);
        let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for v in values {
            if *v <= cut {
                sa += v;
                na += 1;
            } else {
                sb += v;
                nb += 1;
            }
        }
        if na == 0 || nb == 0 {
            break;
        }
        let (na_, nb_) = (sa / na as f64, sb / nb as f64);
        if na_ == a && nb_ == b {
            break;
        }
        a = na_;
        b = nb_;
    }
    0.5 * (a + b)
}

/// What the utility can reconstruct from the chain: per-sample mean power
/// sequences cut into surrogate contexts, with no household attached.
fn pooled_contexts(chain: &Chain, window_len: usize, context_len: usize) -> Result<Vec<Vec<f64>>> {
    let mut contexts = Vec::new();
    for tx in chain.transactions().filter(|t| t.kind == TxKind::Readings) {
        let batch = ReadingBatch::from_bytes(&tx.payload)?;
        let watts: Vec<f64> = batch
            .energies_wh
            .iter()
            .flat_map(|e| std::iter::repeat_n(e * 3600.0 / window_len as f64, window_len))
            .collect();
        contexts.extend(watts.chunks_exact(context_len).map(<[f64]>::to_vec));
    }
    Ok(contexts)
}

/// Trains the population model on chain data alone. Labels are never on
/// the chain, so the utility pseudo-labels contexts by splitting their log
/// mean power into two clusters.
pub fn train_population_model(chain: &Chain, cfg: &SimConfig) -> Result<SurrogateModel> {
    let contexts = pooled_contexts(chain, cfg.billing_window, cfg.surrogate.context_len)?;
    if contexts.is_empty() {
        return Err(Error::State("chain holds no reading data".into()));
    }
    let log_means: Vec<f64> = contexts.iter().map(|c| crate::timeseries::mean(c).ln_1p()).collect();
    let cut = two_means_threshold(&log_means);
    let total: f64 = contexts.iter().flatten().sum();
    let count = contexts.len() * cfg.surrogate.context_len;
    let input_scale = if total > 0.0 { count as f64 / total } else { 1.0 };
    let samples: Vec<Sample> = contexts
        .iter()
        .zip(&log_means)
        .map(|(c, m)| Sample::new(c.iter().map(|w| w * input_scale).collect(), *m > cut))
        .collect();
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::State("pooled data does not separate into two clusters".into()));
    }
    let pop_seed = seed::derive_seed(cfg.seed, "population", 0);
    let scfg = cfg.surrogate_config(cfg.surrogate.population_epochs, pop_seed);
    let mut rng = seed::rng(seed::derive_seed(pop_seed, "surrogate-init", 0));
    let init = SequenceClassifier::random(scfg.hidden, 1, &mut rng);
    let model = neural::train(init, &samples, &scfg.train)?.model;
    Ok(SurrogateModel::from_trained(model, input_scale, cfg.surrogate.context_len))
}

pub fn run_setup_phase(cfg: &SimConfig, households: &[Household]) -> Result<SetupOutcome> {
    cfg.validate()?;
    let mut kdc = KeyDistributionCenter::new(seed::derive_seed(cfg.seed, "kdc", 0));
    let mut chain = Chain::new(cfg.chain.difficulty, cfg.chain.genesis_timestamp)?;
    let batches = households
        .iter()
        .map(|h| epoch_batches(&h.train, cfg.chain.epochs, cfg.billing_window))
        .collect::<Result<Vec<_>>>()?;
    let epoch_s = households[0].train.len() as u64 * u64::from(households[0].train.sampling_period_s())
        / cfg.chain.epochs as u64;

    let mut meter_transactions = 0;
    for epoch in 0..cfg.chain.epochs {
        let mut txs = batches
            .iter()
            .map(|b| MeterTransaction::readings(&mut kdc.issue(), &b[epoch]))
            .collect::<Result<Vec<_>>>()?;
        // Block position must not reveal who submitted.
        txs.shuffle(&mut seed::rng(seed::derive_seed(cfg.seed, "shuffle", epoch as u64)));
        meter_transactions += txs.len();
        let ts = cfg.chain.genesis_timestamp + (epoch as u64 + 1) * epoch_s;
        chain.append_block(txs, ts)?;
        log::debug!("mined epoch {epoch} block, nonce {}", chain.blocks().last().map_or(0, |b| b.header.nonce));
    }

    let population = train_population_model(&chain, cfg)?;
    let model_tx =
        MeterTransaction::signed(TxKind::ModelWeights, &mut kdc.issue(), save_weights(&population))?;
    let ts = cfg.chain.genesis_timestamp + (cfg.chain.epochs as u64 + 1) * epoch_s;
    chain.append_block(vec![model_tx], ts)?;
    validate_chain(&chain)?;
    log::info!("setup: {} blocks, {} meter transactions", chain.len(), meter_transactions);
    Ok(SetupOutcome { chain, population, meter_transactions })
}

/// The most recent population model published on the chain.
pub fn fetch_population_model(chain: &Chain) -> Result<SurrogateModel> {
    let tx = chain
        .transactions()
        .filter(|t| t.kind == TxKind::ModelWeights)
        .last()
        .ok_or_else(|| Error::State("no model has been published on the chain".into()))?;
    load_weights(&tx.payload)
}

#[derive(Debug, Clone)]
pub struct DefendedHousehold {
    pub id: String,
    pub surrogate_accuracy: f64,
    pub original: LoadProfile,
    /// One stream per requested level, in request order.
    pub perturbed: Vec<(PrivacyLevel, PerturbedStream)>,
}

impl DefendedHousehold {
    pub fn stream(&self, level: PrivacyLevel) -> Option<&PerturbedStream> {
        self.perturbed.iter().find(|(l, _)| *l == level).map(|(_, s)| s)
    }
}

/// Each household fine-tunes the published model on its own labelled
/// history and perturbs its test period at every requested level.
pub fn run_online_phase(
    cfg: &SimConfig,
    households: &[Household],
    population: &SurrogateModel,
    levels: &[PrivacyLevel],
) -> Result<Vec<DefendedHousehold>> {
    households
        .iter()
        .map(|h| {
            let scfg = cfg.surrogate_config(
                cfg.surrogate.fine_tune_epochs,
                seed::derive_seed(cfg.seed, "surrogate", h.index as u64),
            );
            let surrogate = defense::train_surrogate(&h.train, &scfg, Some(population))?;
            let surrogate_accuracy = surrogate.accuracy(&h.test)?;
            let perturbed = levels
                .iter()
                .map(|&level| {
                    let s = perturb(&surrogate, h.test.readings(), h.test.occupancy(), level, cfg.billing_window)?;
                    s.check_invariants(h.test.readings())
                        .map_err(|e| Error::State(format!("{} at {level}: {e}", h.id)))?;
                    Ok((level, s))
                })
                .collect::<Result<Vec<_>>>()?;
            log::debug!("{}: surrogate accuracy {surrogate_accuracy:.3}", h.id);
            Ok(DefendedHousehold { id: h.id.clone(), surrogate_accuracy, original: h.test.clone(), perturbed })
        })
        .collect()
}

/// Epochs of local training until held-out accuracy reaches `bar`
/// (0 if the starting model already does), or `None` within `max_epochs`.
pub fn epochs_to_accuracy(
    household: &Household,
    cfg: &SimConfig,
    start: Option<&SurrogateModel>,
    bar: f64,
    max_epochs: usize,
) -> Result<Option<usize>> {
    let scfg = cfg.surrogate_config(1, seed::derive_seed(cfg.seed, "surrogate", household.index as u64));
    let mut model = start.cloned();
    if let Some(m) = &model {
        if m.accuracy(&household.test)? >= bar {
            return Ok(Some(0));
        }
    }
    for epoch in 1..=max_epochs {
        let next = defense::train_surrogate(&household.train, &scfg, model.as_ref())?;
        if next.accuracy(&household.test)? >= bar {
            return Ok(Some(epoch));
        }
        model = Some(next);
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupSummary {
    pub chain_blocks: usize,
    pub meter_transactions: usize,
    pub mean_mining_attempts: f64,
    pub chain_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSweep {
    pub off: Metrics,
    pub low: Metrics,
    pub medium: Metrics,
    pub high: Metrics,
}

impl LevelSweep {
    pub fn get(&self, level: PrivacyLevel) -> &Metrics {
        match level {
            PrivacyLevel::Off => &self.off,
            PrivacyLevel::Low => &self.low,
            PrivacyLevel::Medium => &self.medium,
            PrivacyLevel::High => &self.high,
        }
    }

    pub fn is_monotone(&self) -> bool {
        let acc: Vec<f64> = PrivacyLevel::ALL.iter().map(|l| self.get(*l).accuracy).collect();
        acc.windows(2).all(|p| p[1] <= p[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub pre: Metrics,
    /// At the configured level.
    pub post: Metrics,
    pub post_by_level: LevelSweep,
    /// Percentage points lost at the configured level.
    pub accuracy_drop_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub surrogate_accuracy_mean: f64,
    pub surrogate_accuracy_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdBill {
    pub household: String,
    pub bill_before: f64,
    pub bill_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillingSummary {
    /// Largest |original − perturbed| window sum (W·samples) over all levels.
    pub max_window_delta: f64,
    pub max_window_rel_delta: f64,
    pub max_bill_rel_delta: f64,
    /// Bills at the configured level.
    pub households: Vec<HouseholdBill>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub setup: Option<SetupSummary>,
    pub attack: Option<AttackSummary>,
    pub defense: Option<DefenseSummary>,
    pub billing: Option<BillingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub version: String,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn pooled_windows<'a>(
    profiles: impl IntoIterator<Item = &'a LoadProfile>,
    window_len: usize,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let (mut windows, mut labels) = (Vec::new(), Vec::new());
    for p in profiles {
        let (w, l) = labelled_windows(p, window_len)?;
        windows.extend(w);
        labels.extend(l);
    }
    Ok((windows, labels))
}

fn relative(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        after.abs()
    } else {
        (after - before).abs() / before.abs()
    }
}

pub fn summarize_billing(cfg: &SimConfig, defended: &[DefendedHousehold]) -> Result<BillingSummary> {
    let tariff = cfg.tariff()?;
    let mut summary = BillingSummary {
        max_window_delta: 0.0,
        max_window_rel_delta: 0.0,
        max_bill_rel_delta: 0.0,
        households: Vec::new(),
    };
    for d in defended {
        for (level, stream) in &d.perturbed {
            let bill = verify_billing(&d.original, stream, &tariff)?;
            summary.max_bill_rel_delta = summary.max_bill_rel_delta.max(bill.relative_delta);
            for (before, after) in &stream.per_window_delta {
                summary.max_window_delta = summary.max_window_delta.max((before - after).abs());
                summary.max_window_rel_delta = summary.max_window_rel_delta.max(relative(*before, *after));
            }
            if *level == cfg.level {
                summary.households.push(HouseholdBill {
                    household: d.id.clone(),
                    bill_before: bill.bill_before,
                    bill_after: bill.bill_after,
                });
            }
        }
    }
    Ok(summary)
}

/// Runs every phase. Configuration errors are returned; a failing phase
/// yields a report with the sections completed so far and an `error`.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport {
        config: cfg.clone(),
        setup: None,
        attack: None,
        defense: None,
        billing: None,
        error: None,
        seed: cfg.seed,
        version: REPORT_VERSION.to_string(),
    };
    if let Err(e) = fill_report(cfg, &mut report) {
        log::error!("experiment aborted: {e}");
        report.error = Some(e.to_string());
    }
    Ok(report)
}

fn fill_report(cfg: &SimConfig, report: &mut ExperimentReport) -> Result<()> {
    let households = generate_households(cfg)?;

    let setup = run_setup_phase(cfg, &households)?;
    report.setup = Some(SetupSummary {
        chain_blocks: setup.chain.len(),
        meter_transactions: setup.meter_transactions,
        mean_mining_attempts: setup.chain.mean_mining_attempts(),
        chain_bytes: setup.chain.to_bytes().len(),
    });

    // Households take the model from the chain, not from the utility's memory.
    let population = fetch_population_model(&setup.chain)?;
    let defended = run_online_phase(cfg, &households, &population, &PrivacyLevel::ALL)?;
    let accs: Vec<f64> = defended.iter().map(|d| d.surrogate_accuracy).collect();
    report.defense = Some(DefenseSummary {
        surrogate_accuracy_mean: accs.iter().sum::<f64>() / accs.len() as f64,
        surrogate_accuracy_min: accs.iter().copied().fold(f64::INFINITY, f64::min),
    });

    // The attacker sees clean training data only and never any defense state.
    let acfg = cfg.attack_config();
    let (train_w, train_l) = pooled_windows(households.iter().map(|h| &h.train), acfg.window_len)?;
    let attacker = attack::train_attacker(&train_w, &train_l, &acfg)?;
    let (test_w, test_l) = pooled_windows(households.iter().map(|h| &h.test), acfg.window_len)?;
    let pre = evaluate(&attacker, &test_w, &test_l, 0.5)?;

    let mut by_level = Vec::new();
    for level in PrivacyLevel::ALL {
        let perturbed = defended
            .iter()
            .map(|d| {
                let s = d.stream(level).expect("all levels perturbed");
                d.original.with_readings(s.readings.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let (w, l) = pooled_windows(&perturbed, acfg.window_len)?;
        by_level.push(evaluate(&attacker, &w, &l, 0.5)?);
        log::info!("{level}: attacker accuracy {:.4}", by_level.last().map_or(0.0, |m| m.accuracy));
    }
    let sweep = LevelSweep { off: by_level[0], low: by_level[1], medium: by_level[2], high: by_level[3] };
    let post = *sweep.get(cfg.level);
    report.attack = Some(AttackSummary {
        pre,
        post,
        post_by_level: sweep,
        accuracy_drop_pp: 100.0 * (pre.accuracy - post.accuracy),
    });

    report.billing = Some(summarize_billing(cfg, &defended)?);
    Ok(())
}
