//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs the default benchmark, so expect a few minutes.

use std::collections::HashSet;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use amlb::defense::{perturb, train_surrogate, verify_billing, PrivacyLevel, SurrogateModel};
use amlb::ledger::{mine, BlockHeader, Chain, KeyDistributionCenter, MeterTransaction, ReadingBatch, BLOCK_VERSION};
use amlb::neural::{bce_loss, DenseNetwork, Model, SequenceClassifier};
use amlb::seed::{self, derive_seed};
use amlb::sim::{self, ExperimentReport, SimConfig};
use rand::Rng;

// Pinned tolerances and budgets.
const FD_STEP: f64 = 1e-4;
const FD_MAX_REL_ERR: f64 = 1e-4;
const FD_REL_FLOOR: f64 = 1e-7;
const FD_INSTANCES: usize = 100;
const FD_BUDGET: Duration = Duration::from_secs(30);
// ReLU is not differentiable at 0; DNN samples keep every hidden
// pre-activation at least this far from the kink.
const FD_KINK_MARGIN: f64 = 1e-2;
const BILLING_REL_TOL: f64 = 1e-9;
const BILLING_BUDGET: Duration = Duration::from_secs(60);
const MIN_PRE_ACCURACY: f64 = 0.85;
const MIN_DROP_PP: f64 = 20.0;
const TAMPER_BLOCKS: usize = 5;
const TAMPER_MAX_PAYLOAD: usize = 1024;
const TAMPER_BUDGET: Duration = Duration::from_secs(120);
const POW_BLOCKS: u64 = 50;
const POW_DIFFICULTY: u32 = 12;
const POW_MEAN_RANGE: (f64, f64) = (2048.0, 8192.0);
const EXPERIMENT_BUDGET: Duration = Duration::from_secs(300);
const SURROGATE_BAR: f64 = 0.80;
const COLD_MAX_EPOCHS: usize = 10;

struct Line {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: &'static str, name: &'static str, pass: bool, detail: String) {
    println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { id, name, pass, detail });
}

fn loss<M: Model>(m: &M, x: &[f64], y: bool) -> f64 {
    bce_loss(m.predict(x).unwrap(), y)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_REL_FLOOR)
}

/// Worst relative error of backprop against central differences over every
/// parameter and every input component.
fn fd_check<M: Model>(m: &M, x: &[f64], y: bool) -> f64 {
    let (_, grads) = m.param_gradients(x, y).unwrap();
    let analytic = grads.flat_params();
    let mut worst = 0.0f64;
    let mut k = 0;
    let blocks = m.params().iter().map(|b| b.len()).collect::<Vec<_>>();
    for (b, len) in blocks.iter().enumerate() {
        for i in 0..*len {
            let mut plus = m.clone();
            let mut minus = m.clone();
            plus.params_mut()[b][i] += FD_STEP;
            minus.params_mut()[b][i] -= FD_STEP;
            let numeric = (loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k], numeric));
            k += 1;
        }
    }
    let input_grad = m.input_gradient(x, y).unwrap();
    for i in 0..x.len() {
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[i] += FD_STEP;
        b[i] -= FD_STEP;
        let numeric = (loss(m, &a, y) - loss(m, &b, y)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(input_grad[i], numeric));
    }
    worst
}

/// Smallest |pre-activation| over the hidden layers.
fn kink_distance(net: &DenseNetwork, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut closest = f64::INFINITY;
    let layers = net.layers();
    for layer in &layers[..layers.len() - 1] {
        let mut z = layer.biases.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += (0..a.len()).map(|c| layer.weights.get(r, c) * a[c]).sum::<f64>();
        }
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        a = layer.forward(&a).unwrap();
    }
    closest
}

fn gradient_fidelity(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let mut rng = seed::rng(derive_seed(1, "acceptance-fd", 0));
    let (mut worst_lstm, mut worst_dnn) = (0.0f64, 0.0f64);
    let mut resampled = 0usize;
    for i in 0..FD_INSTANCES {
        let hidden = 1 + i % 8;
        let steps = 1 + (i * 7) % 10;
        let mut lstm = SequenceClassifier::random(hidden, 1, &mut rng);
        // widen the small default init so gradients are not uniformly tiny
        lstm.params_mut().into_iter().flatten().for_each(|p| *p *= 8.0);
        let x: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst_lstm = worst_lstm.max(fd_check(&lstm, &x, i % 2 == 0));

        let inputs = 1 + i % 7;
        let widths = [2 + i % 7, 1 + (i * 3) % 8];
        let (dnn, x) = loop {
            let dnn = DenseNetwork::classifier(inputs, &widths, &mut rng);
            let x: Vec<f64> = (0..inputs).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if kink_distance(&dnn, &x) > FD_KINK_MARGIN {
                break (dnn, x);
            }
            resampled += 1;
            assert!(resampled < 100 * FD_INSTANCES, "no kink-free DNN instance found");
        };
        worst_dnn = worst_dnn.max(fd_check(&dnn, &x, i % 3 == 0));
    }
    let elapsed = start.elapsed();
    let worst = worst_lstm.max(worst_dnn);
    report(
        lines,
        "1",
        "gradient fidelity",
        worst < FD_MAX_REL_ERR && elapsed < FD_BUDGET,
        format!(
            "{FD_INSTANCES} LSTM + {FD_INSTANCES} DNN ({resampled} DNN instances redrawn off a ReLU kink), max rel err lstm {worst_lstm:.2e} dnn {worst_dnn:.2e} (< {FD_MAX_REL_ERR:e}), {:.1} s (< {} s)",
            elapsed.as_secs_f64(),
            FD_BUDGET.as_secs()
        ),
    );
}

fn pow_statistics(lines: &mut Vec<Line>) {
    let mut kdc = KeyDistributionCenter::new(derive_seed(1, "acceptance-pow", 0));
    let mut chain = Chain::new(POW_DIFFICULTY, 1_700_000_000).unwrap();
    for i in 0..POW_BLOCKS {
        let batch = ReadingBatch { epoch: i as u32, energies_wh: vec![0.01 * i as f64] };
        let tx = MeterTransaction::readings(&mut kdc.issue(), &batch).unwrap();
        chain.append_block(vec![tx], 1_700_000_000 + i).unwrap();
    }
    let attempts: f64 = chain.blocks()[1..].iter().map(|b| b.header.nonce as f64 + 1.0).sum();
    let mean = attempts / POW_BLOCKS as f64;
    let header = BlockHeader {
        version: BLOCK_VERSION,
        prev_hash: [0xab; 32],
        merkle_root: [0xcd; 32],
        timestamp: 1,
        difficulty: 0,
        nonce: 99,
    };
    let zero = mine(&header, 0).unwrap();
    report(
        lines,
        "6",
        "proof-of-work statistics",
        (POW_MEAN_RANGE.0..=POW_MEAN_RANGE.1).contains(&mean) && zero == 0,
        format!(
            "mean attempts over {POW_BLOCKS} blocks at difficulty {POW_DIFFICULTY} = {mean:.1} (in [{}, {}]); difficulty-0 nonce {zero}",
            POW_MEAN_RANGE.0, POW_MEAN_RANGE.1
        ),
    );
}

fn tamper_detection(lines: &mut Vec<Line>) {
    let mut kdc = KeyDistributionCenter::new(derive_seed(1, "acceptance-tamper", 0));
    let mut chain = Chain::new(8, 1_700_000_000).unwrap();
    let mut max_payload = 0;
    for epoch in 0..(TAMPER_BLOCKS - 1) as u32 {
        let energies = (0..120).map(|i| 0.01 * f64::from(i * (epoch + 1))).collect();
        let batch = ReadingBatch { epoch, energies_wh: energies };
        let tx = MeterTransaction::readings(&mut kdc.issue(), &batch).unwrap();
        max_payload = max_payload.max(tx.payload.len());
        chain.append_block(vec![tx], 1_700_000_000 + u64::from(epoch) * 600).unwrap();
    }
    let bytes = chain.to_bytes();
    let clean_ok = Chain::from_bytes(&bytes).is_ok();
    let start = Instant::now();
    let mut undetected = 0usize;
    let mut buf = bytes.clone();
    for bit in 0..bytes.len() * 8 {
        buf[bit / 8] ^= 1 << (bit % 8);
        if Chain::from_bytes(&buf).is_ok() {
            undetected += 1;
        }
        buf[bit / 8] ^= 1 << (bit % 8);
    }
    let elapsed = start.elapsed();
    let total = bytes.len() * 8;
    report(
        lines,
        "5",
        "tamper detection",
        clean_ok
            && undetected == 0
            && chain.len() == TAMPER_BLOCKS
            && max_payload <= TAMPER_MAX_PAYLOAD
            && elapsed < TAMPER_BUDGET,
        format!(
            "{} of {total} single-bit flips detected on a {}-block chain (payload {max_payload} B), {:.1} s (< {} s)",
            total - undetected,
            chain.len(),
            elapsed.as_secs_f64(),
            TAMPER_BUDGET.as_secs()
        ),
    );
}

fn relative(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        after.abs()
    } else {
        (after - before).abs() / before.abs()
    }
}

/// Default benchmark in-process: billing conservation, unlinkability and the
/// surrogate checks share one setup phase.
fn default_benchmark(lines: &mut Vec<Line>) {
    let cfg = SimConfig::default();
    let households = sim::generate_households(&cfg).unwrap();
    let setup = sim::run_setup_phase(&cfg, &households).unwrap();

    let bytes = setup.chain.to_bytes();
    let mut leaks = Vec::new();
    for h in &households {
        let gen_seed = derive_seed(cfg.seed, "household", h.index as u64).to_be_bytes();
        let id_digest = amlb::ledger::sha256(h.id.as_bytes());
        for needle in [h.id.as_bytes(), &gen_seed[..], &id_digest[..]] {
            if bytes.windows(needle.len()).any(|w| w == needle) {
                leaks.push(h.id.clone());
            }
        }
    }
    let mut seen = HashSet::new();
    let reused = setup.chain.transactions().filter(|t| !seen.insert(t.pseudonym)).count();
    report(
        lines,
        "7",
        "unlinkability scan",
        leaks.is_empty() && reused == 0,
        format!(
            "{} chain bytes, {} households scanned, {} identifier hits, {} of {} pseudonyms reused",
            bytes.len(),
            households.len(),
            leaks.len(),
            reused,
            seen.len() + reused
        ),
    );

    let population = sim::fetch_population_model(&setup.chain).unwrap();
    let surrogates: Vec<SurrogateModel> = households
        .iter()
        .map(|h| {
            let scfg = cfg.surrogate_config(
                cfg.surrogate.fine_tune_epochs,
                derive_seed(cfg.seed, "surrogate", h.index as u64),
            );
            train_surrogate(&h.train, &scfg, Some(&population)).unwrap()
        })
        .collect();

    let tariff = cfg.tariff().unwrap();
    let start = Instant::now();
    let (mut worst_window, mut worst_bill, mut windows) = (0.0f64, 0.0f64, 0usize);
    let mut invariant_failures = 0;
    for (h, s) in households.iter().zip(&surrogates) {
        for level in PrivacyLevel::ALL {
            let stream = perturb(s, h.test.readings(), h.test.occupancy(), level, cfg.billing_window).unwrap();
            if stream.check_invariants(h.test.readings()).is_err() {
                invariant_failures += 1;
            }
            for (a, b) in h.test.readings().chunks_exact(cfg.billing_window).zip(stream.readings.chunks_exact(cfg.billing_window)) {
                worst_window = worst_window.max(relative(a.iter().sum(), b.iter().sum()));
                windows += 1;
            }
            worst_bill = worst_bill.max(verify_billing(&h.test, &stream, &tariff).unwrap().relative_delta);
        }
    }
    let elapsed = start.elapsed();
    report(
        lines,
        "2",
        "billing conservation",
        worst_window <= BILLING_REL_TOL && worst_bill <= BILLING_REL_TOL && invariant_failures == 0 && elapsed < BILLING_BUDGET,
        format!(
            "{windows} windows over {} households x 4 levels, max window rel delta {worst_window:.2e}, max bill rel delta {worst_bill:.2e} (<= {BILLING_REL_TOL:e}), {:.1} s (< {} s)",
            households.len(),
            elapsed.as_secs_f64(),
            BILLING_BUDGET.as_secs()
        ),
    );

    let accs: Vec<f64> = households.iter().zip(&surrogates).map(|(h, s)| s.accuracy(&h.test).unwrap()).collect();
    let min_acc = accs.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        lines,
        "S1",
        "surrogate held-out accuracy",
        min_acc >= SURROGATE_BAR,
        format!("min {min_acc:.4} over {} households (>= {SURROGATE_BAR})", accs.len()),
    );

    let (mut warm_total, mut cold_total, mut unreached) = (0usize, 0usize, 0usize);
    for h in &households {
        match (
            sim::epochs_to_accuracy(h, &cfg, Some(&population), SURROGATE_BAR, COLD_MAX_EPOCHS).unwrap(),
            sim::epochs_to_accuracy(h, &cfg, None, SURROGATE_BAR, COLD_MAX_EPOCHS).unwrap(),
        ) {
            (Some(w), Some(c)) => {
                warm_total += w;
                cold_total += c;
            }
            _ => unreached += 1,
        }
    }
    let n = households.len() as f64;
    let (warm_mean, cold_mean) = (warm_total as f64 / n, cold_total as f64 / n);
    report(
        lines,
        "S2",
        "warm start halves epochs",
        unreached == 0 && warm_mean <= 0.5 * cold_mean,
        format!(
            "mean epochs to {SURROGATE_BAR}: warm {warm_mean:.2} vs cold {cold_mean:.2}, {unreached} households unreached in {COLD_MAX_EPOCHS}"
        ),
    );
}

fn run_cli_experiment(out: &std::path::Path) -> (bool, Duration, String) {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_amlb"))
        .args(["run-experiment", "--seed", "42", "--out", out.to_str().unwrap()])
        .env("AMLB_LOG", "error")
        .output()
        .expect("binary runs");
    (o.status.success(), start.elapsed(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn experiment_criteria(lines: &mut Vec<Line>) {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let (ok_a, t_a, err_a) = run_cli_experiment(&a);
    let (ok_b, t_b, err_b) = run_cli_experiment(&b);
    let (ja, jb) = (std::fs::read(&a).unwrap_or_default(), std::fs::read(&b).unwrap_or_default());
    report(
        lines,
        "9",
        "end-to-end runtime",
        ok_a && t_a < EXPERIMENT_BUDGET,
        format!("run-experiment --seed 42 took {:.1} s (< {} s){}", t_a.as_secs_f64(), EXPERIMENT_BUDGET.as_secs(), if ok_a { String::new() } else { format!(", failed: {err_a}") }),
    );
    report(
        lines,
        "8",
        "determinism",
        ok_a && ok_b && !ja.is_empty() && ja == jb,
        format!("two runs ({:.1} s, {:.1} s), {} vs {} bytes, identical: {}{}", t_a.as_secs_f64(), t_b.as_secs_f64(), ja.len(), jb.len(), ja == jb, if ok_b { String::new() } else { format!(", failed: {err_b}") }),
    );

    let parsed: Option<ExperimentReport> = serde_json::from_slice(&ja).ok();
    let Some(attack) = parsed.and_then(|r| r.attack) else {
        report(lines, "3", "attack viability", false, "no attack section in report".into());
        report(lines, "4", "defense efficacy", false, "no attack section in report".into());
        return;
    };
    report(
        lines,
        "3",
        "attack viability",
        attack.pre.accuracy >= MIN_PRE_ACCURACY,
        format!("pre-defense accuracy {:.4} (>= {MIN_PRE_ACCURACY})", attack.pre.accuracy),
    );
    let sweep = attack.post_by_level;
    let drop = 100.0 * (attack.pre.accuracy - sweep.high.accuracy);
    report(
        lines,
        "4",
        "defense efficacy",
        drop >= MIN_DROP_PP && sweep.is_monotone(),
        format!(
            "accuracy off {:.4} low {:.4} medium {:.4} high {:.4}; drop at high {drop:.2} pp (>= {MIN_DROP_PP}); monotone: {}",
            sweep.off.accuracy,
            sweep.low.accuracy,
            sweep.medium.accuracy,
            sweep.high.accuracy,
            sweep.is_monotone()
        ),
    );
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    gradient_fidelity(&mut lines);
    pow_statistics(&mut lines);
    tamper_detection(&mut lines);
    default_benchmark(&mut lines);
    experiment_criteria(&mut lines);

    lines.sort_by_key(|l| (l.id.starts_with('S'), l.id));
    println!("\nacceptance summary");
    for l in &lines {
        println!("  {} {:<3} {:<28} {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.name, l.detail);
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
