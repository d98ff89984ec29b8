use std::fmt::Write;

use amlb::attack::Metrics;
use amlb::defense::PrivacyLevel;
use amlb::sim::ExperimentReport;

fn metric_row(out: &mut String, label: &str, m: &Metrics) {
    let _ = writeln!(
        out,
        "  {label:<8} {:>8.4} {:>9.4} {:>8.4} {:>8.4}",
        m.accuracy, m.precision, m.recall, m.f1
    );
}

pub fn render(r: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment  seed {}  {}", r.seed, r.version);
    let _ = writeln!(
        out,
        "households {}  duration {} h  level {}",
        r.config.households,
        r.config.duration_s as f64 / 3600.0,
        r.config.level
    );
    if let Some(s) = &r.setup {
        let _ = writeln!(out, "\nsetup");
        let _ = writeln!(out, "  chain blocks          {}", s.chain_blocks);
        let _ = writeln!(out, "  meter transactions    {}", s.meter_transactions);
        let _ = writeln!(out, "  mean mining attempts  {:.1}", s.mean_mining_attempts);
        let _ = writeln!(out, "  chain bytes           {}", s.chain_bytes);
    }
    if let Some(a) = &r.attack {
        let _ = writeln!(out, "\nattacker   accuracy precision   recall       f1");
        metric_row(&mut out, "pre", &a.pre);
        for level in PrivacyLevel::ALL {
            metric_row(&mut out, level.name(), a.post_by_level.get(level));
        }
        let _ = writeln!(out, "  drop at {}: {:.2} pp", r.config.level, a.accuracy_drop_pp);
    }
    if let Some(d) = &r.defense {
        let _ = writeln!(
            out,
            "\nsurrogate accuracy  mean {:.4}  min {:.4}",
            d.surrogate_accuracy_mean, d.surrogate_accuracy_min
        );
    }
    if let Some(b) = &r.billing {
        let _ = writeln!(out, "\nbilling");
        let _ = writeln!(out, "  max window delta      {:.3e}", b.max_window_delta);
        let _ = writeln!(out, "  max window rel delta  {:.3e}", b.max_window_rel_delta);
        let _ = writeln!(out, "  max bill rel delta    {:.3e}", b.max_bill_rel_delta);
        for h in &b.households {
            let _ = writeln!(out, "  {:<16} {:>12.6} {:>12.6}", h.household, h.bill_before, h.bill_after);
        }
    }
    if let Some(e) = &r.error {
        let _ = writeln!(out, "\nerror: {e}");
    }
    out
}
