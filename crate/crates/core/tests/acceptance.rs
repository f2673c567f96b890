//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use scwqkd_core::distill::*;
use scwqkd_core::linkmodel::*;
use scwqkd_core::presets;
use scwqkd_core::protocol::{measured_qber, sift, simulate_block};
use scwqkd_core::session::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn photon_budget() -> Outcome {
    let mu = sideband_photons_per_cycle(&SourceConfig::default());
    let (lo, hi) = reference::SIDEBAND_PHOTONS;
    outcome(
        (lo..=hi).contains(&mu),
        format!("{mu:.5} photons per cycle"),
    )
}

fn qber_reproduction() -> Outcome {
    let config = SessionConfig::default();
    let budget = config.budget().unwrap();
    let q = analytic_qber(&budget).unwrap();
    let start = Instant::now();
    let s = sift(&simulate_block(&budget, 100_000_000, 11).unwrap());
    let secs = start.elapsed().as_secs_f64();
    let n = s.alice_key.len() as f64;
    let measured = measured_qber(&s.alice_key, &s.bob_key).unwrap();
    let se = (q * (1.0 - q) / n).sqrt();
    let pass = (0.018..=0.023).contains(&q) && (measured - q).abs() <= 4.0 * se && secs < 60.0;
    outcome(
        pass,
        format!(
            "analytic {q:.5}, Monte Carlo {measured:.5} over {n} bits (SE {se:.5}, {secs:.2} s)"
        ),
    )
}

fn secret_rate() -> Outcome {
    let preset = presets::kazan_apastovo();
    let config = SessionConfig {
        n_blocks: 30,
        seed: 1,
        ..preset.config
    };
    let report = run_session(&config).unwrap();
    let rate = report.summary.mean_secret_rate_bps;
    let ideal = SessionConfig {
        epsilon_sys: 1.0,
        ..config
    }
    .analytic()
    .unwrap()
    .secret_rate_bps;
    outcome(
        (9.6..=14.4).contains(&rate) && ideal >= reference::SECRET_RATE_BPS,
        format!("{rate:.3} bps over 30 blocks; ideal (ε_sys = 1) {ideal:.2} bps"),
    )
}

fn totals_consistency() -> Outcome {
    let report = run_session(&SessionConfig {
        n_blocks: 2,
        ..presets::kazan_apastovo().config
    })
    .unwrap();
    let bits = consistency_report(&report)
        .into_iter()
        .find(|c| c.name == "bits/duration")
        .unwrap();
    let quoted = bits.value.unwrap();
    let kpm = keys_per_minute(12.0, reference::KEY_BITS);
    let pass = (quoted - 11.78).abs() < 0.005
        && (quoted / reference::SECRET_RATE_BPS - 1.0).abs() <= 0.02
        && kpm == reference::KEYS_PER_MINUTE;
    outcome(
        pass,
        format!("{quoted:.4} bps quoted; {kpm} keys per minute at 12 bps"),
    )
}

fn stability_band() -> Outcome {
    let config = SessionConfig {
        n_blocks: 100,
        seed: 2,
        ..presets::kazan_apastovo().config
    };
    let report = run_session(&config).unwrap();
    let (lo, hi) = reference::QBER_BAND;
    let outside = stability_monitor(&report, lo, hi).len();
    let non_empty = report.summary.non_empty_blocks;
    let inside = non_empty.saturating_sub(outside as u64);
    let frac = inside as f64 / non_empty.max(1) as f64;
    outcome(
        non_empty > 0 && frac >= 0.99,
        format!("{inside}/{non_empty} non-empty blocks in [{lo}, {hi}]"),
    )
}

fn distillation() -> Outcome {
    let start = Instant::now();
    let n = 10_000;
    let bound = 1.25 * n as f64 * binary_entropy(0.02).unwrap();
    let mut equal = 0;
    let mut max_leak = 0;
    for seed in 0..100u64 {
        let (a, b) = common::keys_with_errors(n, 200, seed);
        let (fixed, report) = cascade_correct(&a, &b, 0.02, seed).unwrap();
        if verify_keys(&a.advance(Stage::Reconciled).unwrap(), &fixed) {
            equal += 1;
        }
        max_leak = max_leak.max(report.leaked_bits);
    }
    let mut r = common::rng(606);
    let mut oracle_ok = 0;
    for _ in 0..200 {
        let n = r.random_range(1..=32usize);
        let l = r.random_range(0..=n);
        let key: Vec<bool> = (0..n).map(|_| r.random()).collect();
        let seed: Vec<bool> = (0..(n + l).saturating_sub(1)).map(|_| r.random()).collect();
        let k = KeyBuffer::new(key.iter().copied().collect(), Stage::Reconciled);
        let s = seed.iter().copied().collect();
        let got = common::to_bools(toeplitz_hash(&k, &s, l).unwrap().bits());
        if got == common::toeplitz_oracle(&key, &seed, l) {
            oracle_ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        equal >= 99 && max_leak as f64 <= bound && oracle_ok == 200 && secs < 60.0,
        format!(
            "{equal}/100 verified, max leak {max_leak} (bound {bound:.0}), {oracle_ok}/200 oracle matches, {secs:.2} s"
        ),
    )
}

fn analytic_equivalence() -> Outcome {
    let cycles = 10_000_000u64;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (i, &mu) in [1e-3, 3e-3, 1e-2, 3e-2, 1e-1].iter().enumerate() {
        for (j, &(p_dark, v)) in [(0.0, 0.96), (1e-5, 0.9), (1e-4, 0.8), (5e-4, 1.0)]
            .iter()
            .enumerate()
        {
            let budget = LinkBudget::from_parts(mu, p_dark, v).unwrap();
            let s = sift(&simulate_block(&budget, cycles, (i * 10 + j) as u64).unwrap());
            let p = (2.0 * p_dark + mu) / 4.0;
            let expected = cycles as f64 * p;
            let n = s.alice_key.len() as f64;
            let z_sift = (n - expected).abs() / (expected * (1.0 - p)).sqrt();
            let q = analytic_qber(&budget).unwrap();
            let measured = measured_qber(&s.alice_key, &s.bob_key).unwrap();
            let se = (q * (1.0 - q) / n).sqrt();
            let z_q = if se > 0.0 {
                (measured - q).abs() / se
            } else if measured == q {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z_sift).max(z_q);
            points += 1;
        }
    }
    outcome(
        points == 20 && worst <= 4.0,
        format!("{points} budgets, worst deviation {worst:.2} standard errors"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig {
        n_blocks: 8,
        seed: 99,
        ..presets::kazan_apastovo().config
    };
    let mut files = Vec::new();
    for schedule in [Schedule::Interleaved, Schedule::Concurrent] {
        for run in 0..2 {
            let path = dir.path().join(format!("{schedule:?}-{run}.json"));
            let report = run_session_with(&config, schedule, None).unwrap();
            std::fs::write(&path, report.to_json()).unwrap();
            files.push(std::fs::read(&path).unwrap());
        }
    }
    let identical = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        identical,
        format!(
            "{} report files, {} bytes each, identical: {identical}",
            files.len(),
            files[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("photon budget", photon_budget),
        ("QBER reproduction", qber_reproduction),
        ("secret rate", secret_rate),
        ("totals consistency", totals_consistency),
        ("stability band", stability_band),
        ("distillation correctness", distillation),
        ("analytic/Monte Carlo equivalence", analytic_equivalence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
