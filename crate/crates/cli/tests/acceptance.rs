//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use css_envelope::envelope::{self, AxisSpec, EpochObservation, Regime, Theta};
use css_envelope::sim::{self, quiet_spec};
use css_envelope::validate::{self, CheckRow, ChiCase, ExtractorSpec, Status, VerifySpec};

const SEED: u64 = 20_240_601;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass_all(rows: &[CheckRow]) -> Outcome {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.status != Status::Pass)
        .map(|r| format!("{} {}: {}", r.status.label(), r.name, r.detail))
        .collect();
    Outcome {
        ok: bad.is_empty() && !rows.is_empty(),
        detail: if bad.is_empty() {
            format!("{} checks pass", rows.len())
        } else {
            bad.join("; ")
        },
    }
}

fn within(out: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let ok = out.ok && elapsed <= limit;
    Outcome {
        ok,
        detail: format!(
            "{} ({:.1}s, limit {}s)",
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    }
}

fn rt_oracle() -> Outcome {
    let row = validate::rt_oracle_check(SEED, 1000);
    let converged_ok = row.detail.contains("reference R = Some(10)");
    let mut out = pass_all(&[row]);
    out.ok &= converged_ok;
    out
}

fn monotonicity() -> Outcome {
    let (m, th) = envelope::reference_model();
    let mut rows = validate::monotonicity_checks(SEED);
    rows.push(validate::sensitivity_check(&m, &th));
    pass_all(&rows)
}

fn probabilistic() -> Outcome {
    let mut rows = Vec::new();
    for ratio in [4.0, 6.0, 8.0, 12.0] {
        rows.push(validate::false_rejection_check(ratio, 1_000_000, SEED));
    }
    for d in [1usize, 2, 7] {
        for eta in [d as f64 + 1.0, 5.0 * d as f64] {
            rows.push(validate::chi_square_check(
                ChiCase { d_y: d, eta },
                1_000_000,
                SEED,
            ));
        }
    }
    rows.push(validate::extractor_check(
        &ExtractorSpec {
            n_bits: 26,
            min_entropy: 24.0,
            out_bits: 4,
            hashes: 8,
        },
        SEED,
    ));
    pass_all(&rows)
}

fn stability() -> Outcome {
    let mut rows: Vec<CheckRow> = (0..3)
        .map(|i| validate::jump_system_check(i, 1000, 10_000, SEED))
        .collect();
    rows.push(validate::iss_check(5, 100, SEED));
    pass_all(&rows)
}

fn counterexample() -> Outcome {
    let epochs = 1000;
    let (m, th) = envelope::counterexample_model(1);
    let zero = m.budget.eps_kem == 0.0 && m.budget.eps_tag == 0.0 && m.budget.eps_puf == 0.0;
    let (log, _) = sim::run(&m, &th, &quiet_spec(), epochs, SEED).expect("counterexample runs");
    let denied = log.iter().all(|r| {
        r.auth == css_envelope::crypto::AuthOutcome::Accept && !r.released && r.reason == "deadline"
    });
    let (m0, th0) = envelope::counterexample_model(0);
    let (log0, _) = sim::run(&m0, &th0, &quiet_spec(), epochs, SEED).expect("flipped model runs");
    let released = log0.iter().all(|r| r.released);
    let report = m
        .evaluate(&th, &EpochObservation::default())
        .expect("evaluates");
    Outcome {
        ok: zero && denied && released && report.summary == "denied: deadline" && log.len() == epochs as usize,
        detail: format!(
            "R = D + 1 us: {epochs}/{epochs} verified, all denied on deadline = {denied}; R = D: all released = {released}; verdict {:?}",
            report.summary
        ),
    }
}

fn conjunctivity() -> Outcome {
    let (m, th) = envelope::reference_model();
    let mut out = pass_all(&[validate::conjunctivity_check(&m, &th)]);
    for (bus, st) in [(0.0, 0.0), (1e-3, 0.0), (0.0, 2e-4), (1e-3, 2e-4)] {
        let rep = m
            .evaluate(
                &th,
                &EpochObservation {
                    eps_bus_hat: bus,
                    eps_st_hat: st,
                    ..Default::default()
                },
            )
            .expect("evaluates");
        if !(rep.feasible && rep.advantage <= m.eps_star + bus + st) {
            out.ok = false;
            out.detail += &format!(
                "; advantage {:.3e} exceeds eps_star + {bus} + {st}",
                rep.advantage
            );
        }
    }
    out
}

fn regimes() -> Outcome {
    let (m, th) = envelope::reference_model();
    let mut out = pass_all(&validate::regime_checks(&m, &th));
    let axis = AxisSpec {
        name: "l_kem".into(),
        from: 0.0,
        to: 3.0,
        steps: 3,
    };
    let pts = envelope::sweep(&m, &th, &axis, None).expect("sweep");
    let jumps: Vec<f64> = pts.iter().filter(|p| p.jump).map(|p| p.axis1).collect();
    let slack: Vec<i64> = pts.iter().map(|p| p.slack_us.expect("converged")).collect();
    let drops: Vec<i64> = slack.windows(2).map(|w| w[0] - w[1]).collect();
    let steps = drops.iter().filter(|&&d| d > 1).count();
    let map = m.jump_map().expect("jump map");
    let labels = [
        Theta {
            v_sigma: 0.0,
            a_d: 0.0,
            delta_tc: 0.0,
            s_w: 0.0,
            m_s: 0.3,
            ..th
        },
        Theta {
            v_sigma: 10.0,
            m_s: 0.2,
            ..th
        },
        Theta {
            l_kem: 2,
            m_s: 0.2,
            ..th
        },
        Theta {
            m_s: 0.03,
            s_w: 0.5,
            ..th
        },
    ]
    .map(|t| m.classify(&t, &map));
    let ok = jumps == vec![3.0]
        && steps == 1
        && labels == [Regime::R0, Regime::R1, Regime::R2, Regime::R3];
    out.ok &= ok;
    out.detail += &format!(
        "; L_kem 0..3 slack {slack:?}, jump at {jumps:?}, labels {:?}",
        labels.map(|r| r.label())
    );
    out
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_css-envelope")
}

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

fn run_in(dir: &Path, args: &[&str], threads: &str) -> bool {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("CSS_ENVELOPE_THREADS", threads)
        .output()
        .map(|o| o.status.code().is_some_and(|c| c <= 1))
        .unwrap_or(false)
}

fn reproducibility() -> Outcome {
    let cfg = reference_config();
    let c = cfg.to_str().expect("utf-8 path");
    // A reduced verification battery keeps this criterion quick; the full
    // battery runs above.
    let text = std::fs::read_to_string(&cfg).expect("config");
    let small = VerifySpec {
        rt_sets: 100,
        fr_trials: 20_000,
        chi_trials: 20_000,
        extractor: ExtractorSpec {
            n_bits: 16,
            min_entropy: 14.0,
            out_bits: 2,
            hashes: 2,
        },
        jump_systems: 1,
        jump_runs: 20,
        jump_epochs: 200,
        iss_plants: 1,
        iss_runs: 5,
        sim_epochs: 500,
        ..Default::default()
    };
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("analyze-rt", vec!["analyze", c, "--target", "rt"]),
        (
            "analyze-envelope",
            vec!["analyze", c, "--target", "envelope"],
        ),
        (
            "analyze-stability",
            vec!["analyze", c, "--target", "stability"],
        ),
        ("analyze-entropy", vec!["analyze", c, "--target", "entropy"]),
        (
            "sweep",
            vec![
                "sweep",
                c,
                "--axis",
                "v_sigma",
                "--from",
                "0",
                "--to",
                "10",
                "--steps",
                "10",
                "--axis2",
                "l_kem:0:8:8",
            ],
        ),
        (
            "simulate",
            vec!["simulate", c, "--epochs", "5000", "--seed", "1"],
        ),
    ];
    let mut mismatched = Vec::new();
    let dirs = [
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    ];
    for (k, d) in dirs.iter().enumerate() {
        let threads = if k == 0 { "1" } else { "3" };
        for (_, args) in &runs {
            if !run_in(d.path(), args, threads) {
                return Outcome {
                    ok: false,
                    detail: format!("run failed: {args:?}"),
                };
            }
        }
        let mut table: toml::Table = toml::from_str(&text).expect("toml");
        table.insert(
            "verify".into(),
            toml::Value::try_from(&small).expect("verify table"),
        );
        let small_cfg = d.path().join("small.toml");
        std::fs::write(&small_cfg, toml::to_string(&table).expect("toml")).expect("write");
        if !run_in(
            d.path(),
            &["verify-bounds", small_cfg.to_str().unwrap()],
            threads,
        ) {
            return Outcome {
                ok: false,
                detail: "verify-bounds run failed".into(),
            };
        }
    }
    let mut compared = 0;
    for (name, _) in runs
        .iter()
        .chain(std::iter::once(&("verify-bounds", vec![])))
    {
        let read = |d: &tempfile::TempDir| {
            std::fs::read(
                d.path()
                    .join("out/reference")
                    .join(name)
                    .join("manifest.json"),
            )
            .ok()
        };
        match (read(&dirs[0]), read(&dirs[1])) {
            (Some(a), Some(b)) if a == b => compared += 1,
            _ => mismatched.push(name.to_string()),
        }
    }
    Outcome {
        ok: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{compared} commands, byte-identical manifests across two runs (1 and 3 worker threads)")
        } else {
            format!("manifests differ for {}", mismatched.join(", "))
        },
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 8] = [
        ("response-time oracle equivalence", rt_oracle, 30),
        ("monotonicity battery and sensitivities", monotonicity, 10),
        ("probabilistic bound domination", probabilistic, 300),
        ("jump-system contraction and ISS envelope", stability, 300),
        ("authentication/deadline counterexample", counterexample, 60),
        ("envelope conjunctivity", conjunctivity, 60),
        ("regime sweep reproduction", regimes, 30),
        ("CLI reproducibility", reproducibility, 600),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = within(f(), t.elapsed(), Duration::from_secs(*limit));
        println!(
            "{} {}. {name}: {}",
            if out.ok { "PASS" } else { "FAIL" },
            i + 1,
            out.detail
        );
        failed += !out.ok as usize;
    }
    println!(
        "{}/{} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
