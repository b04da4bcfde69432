//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mosafe_core::dsm::{tracker_fn_sequence, ConfigKind, DetectorModel, DsmConfig};
use mosafe_core::fault_tree::{build_hbb_tree, HAZ_FN, OFF_SPEED};
use mosafe_core::risk::{binomial_tail_monte_carlo, hep_rate_bound, monte_carlo_crash_prob};
use mosafe_core::scenario::{derive_geometry, required_braking, simulate, simulate_interval, EtaSignal, InjectionSpec};
use mosafe_core::severity::{
    dominance_check, severity_patterns, severity_tau_table, worst_case_start, ImpactSeverityBounds, SearchOptions,
};
use mosafe_core::wpp::{verify_wpp, WppVerifyOptions};
use mosafe_core::{CountPattern, ErrorSequence, Pattern, ScenarioParams};

type Outcome = (bool, String);

fn params() -> ScenarioParams {
    ScenarioParams::running_example()
}

fn near(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn c1_table() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t0 = Instant::now();
    let tt = pool
        .install(|| severity_tau_table(&params(), &ImpactSeverityBounds::default(), 1e-3))
        .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let got = [tt.tau_contact, tt.tau_s0, tt.tau_s1, tt.tau_s2];
    let want = [1.97, 2.29, 2.76, 3.57];
    let taus_ok = got.iter().zip(want).all(|(g, w)| near(*g, w, 0.02));
    let ok = taus_ok && near(tt.tau_max, 7.833, 0.005) && secs < 30.0;
    (
        ok,
        format!(
            "tau = ({:.3}, {:.3}, {:.3}, {:.3}) want ({}, {}, {}, {}) +-0.02, tau_max {:.4}, {secs:.2} s",
            got[0], got[1], got[2], got[3], want[0], want[1], want[2], want[3], tt.tau_max
        ),
    )
}

fn c2_two_interruptions() -> Outcome {
    let p = params();
    let rho: ErrorSequence = "{26..45,66..87}@150".parse().unwrap();
    let traj = simulate(&p, &InjectionSpec::ubi(rho)).unwrap();
    let v = traj.outcome.v_impact;
    // Braking demand once the first interruption ends (step 46).
    let after = traj.samples.iter().find(|s| s.t >= 4.6 - 1e-9).unwrap();
    let a_req = required_braking(after.d, after.v, p.delta_s_stand).unwrap();
    let ok = v.is_some_and(|v| near(v, 6.0, 0.3)) && near(a_req, 2.0, 0.1);
    (
        ok,
        format!("v_impact {v:?} want 6.0+-0.3, a_b_req {a_req:.3} want 2.0+-0.1"),
    )
}

fn c3_single_interruption() -> Outcome {
    let p = params();
    let g = derive_geometry(&p).unwrap();
    let opts = SearchOptions::default();
    let w239 = worst_case_start(&p, &g, 2.39, &opts).unwrap();
    let w200 = worst_case_start(&p, &g, 2.00, &opts).unwrap();
    // Dense scan of starts for the non-crashing duration.
    let n = 2000;
    let span = g.t_max - 1.9;
    let crash_190 = (0..=n)
        .into_par_iter()
        .filter(|i| {
            let t = simulate_interval(&p, &g, span * *i as f64 / n as f64, 1.9, &EtaSignal::Zero).unwrap();
            t.outcome.collided
        })
        .count();
    let ok = w239.v_impact.is_some_and(|v| near(v, 6.0, 0.3)) && crash_190 == 0 && w200.v_impact.is_some();
    (
        ok,
        format!(
            "2.39 s -> {:?}, 1.90 s crashes at {crash_190}/{} starts, 2.00 s -> {:?}",
            w239.v_impact,
            n + 1,
            w200.v_impact
        ),
    )
}

fn c4_thresholds() -> Outcome {
    let p = params();
    let g = derive_geometry(&p).unwrap();
    let n = g.n_max;
    let sampled = Pattern::Count(CountPattern::new(0, 18, n).unwrap()).sample(4, 2000);
    let singles: Vec<ErrorSequence> = (1..=18u32)
        .flat_map(|len| (0..=n - len).map(move |lo| ErrorSequence::from_runs(&[(lo, lo + len - 1)], n).unwrap()))
        .collect();
    let crashes = sampled
        .par_iter()
        .chain(singles.par_iter())
        .filter(|rho| {
            simulate(&p, &InjectionSpec::ubi((*rho).clone()))
                .unwrap()
                .outcome
                .collided
        })
        .count();
    let tt = severity_tau_table(&p, &ImpactSeverityBounds::default(), 1e-3).unwrap();
    let spt = severity_patterns(&tt, n).unwrap();
    let (k0, k3) = (spt.p_s0_3.k_min(), spt.p_s3.k_min());
    let ok = crashes == 0 && k0 == 19 && k3 == 36;
    (
        ok,
        format!(
            "{crashes} crashes in {} sequences with <= 18 steps, k_min S0..3 = {k0} (want 19), S3 = {k3} (want 36)",
            sampled.len() + singles.len()
        ),
    )
}

fn random_multi_interval(rng: &mut ChaCha8Rng, n_max: u32) -> ErrorSequence {
    let runs = rng.random_range(2..=4);
    let mut steps = Vec::new();
    for _ in 0..runs {
        let len = rng.random_range(5..=30u32);
        let lo = rng.random_range(0..=n_max - len);
        steps.extend(lo..lo + len);
    }
    steps.sort_unstable();
    steps.dedup();
    ErrorSequence::new(steps, n_max).unwrap()
}

fn c5_dominance() -> Outcome {
    let p = params();
    let n = derive_geometry(&p).unwrap().n_max;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs: Vec<ErrorSequence> = (0..1000).map(|_| random_multi_interval(&mut rng, n)).collect();
    let results: Vec<_> = seqs.par_iter().map(|rho| dominance_check(rho, &p).unwrap()).collect();
    let crashing = results.iter().filter(|r| r.v_multi.is_some()).count();
    let violations = results.iter().filter(|r| !r.ok).count();
    (
        violations == 0,
        format!("{violations} violations in 1000 sequences ({crashing} crashing)"),
    )
}

fn c6_uib() -> Outcome {
    let p = params();
    let n = derive_geometry(&p).unwrap().n_max;
    let run = |eta| simulate(&p, &InjectionSpec::uib(n, eta)).unwrap();
    let (a, b) = (run(0.14), run(0.5));
    let ok = !a.outcome.collided && !b.outcome.collided && a.final_overshoot <= 0.025 && b.final_overshoot <= 2.0;
    (
        ok,
        format!(
            "eta 0.14 overshoot {:.3e} m, eta 0.5 overshoot {:.3} m, collided ({}, {})",
            a.final_overshoot, b.final_overshoot, a.outcome.collided, b.outcome.collided
        ),
    )
}

fn c7_identity() -> Outcome {
    let short = ScenarioParams {
        v_init: 0.8,
        v_max: 0.8,
        ..params()
    };
    let n_short = derive_geometry(&short).unwrap().n_max;
    let exhaustive = WppVerifyOptions {
        exhaustive: true,
        detector_k_min: Some(0),
        ..WppVerifyOptions::default()
    };
    let a = verify_wpp(&short, &CountPattern::at_least(0, n_short).unwrap(), &exhaustive).unwrap();
    let sampled = WppVerifyOptions {
        trials: 1000,
        seed: 7,
        detector_k_min: Some(0),
        ..WppVerifyOptions::default()
    };
    let b = verify_wpp(&params(), &CountPattern::at_least(0, 150).unwrap(), &sampled).unwrap();
    let violations = a.identity_violations.len() + b.identity_violations.len();
    let ok = n_short == 8 && a.identity_checked == 256 && b.identity_checked == 1000 && violations == 0;
    (
        ok,
        format!(
            "{} + {} sequences, {violations} violations, max |da| {:.1e}",
            a.identity_checked,
            b.identity_checked,
            a.max_accel_diff.max(b.max_accel_diff)
        ),
    )
}

fn c8_tracker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut grew = 0;
    for i in 0..10_000 {
        let c = i % 11;
        let len = rng.random_range(1..=150usize);
        let p = rng.random::<f64>();
        let det: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < p).collect();
        let out = tracker_fn_sequence(&det, c);
        if out.iter().filter(|b| **b).count() > det.iter().filter(|b| **b).count() {
            grew += 1;
        }
    }
    let mut prefix_broken = 0;
    for c in 0..=10u32 {
        for k in 0..=150usize {
            let det: Vec<bool> = (0..150).map(|i| i < k).collect();
            if tracker_fn_sequence(&det, c) != det {
                prefix_broken += 1;
            }
        }
    }
    (
        grew == 0 && prefix_broken == 0,
        format!("{grew} count increases in 10000 sequences, {prefix_broken} altered prefix runs"),
    )
}

fn c9_fault_tree() -> Outcome {
    let tree = build_hbb_tree(0.14, &CountPattern::at_least(19, 150).unwrap()).unwrap();
    let probs = [(HAZ_FN.to_string(), 1e-4), (OFF_SPEED.to_string(), 1e-5)]
        .into_iter()
        .collect();
    let exact = tree.eval_exact(&probs).unwrap().probability;
    let approx = tree.eval_rare_approx(&probs).unwrap();
    let ok = near(exact, 1.1e-4 - 1e-9, 1e-15)
        && near(approx.probability, 1.1e-4, 1e-15)
        && near(approx.error_bound, 1e-9, 1e-18);
    (
        ok,
        format!(
            "exact {exact:e}, approx {:e}, error bound {:e}",
            approx.probability, approx.error_bound
        ),
    )
}

fn c10_binomial() -> Outcome {
    let bound = hep_rate_bound(0.05, 150, 19).unwrap();
    let trials = 1_000_000;
    let mc = binomial_tail_monte_carlo(0.05, 150, 19, trials, 10).unwrap();
    let half = 0.5 * (mc.ci95.1 - mc.ci95.0);
    let binom_ok = (mc.estimate - bound).abs() <= 3.0 * half;

    let p = params();
    let detector = DetectorModel {
        r_max: 200.0,
        p_fn: 0.05,
        sigma_d: 0.0,
    };
    let dsm_trials = 100_000;
    let cfg = DsmConfig::new(ConfigKind::Dsm, None, detector, 3);
    let est = monte_carlo_crash_prob(&p, &cfg, &ImpactSeverityBounds::default(), dsm_trials, 11).unwrap();
    let sigma = est.crash.std_error(dsm_trials);
    let dsm_ok = est.crash.estimate <= bound + 3.0 * sigma;
    (
        binom_ok && dsm_ok,
        format!(
            "bound {bound:.4e}, binomial MC {:.4e} (3 half-widths {:.1e}), DSM crash {:.2e} over {dsm_trials} runs",
            mc.estimate,
            3.0 * half,
            est.crash.estimate
        ),
    )
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn c11_reproducible() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_mosafe");
    let dir = std::env::temp_dir().join(format!("mosafe-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let cfg = |n: &str| repo().join("configs").join(n).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = vec![
        vec![
            "simulate".into(),
            "--config".into(),
            cfg("two_interruptions.json"),
            "--csv".into(),
            "{dir}/traj.csv".into(),
        ],
        vec!["severity-table".into(), "--config".into(), cfg("running_example.json")],
        vec!["wpp-verify".into(), "--config".into(), cfg("wpp.json")],
        vec![
            "ft-eval".into(),
            "--config".into(),
            cfg("hbb_tree.json"),
            "--dot".into(),
            "{dir}/tree.dot".into(),
        ],
        vec!["risk".into(), "--config".into(), cfg("risk.json")],
        vec![
            "mc-validate".into(),
            "--config".into(),
            cfg("mc.json"),
            "--trials".into(),
            "5000".into(),
        ],
        vec![
            "patterns".into(),
            "count(19,150,150)".into(),
            "--sample".into(),
            "5".into(),
            "--seed".into(),
            "3".into(),
        ],
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for (i, args) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let sub = dir.join(format!("{i}-{rep}"));
            fs::create_dir_all(&sub).unwrap();
            let args: Vec<String> = args
                .iter()
                .map(|a| a.replace("{dir}", &sub.to_string_lossy()))
                .collect();
            for format in ["text", "json"] {
                let report = sub.join(format!("report.{format}"));
                let status = Command::new(bin)
                    .args(["--format", format, "--out", &report.to_string_lossy()])
                    .args(&args)
                    .stderr(std::process::Stdio::null())
                    .status()
                    .unwrap();
                assert!(status.code().is_some_and(|c| c <= 1), "{args:?} failed");
            }
            let mut entries: Vec<_> = fs::read_dir(&sub).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            outputs.push(
                entries
                    .iter()
                    .map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        files += outputs[0].len();
        if outputs[0] != outputs[1] {
            differing.push(args[0].clone());
        }
    }
    let _ = fs::remove_dir_all(&dir);
    (
        differing.is_empty(),
        format!(
            "{files} output files across {} commands, differing: {differing:?}",
            commands.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("severity duration table", c1_table),
        ("two-interruption crash", c2_two_interruptions),
        ("single-interruption placement", c3_single_interruption),
        ("UBI step thresholds", c4_thresholds),
        ("single interval dominance", c5_dominance),
        ("insufficient braking", c6_uib),
        ("policy injection identity", c7_identity),
        ("tracker false negatives", c8_tracker),
        ("fault tree evaluation", c9_fault_tree),
        ("binomial bound vs Monte Carlo", c10_binomial),
        ("reproducible outputs", c11_reproducible),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
