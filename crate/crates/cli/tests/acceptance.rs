//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use qsdlab::instances::{self, RandomChainSpec};
use qsdlab::quasi_limit::{self, Phi2Options};
use qsdlab::{q_process, qsd, quasi_ergodic, spectral};
use qsdlab::{AbsorbedKernel, ChainAnalysis, DiscreteMeasure, StateFunction};

const SUITE_SEED: u64 = 2024;
const SUITE_SIZE: usize = 100;
const SUITE_MAX_STATES: usize = 60;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Verdict {
        Verdict { passed, detail: detail.into() }
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn suite() -> (Vec<ChainAnalysis>, Duration) {
    let start = Instant::now();
    let analyses = instances::random_suite(SUITE_SEED, SUITE_SIZE, SUITE_MAX_STATES)
        .into_iter()
        .map(|k| ChainAnalysis::new(k).expect("suite chains are analysable"))
        .collect();
    (analyses, start.elapsed())
}

fn canonical() -> Vec<(&'static str, ChainAnalysis)> {
    [
        ("two_cycle(0.8,0.5)", instances::two_cycle(0.8, 0.5)),
        ("two_cycle(0.5,0.5)", instances::two_cycle(0.5, 0.5)),
        ("pure_cycle(3)", instances::pure_cycle(3)),
        ("lazy_pair(0.3)", instances::lazy_pair(0.3)),
    ]
    .into_iter()
    .map(|(name, k)| (name, ChainAnalysis::new(k).unwrap()))
    .collect()
}

fn nu_qs(a: &ChainAnalysis) -> DiscreteMeasure {
    let nu = DiscreteMeasure::probability(a.certificate().nu.clone()).unwrap();
    qsd::qsd_from_iterated(a.kernel(), a.cyclic(), &nu).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let a = ChainAnalysis::new(instances::two_cycle(0.8, 0.5)).unwrap();
    let theta_err = (a.theta0() - 0.4_f64.sqrt()).abs();
    let r = 1.6_f64.sqrt();
    let qs = nu_qs(&a);
    let qs_err = (qs.weights()[1] - r / (1.0 + r)).abs();
    let qp = q_process::build_q_process(&a).unwrap();
    let off_cycle = qp.matrix[(0, 0)].abs().max(qp.matrix[(1, 1)].abs());
    let on_cycle = (qp.matrix[(0, 1)] - 1.0).abs().max((qp.matrix[(1, 0)] - 1.0).abs());
    let qe = quasi_ergodic::nu_qe(&a);
    let qe_err = (qe.weights()[0] - 0.5).abs().max((qe.weights()[1] - 0.5).abs());
    let elapsed = start.elapsed();
    let passed = theta_err <= 1e-12
        && qs_err <= 1e-10
        && off_cycle <= 1e-12
        && on_cycle <= 1e-12
        && qe_err <= 1e-12
        && within(elapsed, 1.0);
    Verdict::new(
        passed,
        format!(
            "theta0 err {theta_err:.2e}, nu_QS(b) err {qs_err:.2e}, Q-process off-cycle {off_cycle:.2e}, nu_QE err {qe_err:.2e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(suite: &[ChainAnalysis], build: Duration) -> Verdict {
    let start = Instant::now();
    let (mut worst_residual, mut worst_roundtrip) = (0.0_f64, 0.0_f64);
    let mut bad = Vec::new();
    for (idx, a) in suite.iter().enumerate() {
        let (k, cyclic, t) = (a.kernel(), a.cyclic(), a.period());
        let nu = DiscreteMeasure::probability(a.certificate().nu.clone()).unwrap();
        let qs = qsd::qsd_from_iterated(k, cyclic, &nu).unwrap();
        let check = qsd::is_qsd(k, &qs, 1e-9).unwrap();
        worst_residual = worst_residual.max(check.residual);
        let roundtrip = qsd::iterated_from_qsd(&qs, cyclic).unwrap().l1_distance(&nu);
        worst_roundtrip = worst_roundtrip.max(roundtrip);
        let pt = k.power(t);
        let mut ok = check.is_qsd && roundtrip <= 1e-10;
        for i in 0..t {
            let mut w = vec![0.0; t];
            w[i] = 1.0;
            let member = qsd::iterated_qsd_family(k, cyclic, &nu, &w).unwrap();
            ok &= qsd::is_qsd(&pt, &member, 1e-9).unwrap().is_qsd;
            ok &= t == 1 || !qsd::is_qsd(k, &member, 1e-9).unwrap().is_qsd;
        }
        let profile = qsd::periodic_profile_weights(k, cyclic, &nu).unwrap();
        ok &= qsd::is_qsd(k, &qsd::iterated_qsd_family(k, cyclic, &nu, &profile).unwrap(), 1e-9).unwrap().is_qsd;
        let uniform = vec![1.0 / t as f64; t];
        let distinct = profile.iter().zip(&uniform).any(|(p, u)| (p - u).abs() > 1e-6);
        if distinct {
            let mixed = qsd::iterated_qsd_family(k, cyclic, &nu, &uniform).unwrap();
            ok &= !qsd::is_qsd(k, &mixed, 1e-9).unwrap().is_qsd;
        }
        if !ok {
            bad.push(idx);
        }
    }
    let elapsed = start.elapsed() + build;
    Verdict::new(
        bad.is_empty() && within(elapsed, 30.0),
        format!(
            "{} chains, max residual {worst_residual:.2e}, max round trip {worst_roundtrip:.2e}, failing {bad:?}, {:.2}s",
            suite.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(suite: &[ChainAnalysis]) -> Verdict {
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_rate_gap = f64::NEG_INFINITY;
    for (idx, a) in suite.iter().enumerate() {
        let d = quasi_limit::certify_main_estimate(a, 40).unwrap();
        if d.c_q_prime > 0.0 {
            worst_margin = worst_margin.max(d.ratio_sup / d.c_q_prime);
        }
        if let Some(rate) = d.fitted_rate {
            worst_rate_gap = worst_rate_gap.max(rate - d.alpha);
        }
        if !(d.holds && d.rate_ok) {
            bad.push(idx);
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        bad.is_empty() && within(elapsed, 60.0),
        format!(
            "max ratio/C'_Q {worst_margin:.3}, max fitted rate - alpha {worst_rate_gap:.3e}, failing {bad:?}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(suite: &[ChainAnalysis], canon: &[(&str, ChainAnalysis)]) -> Verdict {
    let mut bad = Vec::new();
    let mut worst = 0.0_f64;
    for (name, a) in canon.iter().map(|(n, a)| (n.to_string(), a)).chain(suite.iter().enumerate().map(|(i, a)| (format!("#{i}"), a))) {
        let s = spectral::classify_spectrum(a).unwrap();
        for r in &s.ring {
            worst = worst.max(r.eigenvalue_error);
        }
        if !s.passed() {
            bad.push(name);
        }
    }
    Verdict::new(bad.is_empty(), format!("max ring eigenvalue error {worst:.2e}, failing {bad:?}"))
}

fn criterion_5(suite: &[ChainAnalysis], canon: &[(&str, ChainAnalysis)]) -> Verdict {
    let mut bad = Vec::new();
    let (mut inv, mut oracle, mut semigroup) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (name, a) in canon.iter().map(|(n, a)| (n.to_string(), a)).chain(suite.iter().enumerate().map(|(i, a)| (format!("#{i}"), a))) {
        let qp = q_process::build_q_process(a).unwrap();
        let r = q_process::invariant_candidates(a, &qp).unwrap();
        let s = q_process::q_semigroup_check(&qp, a, 10);
        inv = inv.max(r.corrected_residual_l1);
        oracle = oracle.max(r.corrected_oracle_l1);
        semigroup = semigroup.max(s);
        if r.corrected_residual_l1 > 1e-10 || r.corrected_oracle_l1 > 1e-8 || s > 1e-10 {
            bad.push(name);
        }
    }
    let half = ChainAnalysis::new(instances::two_cycle(0.5, 0.5)).unwrap();
    let r = q_process::invariant_candidates(&half, &q_process::build_q_process(&half).unwrap()).unwrap();
    let stated_ok = (r.stated_residual_tv - 1.0 / 3.0).abs() <= 1e-12;
    Verdict::new(
        bad.is_empty() && stated_ok,
        format!(
            "max invariance {inv:.2e}, max oracle {oracle:.2e}, max semigroup {semigroup:.2e}, two_cycle(0.5,0.5) stated-formula TV residual {:.15} (L1 {:.15}), failing {bad:?}",
            r.stated_residual_tv, r.stated_residual_l1
        ),
    )
}

fn criterion_6(suite: &[ChainAnalysis], canon: &[(&str, ChainAnalysis)]) -> Verdict {
    let mut bad = Vec::new();
    let mut min_slack = f64::INFINITY;
    let mut min_nu_k = f64::INFINITY;
    for (name, a) in canon.iter().map(|(n, a)| (n.to_string(), a)).chain(suite.iter().enumerate().map(|(i, a)| (format!("#{i}"), a))) {
        match quasi_limit::build_phi2(a, &Phi2Options::default()) {
            Ok(w) => {
                let r = quasi_limit::check_witness(a, &w);
                min_slack = min_slack.min(r.lyapunov_slack);
                min_nu_k = min_nu_k.min(r.nu_k);
                if !r.passed {
                    bad.push(name);
                }
            }
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    Verdict::new(bad.is_empty(), format!("min Lyapunov slack {min_slack:.2e}, min nu(K) {min_nu_k:.3}, failing {bad:?}"))
}

fn criterion_7(suite: &[ChainAnalysis], canon: &[(&str, ChainAnalysis)]) -> Verdict {
    let start = Instant::now();
    let mut bad = Vec::new();
    let (mut mass_err, mut oracle_err, mut worst_scaled) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (idx, a) in suite.iter().enumerate() {
        let t = a.period();
        let n = a.len();
        let qe = quasi_ergodic::nu_qe(a);
        for i in 0..t {
            let m: f64 = a.cyclic().members(i).iter().map(|&x| qe.weights()[x]).sum();
            mass_err = mass_err.max((m - 1.0 / t as f64).abs());
        }
        let qp = q_process::build_q_process(a).unwrap();
        let oracle = q_process::invariant_candidates(a, &qp).unwrap().oracle_measure;
        let gap: f64 = qe.weights().iter().zip(&oracle).map(|(p, q)| (p - q).abs()).sum();
        oracle_err = oracle_err.max(gap);
        let mu = DiscreteMeasure::dirac(n, a.cyclic().members(0)[0]);
        let mut ok = gap <= 1e-10;
        for f in instances::test_functions(SUITE_SEED + idx as u64, n, 10) {
            let r = quasi_ergodic::qed_rate_report(a, &mu, &f, 1000).unwrap();
            worst_scaled = worst_scaled.max(r.scaled_sup);
            ok &= r.bounded;
        }
        if !ok {
            bad.push(format!("#{idx}"));
        }
    }
    let mut moments = Vec::new();
    for (name, a) in canon {
        let n = a.len();
        let mu = DiscreteMeasure::dirac(n, a.cyclic().members(0)[0]);
        let mut fs = vec![StateFunction::indicator(n, &a.cyclic().members(0))];
        fs.extend(instances::test_functions(7, n, 3));
        for f in &fs {
            let m50 = quasi_ergodic::second_moment_exact(a, &mu, f, 50).unwrap();
            let m200 = quasi_ergodic::second_moment_exact(a, &mu, f, 200).unwrap();
            moments.push(format!("{name}: {m50:.2e}->{m200:.2e}"));
            if m200 > m50 + quasi_ergodic::MOMENT_ROUNDOFF * f.sup_norm().powi(2) {
                bad.push(format!("{name} second moment"));
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        mass_err <= 1e-12 && bad.is_empty() && within(elapsed, 120.0),
        format!(
            "class mass err {mass_err:.2e}, oracle err {oracle_err:.2e}, max sup (N+1)|err| {worst_scaled:.3}, second moments [{}], failing {bad:?}, {:.2}s",
            moments[0],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(suite: &[ChainAnalysis], canon: &[(&str, ChainAnalysis)]) -> Verdict {
    let mut bad = Vec::new();
    let mut worst_spread = 0.0_f64;
    let mut min_dirac_gap = f64::INFINITY;
    for (name, a) in canon.iter().map(|(n, a)| (n.to_string(), a)).chain(suite.iter().enumerate().map(|(i, a)| (format!("#{i}"), a))) {
        let c = quasi_limit::qsd_convergence_criterion(a, &nu_qs(a)).unwrap();
        worst_spread = worst_spread.max(c.limit_spread);
        if !c.holds || c.limit_spread > 1e-9 {
            bad.push(name.clone());
        }
        if a.period() >= 2 && a.theta0() < 1.0 {
            let mu = DiscreteMeasure::dirac(a.len(), a.cyclic().members(0)[0]);
            let l0 = quasi_limit::conditional_limit(a, &mu, 0).unwrap();
            let l1 = quasi_limit::conditional_limit(a, &mu, 1).unwrap();
            let gap = l0.l1_distance(&l1);
            min_dirac_gap = min_dirac_gap.min(gap);
            let c = quasi_limit::qsd_convergence_criterion(a, &mu).unwrap();
            if (gap - 2.0).abs() > 1e-9 || c.holds {
                bad.push(format!("{name} dirac"));
            }
        }
    }
    Verdict::new(
        bad.is_empty(),
        format!("max nu_QS limit spread {worst_spread:.2e}, min single-class Dirac limit distance {min_dirac_gap:.12}, failing {bad:?}"),
    )
}

fn chain_json(k: &AbsorbedKernel) -> String {
    let labels = k.states();
    let m = k.matrix();
    let mut transitions = Vec::new();
    for (i, from) in labels.iter().enumerate() {
        for (j, to) in labels.iter().enumerate() {
            if m[(i, j)] > 0.0 {
                transitions.push(json!([from, to, m[(i, j)]]));
            }
        }
    }
    json!({ "states": labels, "transitions": transitions }).to_string()
}

fn run_cli(args: &[&str]) -> (Option<i32>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_qsd-lab")).args(args).output().expect("binary runs");
    (out.status.code(), out.stdout)
}

fn criterion_9(dir: &Path) -> Verdict {
    let chains = [
        ("two_cycle(0.95,0.98)", instances::two_cycle(0.95, 0.98)),
        ("pure_cycle(3)", instances::pure_cycle(3)),
        ("random t=3", mild_chain(91, 12, 3)),
        ("random t=1", mild_chain(92, 8, 1)),
    ];
    let mut bad = Vec::new();
    let mut notes = Vec::new();
    for (idx, (name, k)) in chains.iter().enumerate() {
        let path = dir.join(format!("mc{idx}.json"));
        std::fs::write(&path, chain_json(k)).unwrap();
        let args = ["simulate", "--chain", path.to_str().unwrap(), "--paths", "100000", "--horizon", "20", "--seed", "42"];
        let (code, first) = run_cli(&args);
        let (_, second) = run_cli(&args);
        let report: Value = serde_json::from_slice(&first).unwrap();
        let mc = &report["sections"]["montecarlo"];
        let attempts: Vec<String> = ["survival", "conditional_law", "time_average", "q_occupation"]
            .iter()
            .map(|key| format!("{key}:{}", mc[key]["attempts"]))
            .collect();
        notes.push(format!("{name} [{}]", attempts.join(" ")));
        if code != Some(0) || first != second {
            bad.push(format!("{name}: exit {code:?}, failures {}, identical {}", report["failures"], first == second));
        }
    }
    let report_path = dir.join("mc0.json");
    let args = ["report", "--chain", report_path.to_str().unwrap(), "--seed", "7"];
    let identical = run_cli(&args).1 == run_cli(&args).1;
    if !identical {
        bad.push("full report not byte-identical".into());
    }
    Verdict::new(bad.is_empty(), format!("{}, report byte-identical {identical}, failing {bad:?}", notes.join("; ")))
}

fn mild_chain(seed: u64, n_states: usize, period: usize) -> AbsorbedKernel {
    let spec = RandomChainSpec { n_states, period, survival: (0.95, 1.0), density: 0.5 };
    instances::seeded_block_cyclic(seed, &spec)
}

fn main() {
    let total = Instant::now();
    let (suite, build) = suite();
    let canon = canonical();
    let dir = std::env::temp_dir().join(format!("qsdlab-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let verdicts = [
        criterion_1(),
        criterion_2(&suite, build),
        criterion_3(&suite),
        criterion_4(&suite, &canon),
        criterion_5(&suite, &canon),
        criterion_6(&suite, &canon),
        criterion_7(&suite, &canon),
        criterion_8(&suite, &canon),
        criterion_9(&dir),
    ];
    let _ = std::fs::remove_dir_all(&dir);
    let mut failed = 0;
    for (i, v) in verdicts.iter().enumerate() {
        println!("criterion {} {}: {}", i + 1, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} of {} criteria passed in {:.1}s", verdicts.len() - failed, verdicts.len(), total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
