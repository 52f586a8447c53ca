use std::cell::OnceCell;

use serde_json::{json, Map, Value};

use qsdlab::io::ChainSpec;
use qsdlab::monte_carlo::{self, TrajectoryBatch};
use qsdlab::quasi_limit::{self, Phi2Options};
use qsdlab::{instances, linalg, periodicity, q_process, qsd, quasi_ergodic, spectral};
use qsdlab::{DiscreteMeasure, Result, StateFunction};

use crate::report::TsvCurve;
use crate::{Context, Section};

fn to_value<T: serde::Serialize + ?Sized>(x: &T) -> Value {
    serde_json::to_value(x).expect("report values serialize")
}

fn labelled(labels: &[String], values: &[f64]) -> Value {
    let map: Map<String, Value> = labels.iter().zip(values).map(|(l, v)| (l.clone(), json!(v))).collect();
    Value::Object(map)
}

pub(crate) fn chain(spec: &ChainSpec) -> Value {
    let k = &spec.kernel;
    json!({
        "n_states": k.len(),
        "states": k.states(),
        "absorption": labelled(k.states(), k.absorption()),
        "stochastic": k.is_stochastic(),
        "metadata": spec.metadata.clone().unwrap_or(Value::Null),
    })
}

pub(crate) fn periodicity(ctx: &Context) -> Result<Section> {
    let k = ctx.analysis.kernel();
    let cyclic = ctx.analysis.cyclic();
    let classes: Map<String, Value> = k.states().iter().enumerate().map(|(x, l)| (l.clone(), json!(cyclic.class_of(x)))).collect();
    let residual = periodicity::verify_partition(k, cyclic);
    let mut s = Section::new(json!({
        "period": cyclic.period(),
        "classes": classes,
        "partition_residual": residual,
    }));
    s.check("partition", residual <= qsdlab::chain::PARTITION_TOLERANCE);
    Ok(s)
}

pub(crate) fn spectral(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let cert = a.certificate();
    let spectrum = spectral::classify_spectrum(a)?;
    let tol = ctx.tol("spectrum");
    let mut s = Section::new(json!({ "certificate": to_value(cert), "classification": to_value(&spectrum) }));
    s.check("right_eigenvector", cert.right_residual <= tol);
    s.check("left_eigenvector", cert.left_residual <= tol);
    s.check("one_step_bound", cert.one_step_slack >= -1e-12);
    s.check("peripheral_ring", spectrum.ring_ok);
    s.check("ring_eigenfunctions", spectrum.eigenfunctions_ok);
    s.check("bulk_radius", spectrum.bulk_ok);
    s.check("extended_unit_eigenvalue", spectrum.unit_ok);
    Ok(s)
}

pub(crate) fn qsd(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let (k, cyclic) = (a.kernel(), a.cyclic());
    let t = a.period();
    let tol = ctx.tol("qsd");
    let nu = DiscreteMeasure::probability(a.certificate().nu.clone())?;
    let nu_qs = qsd::qsd_from_iterated(k, cyclic, &nu)?;
    let check = qsd::is_qsd(k, &nu_qs, tol)?;
    let roundtrip = qsd::iterated_from_qsd(&nu_qs, cyclic)?.l1_distance(&nu);
    let survival = k.survival_probability(&nu_qs, 1)?;
    let pt = k.power(t);
    let mut extremes = Vec::with_capacity(t);
    let mut extremes_ok = true;
    for i in 0..t {
        let mut w = vec![0.0; t];
        w[i] = 1.0;
        let member = qsd::iterated_qsd_family(k, cyclic, &nu, &w)?;
        let for_pt = qsd::is_qsd(&pt, &member, tol)?;
        let for_p1 = qsd::is_qsd(k, &member, tol)?;
        extremes_ok &= for_pt.is_qsd && (t == 1 || !for_p1.is_qsd);
        extremes.push(json!({ "class": i, "iterated_residual": for_pt.residual, "one_step_residual": for_p1.residual }));
    }
    let weights = qsd::periodic_profile_weights(k, cyclic, &nu)?;
    let profile_member = qsd::iterated_qsd_family(k, cyclic, &nu, &weights)?;
    let profile_check = qsd::is_qsd(k, &profile_member, tol)?;
    let mut s = Section::new(json!({
        "theta0": a.theta0(),
        "nu_qs": labelled(k.states(), nu_qs.weights()),
        "residual": check.residual,
        "absorption_rate": check.theta,
        "survival_one_step": survival,
        "roundtrip_l1": roundtrip,
        "extreme_members": extremes,
        "profile_weights": weights,
        "profile_member_residual": profile_check.residual,
    }));
    s.check("fixed_point", check.is_qsd);
    s.check("roundtrip", roundtrip <= ctx.tol("roundtrip"));
    s.check("extreme_members", extremes_ok);
    s.check("profile_member", profile_check.is_qsd);
    s.check("absorption_rate", (check.theta - a.theta0()).abs() <= 1e-12);
    Ok(s)
}

pub(crate) fn limits(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let k = a.kernel();
    let labels = k.states();
    let t = a.period();
    let decay = quasi_limit::certify_main_estimate(a, ctx.options.n_max)?;
    let mu = DiscreteMeasure::dirac(a.len(), ctx.initial);
    let limits: Vec<Value> = (0..t)
        .map(|j| quasi_limit::conditional_limit(a, &mu, j).map(|l| labelled(labels, l.weights())))
        .collect::<Result<_>>()?;
    let criterion = quasi_limit::qsd_convergence_criterion(a, &mu)?;
    let nu = DiscreteMeasure::probability(a.certificate().nu.clone())?;
    let nu_qs = qsd::qsd_from_iterated(k, a.cyclic(), &nu)?;
    let qsd_criterion = quasi_limit::qsd_convergence_criterion(a, &nu_qs)?;
    let threshold = quasi_limit::hyp_main_threshold(a, &mu)?;
    let witness = quasi_limit::build_phi2(a, &Phi2Options::default());
    let witness_value = match &witness {
        Ok(w) => json!({ "witness": to_value(w), "checks": to_value(&quasi_limit::check_witness(a, w)) }),
        Err(e) => json!({ "error": { "kind": e.kind(), "message": e.to_string() } }),
    };
    let witness_ok = witness.as_ref().is_ok_and(|w| quasi_limit::check_witness(a, w).passed);
    let mut s = Section::new(json!({
        "initial_state": labels[ctx.initial],
        "main_estimate": to_value(&decay),
        "conditional_limits": limits,
        "criterion": to_value(&criterion),
        "qsd_criterion": to_value(&qsd_criterion),
        "threshold_n": threshold,
        "phi2": witness_value,
    }));
    s.check("main_estimate", decay.holds);
    s.check("decay_rate", decay.rate_ok);
    s.check("qsd_criterion", qsd_criterion.holds && qsd_criterion.limit_spread <= quasi_limit::CRITERION_TOLERANCE);
    s.check("criterion_consistency", criterion.holds == (criterion.distance_to_qsd <= 1e-8));
    s.check("phi2_witness", witness_ok);
    s.curves.push(TsvCurve::from_table("limits_residuals", &decay.residuals, 1));
    Ok(s)
}

fn q_start(ctx: &Context, qp: &q_process::QProcessKernel) -> DiscreteMeasure {
    let x = if qp.position(ctx.initial).is_some() { ctx.initial } else { qp.domain[0] };
    DiscreteMeasure::dirac(ctx.analysis.len(), x)
}

pub(crate) fn qprocess(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let labels = a.kernel().states();
    let qp = q_process::build_q_process(a)?;
    let semigroup = q_process::q_semigroup_check(&qp, a, 10);
    let inv = q_process::invariant_candidates(a, &qp)?;
    let start = q_start(ctx, &qp);
    let contraction = q_process::contraction_report(a, &qp, &start, ctx.options.n_max)?;
    let mut s = Section::new(json!({
        "domain": qp.labels,
        "matrix": to_value(&qp.matrix),
        "h": qp.h,
        "row_sum_error": qp.row_sum_error,
        "eta_profile": to_value(&q_process::eta_profile(a)),
        "semigroup_error": semigroup,
        "invariant": {
            "stated_measure": labelled(labels, &inv.stated_measure),
            "corrected_measure": labelled(labels, &inv.corrected_measure),
            "oracle_measure": labelled(labels, &inv.oracle_measure),
            "stated_mass": inv.stated_mass,
            "stated_residual_l1": inv.stated_residual_l1,
            "stated_residual_tv": inv.stated_residual_tv,
            "stated_oracle_l1": inv.stated_oracle_l1,
            "corrected_residual_l1": inv.corrected_residual_l1,
            "corrected_oracle_l1": inv.corrected_oracle_l1,
            "pairings": inv.pairings,
            "corrected_class_masses": inv.corrected_class_masses,
        },
        "contraction": {
            "initial_state": labels[start.weights().iter().position(|&w| w > 0.0).unwrap_or(0)],
            "alpha": contraction.alpha,
            "fitted_rate": contraction.fitted_rate,
            "converged": contraction.converged,
            "formula_gap": contraction.formula_gap,
            "stated_coefficient_gap": contraction.stated_coefficient_gap,
            "stated_coefficient_mass": contraction.stated_coefficient_mass,
            "final_distances": contraction.distances.last(),
        },
    }));
    s.check("stochastic", qp.row_sum_error <= 1e-12);
    s.check("semigroup", semigroup <= ctx.tol("semigroup"));
    s.check("invariance", inv.corrected_residual_l1 <= ctx.tol("invariance"));
    s.check("oracle", inv.corrected_oracle_l1 <= ctx.tol("oracle"));
    s.check("limit_formula", contraction.formula_gap <= ctx.tol("oracle"));
    s.check("contraction_rate", contraction.rate_ok);
    s.curves.push(TsvCurve::from_table("qprocess_contraction", &contraction.distances, 0));
    Ok(s)
}

pub(crate) fn ergodic(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let n = a.len();
    let labels = a.kernel().states();
    let t = a.period();
    let qe = quasi_ergodic::nu_qe(a);
    let class_masses: Vec<f64> =
        (0..t).map(|i| a.cyclic().members(i).iter().map(|&x| qe.weights()[x]).sum()).collect();
    let mass_error = class_masses.iter().fold(0.0_f64, |m, c| m.max((c - 1.0 / t as f64).abs()));
    let qp = q_process::build_q_process(a)?;
    let oracle = q_process::invariant_candidates(a, &qp)?.oracle_measure;
    let oracle_gap = linalg::l1_distance(qe.weights(), &oracle);
    let mu = DiscreteMeasure::dirac(n, ctx.initial);
    let mut functions = vec![StateFunction::indicator(n, &a.cyclic().members(0))];
    functions.extend(instances::test_functions(ctx.options.seed, n, 3));
    let n_max = ctx.options.big_n_max;
    let mut rows = Vec::new();
    let mut table = vec![Vec::with_capacity(functions.len()); n_max + 1];
    let mut bounded = true;
    let mut decreasing = true;
    for f in &functions {
        let r = quasi_ergodic::qed_rate_report(a, &mu, f, n_max)?;
        let m50 = quasi_ergodic::second_moment_exact(a, &mu, f, 50)?;
        let m200 = quasi_ergodic::second_moment_exact(a, &mu, f, 200)?;
        bounded &= r.bounded;
        decreasing &= m200 <= m50 + quasi_ergodic::MOMENT_ROUNDOFF * f.sup_norm().powi(2);
        for (row, (idx, e)) in table.iter_mut().zip(r.errors.iter().enumerate()) {
            row.push((idx + 1) as f64 * e);
        }
        rows.push(json!({
            "values": f.values(),
            "limit": r.limit,
            "scaled_sup": r.scaled_sup,
            "constant": r.constant,
            "v_pairing": r.v_pairing,
            "eta_pairing": r.eta_pairing,
            "bounded": r.bounded,
            "final_error": r.errors.last(),
            "second_moment_50": m50,
            "second_moment_200": m200,
            "deviation_bound_200": quasi_ergodic::deviation_bound(m200, 0.1),
        }));
    }
    let mut s = Section::new(json!({
        "initial_state": labels[ctx.initial],
        "nu_qe": labelled(labels, qe.weights()),
        "class_masses": class_masses,
        "oracle_l1": oracle_gap,
        "n_max": n_max,
        "functions": rows,
    }));
    s.check("class_masses", mass_error <= ctx.tol("ergodic_mass"));
    s.check("oracle", oracle_gap <= ctx.tol("ergodic_oracle"));
    s.check("rate_bounded", bounded);
    s.check("second_moment_decay", decreasing);
    s.curves.push(TsvCurve::from_table("ergodic_scaled_errors", &table, 0));
    Ok(s)
}

/// Evaluates a comparison on the main batch and, if it fails, once on a batch drawn with the retry seed.
fn compare(
    first: &TrajectoryBatch,
    retry: &OnceCell<Result<TrajectoryBatch>>,
    simulate_retry: impl FnOnce() -> Result<TrajectoryBatch>,
    eval: impl Fn(&TrajectoryBatch) -> Result<(bool, Value)>,
) -> Result<(bool, Value)> {
    let (ok, detail) = eval(first)?;
    if ok {
        return Ok((true, json!({ "attempts": 1, "detail": detail })));
    }
    let batch = retry.get_or_init(simulate_retry).as_ref().map_err(Clone::clone)?;
    let (ok, second) = eval(batch)?;
    Ok((ok, json!({ "attempts": 2, "detail": second, "first_detail": detail })))
}

pub(crate) fn montecarlo(ctx: &Context) -> Result<Section> {
    let a = &ctx.analysis;
    let k = a.kernel();
    let n = a.len();
    let sigma = ctx.tol("sigma");
    let (horizon, paths, seed) = (ctx.options.horizon, ctx.options.paths, ctx.options.seed);
    let mu = DiscreteMeasure::dirac(n, ctx.initial);
    let batch = monte_carlo::simulate_paths(k, &mu, horizon, paths, seed)?;
    let retry_seed = monte_carlo::retry_seed(seed);
    let retry = OnceCell::new();
    let resimulate = || monte_carlo::simulate_paths(k, &mu, horizon, paths, retry_seed);

    let survival = k.survival_probability(&mu, horizon)?;
    let (survival_ok, survival_v) = compare(&batch, &retry, resimulate, |b| {
        let p = b.survival_fraction(horizon);
        let band = sigma * (survival * (1.0 - survival) / paths as f64).sqrt() + 1e-12;
        Ok(((p - survival).abs() <= band, json!({ "exact": survival, "empirical": p, "band": band })))
    })?;

    let exact_law = quasi_limit::conditional_law(k, &mu, horizon)?;
    let (law_ok, law_v) = compare(&batch, &retry, resimulate, |b| {
        let emp = monte_carlo::conditional_empirical(b, horizon)?;
        let ess = emp.effective_sample_size as f64;
        let mut worst = 0.0_f64;
        let mut ok = true;
        for (p_hat, p) in emp.law.weights().iter().zip(exact_law.weights()) {
            let sd = (p * (1.0 - p) / ess).sqrt();
            ok &= (p_hat - p).abs() <= sigma * sd + 1e-12;
            if sd > 0.0 {
                worst = worst.max((p_hat - p).abs() / sd);
            }
        }
        let detail = json!({
            "l1": emp.law.l1_distance(&exact_law),
            "worst_sigma": worst,
            "effective_sample_size": emp.effective_sample_size,
        });
        Ok((ok, detail))
    })?;

    let f = StateFunction::indicator(n, &a.cyclic().members(0));
    let exact_avg = quasi_ergodic::time_average_exact(k, &mu, &f, horizon)?;
    let (avg_ok, avg_v) = compare(&batch, &retry, resimulate, |b| {
        let est = monte_carlo::estimate_time_average_mc(b, &f, horizon)?;
        Ok((est.agrees_with(exact_avg, sigma), json!({ "exact": exact_avg, "estimate": to_value(&est) })))
    })?;

    let qp = q_process::build_q_process(a)?;
    let start = q_start(ctx, &qp);
    let q_seed = seed.wrapping_add(1);
    let q_batch = monte_carlo::simulate_q_process(&qp, &start, horizon, paths, q_seed)?;
    let q_retry = OnceCell::new();
    let exact_occ = monte_carlo::expected_occupation(&qp, &start, horizon)?;
    let (occ_ok, occ_v) = compare(
        &q_batch,
        &q_retry,
        || monte_carlo::simulate_q_process(&qp, &start, horizon, paths, monte_carlo::retry_seed(q_seed)),
        |b| {
            let est = monte_carlo::occupation(b)?;
            let ok = est.iter().zip(&exact_occ).all(|(e, x)| e.agrees_with(*x, sigma));
            let worst = est.iter().zip(&exact_occ).map(|(e, x)| (e.mean - x).abs() / e.stderr.max(1e-300)).fold(0.0, f64::max);
            let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
            Ok((ok, json!({ "worst_sigma": if worst.is_finite() { worst } else { 0.0 }, "empirical": means, "exact": exact_occ })))
        },
    )?;
    let qe = quasi_ergodic::nu_qe(a);
    let mut s = Section::new(json!({
        "seed": seed,
        "retry_seed": retry_seed,
        "paths": paths,
        "horizon": horizon,
        "sigma": sigma,
        "survival": survival_v,
        "conditional_law": law_v,
        "time_average": avg_v,
        "q_occupation": occ_v,
        "q_occupation_vs_nu_qe_l1": linalg::l1_distance(&exact_occ, qe.weights()),
    }));
    s.check("survival", survival_ok);
    s.check("conditional_law", law_ok);
    s.check("time_average", avg_ok);
    s.check("q_occupation", occ_ok);
    Ok(s)
}
