use qsdlab::instances::{self, RandomChainSpec};
use qsdlab::{eigen, io, linalg, monte_carlo, q_process, qsd, quasi_ergodic, quasi_limit};
use qsdlab::{ChainAnalysis, DiscreteMeasure, StateFunction};

fn nu_qs(a: &ChainAnalysis) -> DiscreteMeasure {
    let nu = DiscreteMeasure::probability(a.certificate().nu.clone()).unwrap();
    qsd::qsd_from_iterated(a.kernel(), a.cyclic(), &nu).unwrap()
}

#[test]
fn theta0_is_the_dense_spectral_radius() {
    for k in instances::random_suite(11, 25, 30) {
        let a = ChainAnalysis::new(k).unwrap();
        let rho = eigen::eigenvalues(a.kernel().matrix()).unwrap()[0].norm();
        assert!((rho - a.theta0()).abs() <= 1e-10, "{rho} vs {}", a.theta0());
    }
}

#[test]
fn survival_growth_rate_approaches_theta0() {
    for k in instances::random_suite(12, 10, 20) {
        let a = ChainAnalysis::new(k).unwrap();
        let t = a.period();
        let mu = DiscreteMeasure::dirac(a.len(), 0);
        let n = 200 * t;
        let ratio = a.kernel().survival_probability(&mu, n + t).unwrap() / a.kernel().survival_probability(&mu, n).unwrap();
        assert!((ratio - a.theta0().powi(t as i32)).abs() <= 1e-9);
    }
}

#[test]
fn aperiodic_qsd_is_the_yaglom_limit() {
    let spec = RandomChainSpec { n_states: 15, period: 1, survival: (0.5, 0.9), density: 0.4 };
    for seed in 0..10 {
        let a = ChainAnalysis::new(instances::seeded_block_cyclic(seed, &spec)).unwrap();
        let law = quasi_limit::conditional_law(a.kernel(), &DiscreteMeasure::uniform(a.len()), 3000).unwrap();
        assert!(law.l1_distance(&nu_qs(&a)) <= 1e-9);
    }
}

#[test]
fn periodic_profiles_are_class_restrictions_of_the_qsd() {
    let spec = RandomChainSpec { n_states: 14, period: 3, survival: (0.6, 1.0), density: 0.5 };
    let a = ChainAnalysis::new(instances::seeded_block_cyclic(5, &spec)).unwrap();
    let qs = nu_qs(&a);
    for x in a.cyclic().members(0) {
        let mu = DiscreteMeasure::dirac(a.len(), x);
        assert!(!quasi_limit::qsd_convergence_criterion(&a, &mu).unwrap().holds);
        for j in 0..3 {
            let limit = quasi_limit::conditional_limit(&a, &mu, j).unwrap();
            let direct = quasi_limit::conditional_law(a.kernel(), &mu, 600 + j).unwrap();
            assert!(direct.l1_distance(&limit) <= 1e-9);
            let expected = qs.restricted_to(&a.cyclic().members(j)).normalized().unwrap();
            assert!(limit.l1_distance(&expected) <= 1e-10);
        }
    }
}

#[test]
fn canonical_closed_forms() {
    let a = ChainAnalysis::new(instances::two_cycle(0.8, 0.5)).unwrap();
    assert!((a.theta0() - 0.4_f64.sqrt()).abs() <= 1e-12);
    let r = 1.6_f64.sqrt();
    assert!((nu_qs(&a).weights()[1] - r / (1.0 + r)).abs() <= 1e-10);

    let cycle = ChainAnalysis::new(instances::pure_cycle(4)).unwrap();
    assert_eq!(cycle.period(), 4);
    assert!((cycle.theta0() - 1.0).abs() <= 1e-12);
    for w in nu_qs(&cycle).weights() {
        assert!((w - 0.25).abs() <= 1e-12);
    }
    let qp = q_process::build_q_process(&cycle).unwrap();
    assert!(qp.matrix.max_abs_diff(cycle.kernel().matrix()) <= 1e-12);
    for w in quasi_ergodic::nu_qe(&cycle).weights() {
        assert!((w - 0.25).abs() <= 1e-12);
    }

    let lazy = ChainAnalysis::new(instances::lazy_pair(0.3)).unwrap();
    assert_eq!(lazy.period(), 1);
    let rho = eigen::eigenvalues(lazy.kernel().matrix()).unwrap()[0].norm();
    assert!((lazy.theta0() - rho).abs() <= 1e-12);
}

#[test]
fn q_process_stationary_law_matches_dense_oracle() {
    for k in instances::random_suite(13, 20, 25) {
        let a = ChainAnalysis::new(k).unwrap();
        let qp = q_process::build_q_process(&a).unwrap();
        let pi = eigen::stationary_distribution(&qp.matrix).unwrap();
        let embedded = qp.embed(&pi, a.len());
        let qe = quasi_ergodic::nu_qe(&a);
        assert!(linalg::l1_distance(&embedded, qe.weights()) <= 1e-9);
    }
}

#[test]
fn monte_carlo_survival_matches_exact() {
    let k = instances::two_cycle(0.95, 0.98);
    let mu = DiscreteMeasure::dirac(2, 0);
    let batch = monte_carlo::simulate_paths(&k, &mu, 30, 50_000, 9).unwrap();
    for n in [1, 10, 30] {
        let exact = k.survival_probability(&mu, n).unwrap();
        let sd = (exact * (1.0 - exact) / 50_000.0).sqrt();
        assert!((batch.survival_fraction(n) - exact).abs() <= 5.0 * sd + 1e-12, "n = {n}");
    }
    let f = StateFunction::indicator(2, &[0]);
    let est = monte_carlo::estimate_time_average_mc(&batch, &f, 30).unwrap();
    assert!(est.agrees_with(quasi_ergodic::time_average_exact(&k, &mu, &f, 30).unwrap(), 5.0));
}

#[test]
fn chain_spec_files_parse_alike() {
    let dir = std::env::temp_dir().join(format!("qsdlab-oracles-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let json = dir.join("c.json");
    let csv = dir.join("c.csv");
    std::fs::write(&json, r#"{"states":["a","b"],"transitions":[["a","b","0.8"],["b","a",0.5]],"metadata":{"k":1}}"#).unwrap();
    std::fs::write(&csv, "a,b\n0,0.8\n0.5,0\n").unwrap();
    let from_json = io::read_chain_spec(&json).unwrap();
    let from_csv = io::read_chain_spec(&csv).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(from_json.kernel, from_csv.kernel);
    assert_eq!(from_json.kernel, instances::two_cycle(0.8, 0.5));
    assert!(from_json.metadata.is_some());
}
