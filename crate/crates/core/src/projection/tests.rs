use super::*;
use crate::baseline::{CommonTrendParams, CountryDeviationParams};
use crate::data::Window;
use crate::regime::{is_high_volatility, LVS};

fn baseline(na: usize, a: f64, b_scale: f64) -> BaselineParams {
    let window = Window::new(60, 60 + na as u32 - 1, 1990, 2021).unwrap();
    let ny = window.n_years();
    let unit = DVector::from_element(na, b_scale / (na as f64).sqrt());
    BaselineParams {
        common: CommonTrendParams {
            window,
            a: DVector::from_element(na, a),
            b: vec![unit.clone()],
            l: vec![DVector::zeros(ny)],
        },
        deviation: CountryDeviationParams {
            country_code: "AAA".into(),
            beta: vec![unit],
            lambda: vec![DVector::zeros(ny)],
        },
        anchor_common: DVector::zeros(na),
        anchor_country: DVector::zeros(na),
    }
}

fn dynamics(c: f64, sd: f64) -> PeriodDynParams {
    PeriodDynParams {
        c: DVector::from_vec(vec![c, 0.0]),
        sigma_w: DMatrix::from_diagonal(&DVector::from_element(2, sd * sd)),
        gamma: 1.0,
        n_free: 1,
        min_eigen_ratio: 1.0,
    }
}

fn regime(age_min: u32, n: usize, p12: f64) -> RegimeParams {
    RegimeParams {
        p12,
        p21: 0.4,
        sigma_e1: 0.02,
        slope1: 0.0,
        sigma_e2: 0.02,
        slope2: 0.0,
        mu_h: 0.1,
        sigma_h: 0.5,
        frak_b: vec![1.0 / (n as f64).sqrt(); n],
        epoch_year: 1970,
        age_min,
    }
}

fn group(name: &str, lo: u32, hi: u32, p12: f64) -> GroupProjection {
    GroupProjection {
        group: AgeGroup { name: name.into(), age_min: lo, age_max: hi },
        params: regime(lo, (hi - lo + 1) as usize, p12),
        init: [1.0, 0.0, 0.0],
        carry: None,
        forced: BTreeMap::new(),
    }
}

fn two_group_model(p12: f64) -> ProjectionModel {
    ProjectionModel::new(
        &baseline(6, -0.01, 1.0),
        dynamics(-0.5, 0.3),
        vec![group("young", 60, 62, p12), group("old", 63, 65, p12)],
        DVector::from_element(6, 0.02),
    )
    .unwrap()
}

#[test]
fn null_dynamics_keep_anchor() {
    let model = ProjectionModel::new(
        &baseline(4, 0.0, 0.0),
        dynamics(0.0, 0.0),
        vec![group("all", 60, 63, 0.0)],
        DVector::from_vec(vec![0.01, 0.02, 0.03, 0.04]),
    )
    .unwrap();
    let cfg = ProjectionConfig { n_years: 10, n_paths: 20, ..Default::default() };
    let s = project_scenarios(&model, &cfg).unwrap();
    for p in 0..20 {
        for t in 0..10 {
            for x in 0..4 {
                assert!((s.mu(x, t, p) / model.anchor_mu[x] - 1.0).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn single_step_by_hand() {
    let model =
        ProjectionModel::new(&baseline(1, -0.02, 0.0), dynamics(0.0, 0.0), vec![], DVector::from_element(1, 0.01))
            .unwrap();
    let cfg = ProjectionConfig { n_years: 1, n_paths: 1, ..Default::default() };
    let s = project_scenarios(&model, &cfg).unwrap();
    assert!((s.mu(0, 0, 0) - 0.0098020).abs() < 5e-8);
    assert!((s.mu(0, 0, 0) - 0.01 * (-0.02f64).exp()).abs() < 1e-17);
    assert!((s.q(0, 0, 0) - (1.0 - (-s.mu(0, 0, 0)).exp())).abs() < 1e-15);
}

#[test]
fn overlapping_groups_rejected() {
    let r = ProjectionModel::new(
        &baseline(6, 0.0, 1.0),
        dynamics(0.0, 0.1),
        vec![group("a", 60, 62, 0.1), group("b", 62, 65, 0.1)],
        DVector::from_element(6, 0.02),
    );
    assert!(r.is_err());
}

#[test]
fn exploding_rates_report_cell() {
    let model =
        ProjectionModel::new(&baseline(2, 400.0, 0.0), dynamics(0.0, 0.0), vec![], DVector::from_element(2, 0.01))
            .unwrap();
    let cfg = ProjectionConfig { n_years: 5, n_paths: 1, ..Default::default() };
    let err = project_scenarios(&model, &cfg).unwrap_err().to_string();
    assert!(err.contains("age 60") && err.contains("year 2023") && err.contains("path 0"), "{err}");
}

#[test]
fn completed_runs_leave_no_trace() {
    let model = two_group_model(0.2);
    let on = ProjectionConfig { n_years: 30, n_paths: 1, seed: 5, ..Default::default() };
    let off = ProjectionConfig { shocks: false, ..on.clone() };
    for i in 0..300 {
        let a = model.simulate_path(&on, i).unwrap();
        let b = model.simulate_path(&off, i).unwrap();
        assert_eq!(a.periods, b.periods);
        for (g, chain) in model.groups.iter().zip(&a.chains) {
            let off = (g.group.age_min - model.age_min) as usize;
            for (t, &s) in chain.states.iter().enumerate() {
                if s == LVS {
                    for x in off..off + g.group.len() {
                        assert!((a.log_mu[(x, t)] - b.log_mu[(x, t)]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn medians_match_without_shocks() {
    let model = two_group_model(0.1);
    let on = ProjectionConfig { n_years: 20, n_paths: 10_000, seed: 11, ..Default::default() };
    let off = ProjectionConfig { shocks: false, ..on.clone() };
    let a = project_scenarios(&model, &on).unwrap();
    let b = project_scenarios(&model, &off).unwrap();
    let t = on.n_years - 1;
    for x in 0..model.n_ages() {
        let column = |s: &ScenarioSet| -> Vec<f64> { (0..s.n_paths).map(|p| s.q(x, t, p)).collect() };
        let (va, vb) = (column(&a), column(&b));
        let median = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            quantile_sorted(&v, 0.5)
        };
        // bootstrap standard error of the shock-free median
        let mut r = rng::stream(99, x as u64);
        let boot: Vec<f64> = (0..200)
            .map(|_| {
                let sample: Vec<f64> = (0..vb.len()).map(|_| vb[rand::Rng::random_range(&mut r, 0..vb.len())]).collect();
                median(&sample)
            })
            .collect();
        let mean = boot.iter().sum::<f64>() / boot.len() as f64;
        let se = (boot.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt();
        let diff = (median(&va) - median(&vb)).abs();
        assert!(diff < 3.0 * se, "age {x}: {diff} vs se {se}");
    }
}

#[test]
fn group_chains_are_independent() {
    let model = two_group_model(0.1);
    let cfg = ProjectionConfig { n_years: 10, n_paths: 10_000, seed: 3, ..Default::default() };
    let t = 9;
    let pairs: Vec<(f64, f64)> = (0..cfg.n_paths)
        .map(|i| {
            let p = model.simulate_path(&cfg, i).unwrap();
            let h = |g: usize| is_high_volatility(p.chains[g].states[t]) as u8 as f64;
            (h(0), h(1))
        })
        .collect();
    let n = pairs.len() as f64;
    let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
    let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n;
    let corr = cov / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
    assert!(corr.abs() < 0.03, "{corr}");
}

#[test]
fn forced_states_apply_per_group() {
    let mut model = two_group_model(0.05);
    model.groups[0].forced = BTreeMap::from([(2022, Regime::Low), (2023, Regime::Low)]);
    model.groups[1].forced = BTreeMap::from([(2022, Regime::High), (2023, Regime::Low)]);
    let cfg = ProjectionConfig { n_years: 5, n_paths: 1, ..Default::default() };
    for i in 0..50 {
        let p = model.simulate_path(&cfg, i).unwrap();
        assert_eq!(&p.chains[0].states[..2], &[LVS, LVS]);
        assert!(is_high_volatility(p.chains[1].states[0]));
        assert_eq!(p.chains[1].states[1], LVS);
        // a forced one-year run offsets to nothing
        assert_eq!(p.shocks[1].shocks.column(0).amax(), 0.0);
    }
}

#[test]
fn binary_round_trip_and_thread_independence() {
    let model = two_group_model(0.1);
    let cfg = ProjectionConfig { n_years: 8, n_paths: 64, seed: 17, ..Default::default() };
    let a = project_scenarios(&model, &cfg).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(|| project_scenarios(&model, &cfg).unwrap());
    assert_eq!(a.to_bytes(), b.to_bytes());
    let back = ScenarioSet::from_bytes(&a.to_bytes()).unwrap();
    assert_eq!(back, a);
    assert!(ScenarioSet::from_bytes(&a.to_bytes()[..100]).is_err());
}

#[test]
fn quantiles_match_order_statistics() {
    let sorted: Vec<f64> = (1..=101).map(f64::from).collect();
    for (p, want) in [(0.005, 1.5), (0.05, 6.0), (0.5, 51.0), (0.95, 96.0), (0.995, 100.5)] {
        assert!((quantile_sorted(&sorted, p) - want).abs() < 1e-12);
    }
}

#[test]
fn csv_exports() {
    let model = two_group_model(0.1);
    let cfg = ProjectionConfig { n_years: 3, n_paths: 2, seed: 1, ..Default::default() };
    let s = project_scenarios(&model, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = dir.path().join("paths.csv");
    s.write_paths_csv(&paths).unwrap();
    let text = std::fs::read_to_string(&paths).unwrap();
    assert!(text.starts_with("age,year,path_0,path_1\n"));
    assert_eq!(text.lines().count(), 1 + 6 * 3);
    let qpath = dir.path().join("q.csv");
    s.write_quantile_csv(&qpath).unwrap();
    let text = std::fs::read_to_string(&qpath).unwrap();
    assert!(text.starts_with("age,year,q0.005,q0.05,q0.5,q0.95,q0.995\n"));
    let empty = ScenarioSet { n_paths: 0, mu: vec![], unoffset: vec![], ..s };
    assert!(empty.write_quantile_csv(&qpath).is_err());
}
