use geodesic_lode::odeint::{integrate_adaptive, SolveConfig, TimeGrid};
use geodesic_lode::systems::{
    generate_with_spec, load_dataset, lve_invariant, save_dataset, LveRanges, SamplingSpec,
    SystemConfig, SystemField, SystemId,
};

#[test]
fn lve_invariant_drift_is_small() {
    let mut spec = SamplingSpec::lotka_volterra(LveRanges::DeltaLow);
    spec.noise_sigma = 0.0;
    spec.t_final = [30.0, 30.0];
    let ds = generate_with_spec(&spec, 20, 5).unwrap();
    for t in ds.iter() {
        let SystemConfig::LotkaVolterra {
            alpha,
            beta,
            gamma,
            delta,
            x0,
            y0,
        } = t.config
        else {
            unreachable!()
        };
        let v0 = lve_invariant([x0, y0], alpha, beta, gamma, delta);
        for v in &t.values {
            let vt = lve_invariant([v[0], v[1]], alpha, beta, gamma, delta);
            assert!(((vt - v0) / v0).abs() < 1e-2, "drift {}", (vt - v0) / v0);
        }
    }
}

#[test]
fn lve_dense_invariant_over_full_window() {
    let c = SystemConfig::LotkaVolterra {
        alpha: 3.5,
        beta: 1.0,
        gamma: 0.6,
        delta: 0.2,
        x0: 6.0,
        y0: 1.0,
    };
    let grid = TimeGrid::uniform(0.0, 30.0, 601).unwrap();
    let sol = integrate_adaptive(
        &SystemField(c),
        &c.initial_state(),
        0.0,
        30.0,
        &grid,
        &SolveConfig::with_tolerances(1e-4, 1e-4),
    )
    .unwrap();
    let v = |s: &[f64]| lve_invariant([s[0], s[1]], 3.5, 1.0, 0.6, 0.2);
    let v0 = v(&sol.states[0]);
    for s in &sol.states {
        assert!(((v(s) - v0) / v0).abs() < 1e-2);
    }
}

#[test]
fn lane_emden_closed_forms_at_sampled_points() {
    let mut spec = SamplingSpec::lane_emden();
    spec.noise_sigma = 0.0;
    let ds = generate_with_spec(&spec, 60, 21).unwrap();
    let mut checked = [0usize; 2];
    for t in ds.iter() {
        let SystemConfig::LaneEmden { n } = t.config else {
            unreachable!()
        };
        let exact: fn(f64) -> f64 = if n == 1.0 {
            |xi| xi.sin() / xi
        } else if n == 5.0 {
            |xi| (1.0 + xi * xi / 3.0).powf(-0.5)
        } else {
            continue;
        };
        checked[(n == 5.0) as usize] += 1;
        for (xi, v) in t.times.iter().zip(&t.values) {
            assert!((v[0] - exact(*xi)).abs() < 1e-3, "n={n} xi={xi}");
        }
    }
    assert!(checked[0] > 0 && checked[1] > 0);
}

#[test]
fn saved_files_are_byte_identical_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SamplingSpec::for_system(SystemId::Dho, LveRanges::DeltaLow);
    let paths = [dir.path().join("a.glds"), dir.path().join("b.glds")];
    for p in &paths {
        save_dataset(&generate_with_spec(&spec, 30, 7).unwrap(), p).unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    assert_eq!(a, b);
    let back = load_dataset(&paths[0]).unwrap();
    assert_eq!(back.splits().train, 24);
    assert_eq!(back, generate_with_spec(&spec, 30, 7).unwrap());
}
