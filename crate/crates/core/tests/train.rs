use geodesic_lode::diffcore::AdamState;
use geodesic_lode::latentode::{decode, encode, latent_states_at, LatentModel};
use geodesic_lode::losses::{
    interpolation_grid, kl_penalty, path_length_points, LossMode, PathMetric,
};
use geodesic_lode::odeint::SolveConfig;
use geodesic_lode::rng::{stream, Stream};
use geodesic_lode::systems::{generate_dataset, Dataset, SystemConfig, SystemId, Trajectory};
use geodesic_lode::train::{
    batch_gradient, fit, read_metrics, step_draws, train_step, FitOptions, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg(mode: LossMode) -> TrainConfig {
    let mut cfg = TrainConfig::preset(match mode {
        LossMode::Pathmin => "dho-pathmin",
        LossMode::Kl => "dho-kl",
    })
    .unwrap();
    cfg.hidden_dim = 4;
    cfg.latent_dim = 2;
    cfg.dynamics_hidden = vec![6];
    cfg.batch = 4;
    cfg.m = 8;
    cfg.dt = 0.25;
    cfg.val_every = 5;
    cfg.val_count = 3;
    cfg.val_horizon = 25.0;
    cfg
}

fn toy_dataset(count: usize, seed: u64) -> Dataset {
    generate_dataset(SystemId::Dho, count, seed).unwrap()
}

fn three_point() -> Trajectory {
    Trajectory::new(
        vec![0.0, 0.7, 1.9],
        vec![vec![1.0, 0.5], vec![1.2, -0.1], vec![0.4, -0.8]],
        SystemConfig::Dho {
            k: 0.12,
            m: 1.0,
            x0: 1.0,
            v0: 0.5,
        },
        0.05,
    )
    .unwrap()
}

/// Loss of one trajectory recomputed from value-level model functions.
fn value_loss(model: &LatentModel, obs: &Trajectory, cfg: &TrainConfig, metric: &PathMetric, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (z0, aux) = encode(model, obs, Some(&mut rng), cfg.dt).unwrap();
    let interp = interpolation_grid(obs.t_first(), obs.t_last(), cfg.m, cfg.dt).unwrap();
    let mut merged: Vec<f64> = obs.times.iter().chain(interp.times()).copied().collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    let solve = SolveConfig::with_dt_fixed(cfg.dt);
    let zs = latent_states_at(model, &z0, obs.t_first(), &merged, &solve).unwrap();
    let at = |t: f64| &zs[merged.iter().position(|&s| s == t).unwrap()];
    let mut recon = 0.0;
    for (t, y) in obs.times.iter().zip(&obs.values) {
        let p = decode(model, at(*t)).unwrap();
        recon += p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    match cfg.mode {
        LossMode::Pathmin => {
            let pts: Vec<Vec<f64>> = interp.times().iter().map(|&t| at(t).clone()).collect();
            recon + cfg.lambda * path_length_points(&pts, metric).unwrap()
        }
        LossMode::Kl => {
            let (mu, ls) = aux.unwrap();
            recon + cfg.kl_weight * kl_penalty(&mu, &ls).unwrap()
        }
    }
}

fn check_against_finite_differences(mode: LossMode) {
    let cfg = small_cfg(mode);
    let obs = three_point();
    let model = LatentModel::new(cfg.model_spec(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let metric = PathMetric {
        sigma_diag: vec![0.7, 1.3],
        floor: 1e-6,
    };
    let eps = model.draw_noise(&mut ChaCha8Rng::seed_from_u64(5));
    let (items, grads) = batch_gradient(&model, &[&obs], &[eps], &cfg, &metric).unwrap();
    let base = value_loss(&model, &obs, &cfg, &metric, 5);
    assert!((items[0].total - base).abs() < 1e-10 * (1.0 + base.abs()));

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..model.params().len() {
        let mut plus = model.clone();
        plus.params_mut().flatten_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut().flatten_mut()[i] -= h;
        let fd = (value_loss(&plus, &obs, &cfg, &metric, 5) - value_loss(&minus, &obs, &cfg, &metric, 5)) / (2.0 * h);
        let g = grads.flatten()[i];
        worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1e-3));
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn pathmin_gradient_matches_finite_differences() {
    check_against_finite_differences(LossMode::Pathmin);
}

#[test]
fn kl_gradient_matches_finite_differences() {
    check_against_finite_differences(LossMode::Kl);
}

#[test]
fn zero_lambda_step_ignores_the_metric() {
    let mut cfg = small_cfg(LossMode::Pathmin);
    cfg.lambda = 0.0;
    let ds = toy_dataset(30, 2);
    let model = LatentModel::new(cfg.model_spec(), &mut stream(1, Stream::Init, 0)).unwrap();
    let (idx, eps) = step_draws(&model, &cfg, ds.train.len(), 0);
    let batch: Vec<&Trajectory> = idx.iter().map(|&i| &ds.train[i]).collect();
    let run = |metric: PathMetric| {
        let mut m = model.clone();
        let mut opt = AdamState::new(m.params());
        let out = train_step(&mut m, &batch, &eps, &metric, &mut opt, &cfg).unwrap();
        (m, out.loss.total, out.loss.recon)
    };
    let a = run(PathMetric::identity(2));
    let b = run(PathMetric {
        sigma_diag: vec![0.01, 30.0],
        floor: 1e-6,
    });
    assert_eq!(a.0.params(), b.0.params());
    assert_eq!(a.1, a.2);
    assert_eq!(a.1, b.1);
}

#[test]
fn loss_decreases_on_a_toy_set() {
    let mut cfg = small_cfg(LossMode::Pathmin);
    cfg.hidden_dim = 6;
    cfg.latent_dim = 3;
    cfg.dynamics_hidden = vec![24, 24];
    cfg.dt = 0.1;
    cfg.m = 64;
    cfg.batch = 256;
    cfg.steps = 100;
    cfg.val_every = 100;
    // 10 training trajectories after the 10% validation and test splits
    let ds = toy_dataset(12, 4);
    assert_eq!(ds.train.len(), 10);
    let res = fit(&cfg, &ds, &FitOptions::default()).unwrap();
    let totals: Vec<f64> = res.curve.iter().map(|r| r.total).collect();
    let ma: Vec<f64> = totals.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    for w in ma.windows(2) {
        assert!(w[1] <= w[0], "moving average rose: {} -> {}", w[0], w[1]);
    }
    assert!(ma.last().unwrap() < &(0.5 * ma[0]));
}

#[test]
fn same_seed_gives_identical_curves_and_metrics_files() {
    let mut cfg = small_cfg(LossMode::Pathmin);
    cfg.steps = 12;
    let ds = toy_dataset(40, 5);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let opts = FitOptions {
                out_dir: Some(d.path().to_path_buf()),
                ..Default::default()
            };
            fit(&cfg, &ds, &opts).unwrap()
        })
        .collect();
    assert_eq!(runs[0].curve, runs[1].curve);
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.csv")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    let text = String::from_utf8(read(&dirs[0])).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# geodesic-lode schema 1"));
    assert_eq!(
        lines.next(),
        Some("step,recon,penalty,total,path_length,val_mse,val_extrap_mse")
    );
    assert_eq!(lines.count(), 12);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = fit(&other, &ds, &FitOptions::default()).unwrap();
    assert_ne!(c.curve, runs[0].curve);
}

#[test]
fn interrupted_run_resumes_to_the_same_curve() {
    for mode in [LossMode::Pathmin, LossMode::Kl] {
        let mut cfg = small_cfg(mode);
        cfg.steps = 14;
        let ds = toy_dataset(40, 6);
        let full_dir = tempfile::tempdir().unwrap();
        let full = fit(
            &cfg,
            &ds,
            &FitOptions {
                out_dir: Some(full_dir.path().into()),
                ..Default::default()
            },
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let halted = FitOptions {
            out_dir: Some(dir.path().into()),
            halt_after: Some(7),
            ..Default::default()
        };
        let part = fit(&cfg, &ds, &halted).unwrap();
        assert_eq!(part.curve.len(), 7);
        let resumed = fit(
            &cfg,
            &ds,
            &FitOptions {
                out_dir: Some(dir.path().into()),
                resume: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.curve, full.curve);
        assert_eq!(resumed.last.params(), full.last.params());
        assert_eq!(resumed.best.params(), full.best.params());
        assert_eq!(resumed.best_step, full.best_step);
        let bytes = |d: &std::path::Path| std::fs::read(d.join("metrics.csv")).unwrap();
        assert_eq!(bytes(dir.path()), bytes(full_dir.path()));
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), full.curve);
    }
}

#[test]
fn resume_rejects_a_different_configuration() {
    let mut cfg = small_cfg(LossMode::Pathmin);
    cfg.steps = 6;
    let ds = toy_dataset(40, 7);
    let dir = tempfile::tempdir().unwrap();
    let opts = FitOptions {
        out_dir: Some(dir.path().into()),
        halt_after: Some(3),
        ..Default::default()
    };
    fit(&cfg, &ds, &opts).unwrap();
    cfg.lr *= 2.0;
    let again = FitOptions {
        resume: true,
        halt_after: None,
        ..opts
    };
    assert!(fit(&cfg, &ds, &again).is_err());
}

#[test]
fn model_selection_never_reads_the_test_split() {
    let mut cfg = small_cfg(LossMode::Pathmin);
    cfg.steps = 10;
    let ds = toy_dataset(40, 8);
    let mut swapped = ds.clone();
    swapped.test = toy_dataset(40, 99).test;
    let a = fit(&cfg, &ds, &FitOptions::default()).unwrap();
    let b = fit(&cfg, &swapped, &FitOptions::default()).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.best_step, b.best_step);
    let mut poisoned_val = ds.clone();
    poisoned_val.validation = toy_dataset(40, 99).validation;
    let c = fit(&cfg, &poisoned_val, &FitOptions::default()).unwrap();
    assert_ne!(
        a.curve.iter().map(|r| r.val_mse).collect::<Vec<_>>(),
        c.curve.iter().map(|r| r.val_mse).collect::<Vec<_>>()
    );
}

#[test]
fn best_checkpoint_round_trips() {
    let mut cfg = small_cfg(LossMode::Kl);
    cfg.steps = 10;
    let ds = toy_dataset(40, 9);
    let dir = tempfile::tempdir().unwrap();
    let res = fit(
        &cfg,
        &ds,
        &FitOptions {
            out_dir: Some(dir.path().into()),
            ..Default::default()
        },
    )
    .unwrap();
    let (model, metric, saved) = geodesic_lode::train::load_model(&dir.path().join("best.json")).unwrap();
    assert_eq!(model.params(), res.best.params());
    assert_eq!(metric, res.metric);
    assert_eq!(saved, cfg);
}
