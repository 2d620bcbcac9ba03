use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warranty_core::costs::{CostConfig, CostOptions, Economics, LifeReference, UtilityModel, WarrantyRegion};
use warranty_core::mcmc::PosteriorChain;
use warranty_core::model::ParamVector;
use warranty_core::optimizer::{
    initial_region, maximize, optimize_model, sensitivity_scan, OptimOptions, Overrides, ScanContext,
};

fn small_chain() -> PosteriorChain {
    PosteriorChain::from_draws(vec![
        ParamVector::new(1.522, 1.015, 0.722, 0.930, 0.172).unwrap(),
        ParamVector::new(1.45, 1.08, 0.70, 0.97, 0.19).unwrap(),
        ParamVector::new(1.60, 0.96, 0.75, 0.90, 0.16).unwrap(),
    ])
    .unwrap()
}

fn refs() -> LifeReference {
    LifeReference {
        lt: 1.020,
        lu: 0.6547,
        t_w: 0.2006,
        u_w: 0.0787,
    }
}

fn quick() -> OptimOptions {
    OptimOptions {
        n_restarts: 4,
        ..Default::default()
    }
}

#[test]
fn concave_stub_optimum_is_recovered() {
    let target = [0.12, 0.55, 0.08, 0.31];
    let f = |r: &WarrantyRegion| {
        Ok(-r
            .to_array()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).powi(2) * 10.0)
            .sum::<f64>())
    };
    let init = WarrantyRegion::new(0.1, 0.2, 0.1, 0.2).unwrap();
    let res = maximize(f, 1.0, 0.8, &init, &OptimOptions::default()).unwrap();
    for (a, b) in res.region.to_array().iter().zip(target) {
        assert!((a - b).abs() < 1e-4, "{:?}", res.region);
    }
    assert!(res.converged);
    assert!(!res.degenerate);
}

#[test]
fn optimum_beats_random_perturbations() {
    let cfg = CostConfig::calibrated(&Economics::default(), &refs()).unwrap();
    let model = UtilityModel::new(&small_chain(), &cfg, &CostOptions::default()).unwrap();
    let res = optimize_model(&model, &initial_region(&refs()), &quick()).unwrap();
    assert_eq!(res.utility, model.utility(&res.region).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let base = res.region.to_array();
    let mut checked = 0;
    while checked < 100 {
        let mut x = base;
        for v in x.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let r = match WarrantyRegion::new(x[0], x[1], x[2], x[3]) {
            Ok(r) if r.t_w2 < cfg.lt && r.u_w2 < cfg.lu => r,
            _ => continue,
        };
        let u = model.utility(&r).unwrap();
        assert!(u <= res.utility + 1e-9, "{r:?} gives {u} > {}", res.utility);
        checked += 1;
    }
}

#[test]
fn restarts_are_deterministic() {
    let cfg = CostConfig::calibrated(&Economics::default(), &refs()).unwrap();
    let model = UtilityModel::new(&small_chain(), &cfg, &CostOptions::default()).unwrap();
    let a = optimize_model(&model, &initial_region(&refs()), &quick()).unwrap();
    let b = optimize_model(&model, &initial_region(&refs()), &quick()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scan_without_overrides_matches_direct_optimization() {
    let chain = small_chain();
    let econ = Economics::default();
    let cfg = CostConfig::calibrated(&econ, &refs()).unwrap();
    let model = UtilityModel::new(&chain, &cfg, &CostOptions::default()).unwrap();
    let direct = optimize_model(&model, &initial_region(&refs()), &quick()).unwrap();
    let ctx = ScanContext {
        chain: &chain,
        economics: econ,
        refs: refs(),
        cost: CostOptions::default(),
        optim: quick(),
        optimizer_draws: 0,
        pipeline: None,
    };
    let rows = sensitivity_scan(&ctx, &[Overrides::new()]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].result.as_ref().unwrap(), &direct);
}

#[test]
fn scan_records_row_failures() {
    let chain = small_chain();
    let ctx = ScanContext {
        chain: &chain,
        economics: Economics::default(),
        refs: refs(),
        cost: CostOptions::default(),
        optim: OptimOptions {
            n_restarts: 1,
            max_iter: 50,
            ..Default::default()
        },
        optimizer_draws: 0,
        pipeline: None,
    };
    let grid: Vec<Overrides> = vec![
        [("bogus".to_string(), 1.0)].into_iter().collect(),
        [("t0".to_string(), 3.0)].into_iter().collect(),
        [("q1".to_string(), 0.02), ("q2".to_string(), 0.05)].into_iter().collect(),
        [("s".to_string(), 900.0)].into_iter().collect(),
    ];
    let rows = sensitivity_scan(&ctx, &grid);
    assert_eq!(rows.len(), 4);
    assert!(rows[0].error.as_deref().unwrap().contains("bogus"));
    assert!(rows[1].error.is_some());
    assert!(rows[2].error.is_some());
    assert!(rows[3].error.is_none() && rows[3].result.is_some());
}

#[test]
fn higher_price_lowers_utility() {
    let chain = small_chain();
    let ctx = ScanContext {
        chain: &chain,
        economics: Economics::default(),
        refs: refs(),
        cost: CostOptions::default(),
        optim: quick(),
        optimizer_draws: 0,
        pipeline: None,
    };
    let grid: Vec<Overrides> = [300.0, 700.0, 1100.0]
        .iter()
        .map(|s| [("s".to_string(), *s)].into_iter().collect())
        .collect();
    let u: Vec<f64> = sensitivity_scan(&ctx, &grid)
        .iter()
        .map(|r| r.result.as_ref().unwrap().utility)
        .collect();
    assert!(u[0] > u[1] && u[1] > u[2], "{u:?}");
}
