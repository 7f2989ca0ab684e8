mod common;

use common::*;
use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use poigp_core::baselines::*;
use poigp_core::eval::{split, synth_generate, SplitConfig, SynthConfig};
use poigp_core::geodata::{unproject, Dataset, LonLat, Poi, PoiType, Point, Station, TypeRegistry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;


#[test]
fn single_stump_matches_exhaustive_split_search() {
    for seed in 0..5 {
        let (x, y, _) = random_problem(40 + seed as usize, 3, seed);
        let cfg = ForestConfig { n_trees: 1, max_depth: 1, min_leaf: 1, max_features: Some(3), bootstrap: false, seed };
        let forest = Forest::fit(&x, &y, &cfg).unwrap();
        let got = forest.predict(&x);
        let want = brute_force_stump(&x, &y);
        for (a, b) in got.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn constant_target_forest_and_zero_residuals() {
    let (x, _, locs) = random_problem(30, 2, 3);
    let y = DVector::from_element(30, 0.7);
    let cfg = ForestConfig { n_trees: 20, ..Default::default() };
    let rf = Forest::fit(&x, &y, &cfg).unwrap();
    assert!(rf.predict(&x).iter().all(|v| (v - 0.7).abs() < 1e-12));
    assert!(rf.oob.iter().all(|v| (v - 0.7).abs() < 1e-12));
    let params = KrigingParams { matern: poigp_core::kernels::MaternKernel { variance: 0.5, lengthscale: 1.0 }, nugget: 0.1 };
    let rk = RfKriging::fit_with(&x, &y, &locs, &cfg, params).unwrap();
    assert!(rk.residuals(&y).iter().all(|r| r.abs() < 1e-12));
    let (m, _) = rk.predict(&x, &locs);
    assert!(m.iter().all(|v| (v - 0.7).abs() < 1e-10));
}

#[test]
fn forest_deterministic_given_seed() {
    let (x, y, _) = random_problem(50, 4, 9);
    let cfg = ForestConfig { n_trees: 30, seed: 5, ..Default::default() };
    assert_eq!(Forest::fit(&x, &y, &cfg).unwrap(), Forest::fit(&x, &y, &cfg).unwrap());
    let other = Forest::fit(&x, &y, &ForestConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(Forest::fit(&x, &y, &cfg).unwrap().predict(&x), other.predict(&x));
}

#[test]
fn infinite_bandwidth_gwr_is_global_ols() {
    let (x, y, locs) = random_problem(60, 3, 4);
    let gwr = Gwr::fit(&x, &y, &locs, f64::INFINITY).unwrap();
    let (got, var) = gwr.predict(&x, &locs).unwrap();
    // least squares through the SVD instead of normal equations
    let x1 = x.clone().insert_column(0, 1.0);
    let beta = x1.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let want = &x1 * beta;
    for (a, b) in got.iter().zip(want.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
    assert!(var.iter().all(|v| *v > 0.0));
}

#[test]
fn gwr_constant_target() {
    let (x, _, locs) = random_problem(25, 2, 5);
    let y = DVector::from_element(25, -1.3);
    let gwr = Gwr::fit(&x, &y, &locs, 0.5).unwrap();
    let (m, _) = gwr.predict(&x, &locs).unwrap();
    assert!(m.iter().all(|v| (v + 1.3).abs() < 1e-6));
}

#[test]
fn gwr_bandwidth_selection_beats_ols_on_drifting_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200;
    let locs: Vec<Point> = (0..n).map(|_| Point::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0))).collect();
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    // slope drifts from -1 to 3 west to east
    let y = DVector::from_fn(n, |i, _| (locs[i].x - 1.0) * x[(i, 0)] + 0.1 * rng.random_range(-1.0..1.0));
    let (tr, te) = (0..150, 150..n);
    let sub = |r: std::ops::Range<usize>| {
        (
            DMatrix::from_fn(r.len(), 1, |i, _| x[(r.start + i, 0)]),
            DVector::from_fn(r.len(), |i, _| y[r.start + i]),
            locs[r].to_vec(),
        )
    };
    let (xtr, ytr, ltr) = sub(tr);
    let (xte, yte, lte) = sub(te);
    let gwr = Gwr::fit_auto(&xtr, &ytr, &ltr, &default_bandwidth_grid()).unwrap();
    assert!(gwr.bandwidth.is_finite());
    let (m, _) = gwr.predict(&xte, &lte).unwrap();
    let beta = kriging::ols(&xtr, &ytr).unwrap();
    let o = kriging::ols_predict(&beta, &xte);
    let err = |p: &[f64]| p.iter().zip(yte.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    assert!(err(&m) < 0.5 * err(o.as_slice()));
}

#[test]
fn noise_free_kriging_interpolates() {
    let (_, r, locs) = random_problem(40, 1, 6);
    let params = KrigingParams { matern: poigp_core::kernels::MaternKernel { variance: 1.0, lengthscale: 0.5 }, nugget: 1e-10 };
    let k = Kriging::with_params(&locs, &r, params).unwrap();
    let (m, v) = k.predict(&locs);
    for (a, b) in m.iter().zip(r.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-4);
    }
    assert!(v.iter().all(|v| *v < 1e-6));
}

#[test]
fn zero_residuals_leave_ols_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(30, |i, _| 0.5 + 2.0 * x[(i, 0)] - x[(i, 1)]);
    let locs: Vec<Point> = (0..30).map(|i| Point::new(i as f64 * 0.1, 0.0)).collect();
    let lk = LinearKriging::fit(&x, &y, &locs, &KrigingFit { iterations: 20, ..Default::default() }).unwrap();
    let (m, _) = lk.predict(&x, &locs);
    for (a, b) in m.iter().zip(y.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
}

#[test]
fn white_noise_residuals_go_to_the_nugget() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 120;
    let locs: Vec<Point> = (0..n).map(|_| Point::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0))).collect();
    let r = DVector::from_fn(n, |_, _| {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        0.5 * z
    });
    let p = kriging::fit_params(&locs, &r, &KrigingFit::default()).unwrap();
    assert!(p.nugget > p.matern.variance, "{p:?}");
    let k = Kriging::with_params(&locs, &r, p).unwrap();
    let (m, _) = k.predict(&locs);
    assert!(m.iter().all(|v| v.abs() < 0.5));
}

#[test]
fn nn_fits_a_linear_teacher() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(200, |i, _| 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)] + 0.3 * x[(i, 2)]);
    let mean: f64 = y.sum() / 200.0;
    let sd = (y.map(|v| v * v).sum() / 200.0 - mean * mean).sqrt();
    let nn = NeuralNet::fit(&x, &y, &NnConfig::default()).unwrap();
    let (m, _) = nn.predict(&x);
    let rmse = (m.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0).sqrt();
    assert!(rmse < 0.1 * sd, "rmse {rmse} sd {sd}");
}

fn small_synth(seed: u64) -> poigp_core::eval::Split {
    let cfg = SynthConfig { stations: 80, seed, ..Default::default() };
    let (ds, _) = synth_generate(&cfg).unwrap();
    split(&ds, &SplitConfig { ratio: 0.8, seed }).unwrap()
}

#[test]
fn every_kind_handles_every_feature_mode() {
    let sp = small_synth(1);
    let cfg = BaselineConfig {
        kriging: KrigingFit { iterations: 30, ..Default::default() },
        forest: ForestConfig { n_trees: 10, ..Default::default() },
        nn: NnConfig { max_epochs: 50, ..Default::default() },
        ..Default::default()
    };
    let n_types = sp.train.registry.len();
    for kind in BaselineKind::ALL {
        for mode in [FeatureMode::None, FeatureMode::Distance, FeatureMode::Density, FeatureMode::Both] {
            let m = BaselineModel::fit(&sp.train, kind, FeatureConfig::new(mode, n_types), &cfg).unwrap();
            let (mean, var) = m.predict(&sp.test).unwrap();
            assert_eq!(mean.len(), sp.test.n_stations());
            assert!(var.iter().all(|v| *v > 0.0), "{kind:?} {mode:?}");
            assert!(mean.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn tune_dmax_single_candidate_and_determinism() {
    let sp = small_synth(2);
    let cfg = BaselineConfig { kriging: KrigingFit { iterations: 20, ..Default::default() }, ..Default::default() };
    let n_types = sp.train.registry.len();
    let one = tune_dmax(&sp.train, BaselineKind::LinearKriging, FeatureMode::Both, &[0.4], &cfg, 0).unwrap();
    assert_eq!(one, vec![0.4; n_types]);
    let grid = [0.2, 0.4, 0.8];
    let a = tune_dmax(&sp.train, BaselineKind::Gwr, FeatureMode::Density, &grid, &cfg, 3).unwrap();
    let b = tune_dmax(&sp.train, BaselineKind::Gwr, FeatureMode::Density, &grid, &cfg, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| grid.contains(r)));
    assert!(tune_dmax(&sp.train, BaselineKind::Gwr, FeatureMode::Density, &[], &cfg, 3).is_err());
}

#[test]
fn tune_dmax_finds_a_planted_radius() {
    // utilization driven by the count of a single POI type within 0.3 km
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pois: Vec<Point> = (0..60).map(|_| Point::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))).collect();
    let stations: Vec<Point> = (0..200).map(|_| Point::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0))).collect();
    let counts = density_features(&stations, &[pois.clone()], &[0.3]).unwrap();
    let y: Vec<f64> = (0..200).map(|i| counts[(i, 0)] + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let hi = y.iter().cloned().fold(f64::MIN, f64::max) + 1.0;
    let reference = LonLat::new(4.9, 52.37);
    let st = stations
        .iter()
        .enumerate()
        .map(|(i, p)| Station {
            id: format!("S{i}"),
            lonlat: unproject(*p, reference),
            location: *p,
            utilization: (y[i] + 1.0) / (hi + 1.0),
            covariates: vec![rng.random_range(-1.0..1.0)],
        })
        .collect();
    let ps = pois
        .iter()
        .enumerate()
        .map(|(j, p)| Poi { id: format!("R{j}"), lonlat: unproject(*p, reference), location: *p, poi_type: PoiType::restaurant() })
        .collect();
    let registry = TypeRegistry::new(vec![PoiType::restaurant()]).unwrap();
    let ds = Dataset::new(st, ps, reference, registry, vec!["x1".into()]).unwrap();
    let cfg = BaselineConfig::default();
    let grid = default_dmax_grid();
    let r = tune_dmax(&ds, BaselineKind::Gwr, FeatureMode::Density, &grid, &cfg, 0).unwrap();
    assert!((r[0] - 0.3).abs() <= 0.1 + 1e-9, "{r:?}");
}

#[test]
fn folds_partition_the_rows() {
    let f = folds(23, 5, 1).unwrap();
    let mut all: Vec<usize> = f.concat();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(f.iter().all(|x| x.len() >= 4));
    assert!(folds(9, 5, 1).is_err());
}

proptest! {
    #[test]
    fn features_ignore_poi_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st: Vec<Point> = (0..10).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let pois: Vec<Point> = (0..15).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let mut rev = pois.clone();
        rev.reverse();
        prop_assert_eq!(distance_features(&st, &[pois.clone()]).unwrap().0, distance_features(&st, &[rev.clone()]).unwrap().0);
        prop_assert_eq!(density_features(&st, &[pois], &[0.5]).unwrap(), density_features(&st, &[rev], &[0.5]).unwrap());
    }

    #[test]
    fn farther_poi_never_increases_distance(seed in 0u64..1000, extra in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st: Vec<Point> = (0..8).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let mut pois: Vec<Point> = (0..5).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let before = distance_features(&st, &[pois.clone()]).unwrap().0;
        pois.push(Point::new(extra, 5.0));
        let after = distance_features(&st, &[pois]).unwrap().0;
        prop_assert!(after.iter().zip(before.iter()).all(|(a, b)| a <= b));
    }

    #[test]
    fn counts_grow_with_radius(seed in 0u64..1000, r in 0.01f64..1.0, dr in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st: Vec<Point> = (0..8).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let pois: Vec<Point> = (0..20).map(|_| Point::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0))).collect();
        let a = density_features(&st, &[pois.clone()], &[r]).unwrap();
        let b = density_features(&st, &[pois], &[r + dr]).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x <= y));
    }
}
