mod common;

use nalgebra::{DMatrix, DVector};
use poigp_core::error::Error;
use poigp_core::eval::{synth_generate, SynthConfig};
use poigp_core::geodata::{Point, PoiType};
use poigp_core::gpmodel::{ChargerKind, FittedModel, ModelSpec, PoiGroup};
use poigp_core::interpret::*;
use poigp_core::kernels::{KernelFamily, PointKernel};
use poigp_core::svi::{self, PoiKernelParams, ProcessState};
use proptest::prelude::*;

fn effect(t: &str, a: f64) -> PoiEffect {
    PoiEffect { poi_id: format!("{t}{a}"), poi_type: t.into(), location: Point::new(0.0, 0.0), alpha_mean: a, alpha_sd: 0.0 }
}

/// A model reduced to one POI type with the given POIs and inducing points.
fn reduced(pois: Vec<Point>, inducing: Vec<Point>, theta: f64, alpha_variance: f64) -> FittedModel {
    let (_, mut model) = common::small_model(0);
    let m = inducing.len();
    model.poi_groups = vec![PoiGroup {
        poi_type: PoiType::education(),
        ids: (0..pois.len()).map(|i| format!("p{i}")).collect(),
        locations: pois,
    }];
    model.hyper.poi = vec![PoiKernelParams { theta, alpha_variance }];
    model.inducing.indices = (0..m).collect();
    model.inducing.locations = inducing;
    model.state.processes = vec![ProcessState::prior_scaled(m, 1.0), ProcessState::prior_scaled(m, 1.0)];
    model
}

#[test]
fn one_poi_one_inducing_point_by_hand() {
    let z = Point::new(0.3, -0.2);
    let a = 0.49;
    let mut model = reduced(vec![z], vec![z], 0.5, a);
    let w = 1.7;
    model.state.processes[1] = ProcessState { mean: DVector::from_element(1, w), factor: DMatrix::from_element(1, 1, 1e-9) };
    let j = model.spec.train.jitter;
    let u = (a + j).sqrt() * w;
    let e = recover_alphas(&model).unwrap();
    assert_eq!(e.len(), 1);
    assert!((e[0].alpha_mean - a * u / (a + j)).abs() < 1e-12);
    assert!((e[0].alpha_mean - u).abs() < 1e-5);
    // Var(α | u) = a - a²/(a + j) when S → 0
    assert!((e[0].alpha_sd.powi(2) - (a - a * a / (a + j))).abs() < 1e-12);
}

#[test]
fn zero_mean_state_gives_zero_alphas_and_zero_rasters() {
    let (ds, mut model) = common::small_model(1);
    for p in &mut model.state.processes {
        p.mean.fill(0.0);
    }
    assert!(recover_alphas(&model).unwrap().iter().all(|e| e.alpha_mean == 0.0));
    let bbox = BBox::around(&ds.locations()).unwrap();
    for c in ["h0", "Education"] {
        let r = spatial_grid(&model, c, bbox, 0.25).unwrap();
        assert!(r.mean.iter().all(|&v| v == 0.0));
        assert!(r.variance.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn unreachable_poi_keeps_its_prior() {
    let z: Vec<Point> = (0..4).map(|i| Point::new(0.2 * i as f64, 0.0)).collect();
    let pois = vec![Point::new(0.1, 0.1), Point::new(5.0, 5.0)];
    let a = 0.3;
    let mut model = reduced(pois, z, 0.4, a);
    model.state.processes[1].mean = DVector::from_vec(vec![0.5, -1.0, 0.3, 2.0]);
    let e = recover_alphas(&model).unwrap();
    assert_eq!(e[1].alpha_mean, 0.0);
    assert!((e[1].alpha_sd - a.sqrt()).abs() < 1e-12);
    assert!(e[0].alpha_mean != 0.0);
}

#[test]
fn recovered_alphas_reproduce_the_posterior_mean_at_inducing_points() {
    let (_, model) = common::small_model(2);
    let effects = recover_alphas(&model).unwrap();
    let z = &model.inducing.locations;
    for (t, g) in model.poi_groups.iter().enumerate() {
        let k = PointKernel::new(model.spec.kernel_family, model.hyper.poi[t].theta).unwrap();
        let alphas: Vec<&PoiEffect> = effects.iter().filter(|e| e.poi_type == g.poi_type.name()).collect();
        let (mean, _) = model.process_posterior(t + 1, z).unwrap();
        for (m, zm) in z.iter().enumerate() {
            let rebuilt: f64 = alphas.iter().map(|e| e.alpha_mean * k.value(zm.dist(&e.location))).sum();
            assert!((rebuilt - mean[m]).abs() < 1e-6, "{}: {rebuilt} vs {}", g.poi_type, mean[m]);
        }
    }
}

#[test]
fn cutoffs_follow_the_types_in_scope() {
    let cfg = SynthConfig { stations: 40, seed: 3, ..SynthConfig::default() };
    let (ds, _) = synth_generate(&cfg).unwrap();
    let mut spec = ModelSpec { seed: 3, inducing_count: Some(20), charger_kind: ChargerKind::Linear, ..ModelSpec::default() };
    spec.poi_types = Some(vec!["Education".into()]);
    spec.train.iterations = 20;
    let model = svi::train(&spec, &ds).unwrap();
    let c = cutoff_distances(&model).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].0, "Education");
    assert!(c[0].1 > 0.0);
    let rows = type_summaries(&model, &recover_alphas(&model).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].poi_count, ds.pois.iter().filter(|p| p.poi_type.name() == "Education").count());
}

#[test]
fn average_magnitude_examples() {
    let e = [effect("A", -1.0), effect("A", 1.0)];
    assert_eq!(average_magnitude(&e, "A").unwrap(), (1.0, 0.0));
    let e = [effect("B", 0.0), effect("B", 0.0), effect("B", 0.0)];
    assert_eq!(average_magnitude(&e, "B").unwrap(), (0.0, 0.0));
    assert!(matches!(average_magnitude(&e, "C"), Err(Error::Input(_))));
}

#[test]
fn raster_compact_support_and_station_values() {
    let (ds, model) = common::small_model(4);
    let bbox = BBox { min_x: -3.0, min_y: -3.0, max_x: 3.0, max_y: 3.0 };
    let r = spatial_grid(&model, "Restaurant", bbox, 0.1).unwrap();
    assert_eq!((r.nx, r.ny), (60, 60));
    assert_eq!(r.mean.len(), 3600);
    let t = model.process_index("Restaurant").unwrap();
    let theta = model.hyper.poi[t - 1].theta;
    let pois = &model.poi_groups[t - 1].locations;
    let mut zeros = 0;
    for (i, c) in r.centers().iter().enumerate() {
        if pois.iter().all(|w| c.dist(w) >= theta) {
            assert_eq!(r.mean[i], 0.0);
            zeros += 1;
        }
    }
    assert!(zeros > 0);

    // A one-cell raster centred on a station agrees with the component breakdown.
    let s = ds.stations[5].location;
    let cell = BBox { min_x: s.x - 0.05, min_y: s.y - 0.05, max_x: s.x + 0.05, max_y: s.y + 0.05 };
    let one = spatial_grid(&model, "h0", cell, 0.1).unwrap();
    let x = model.standardize_covariates(&ds.stations[5..6]).unwrap();
    let comps = model.components(&x, &[s]).unwrap();
    assert!((one.mean[0] - comps.processes[0].0[0]).abs() < 1e-10);
    assert!((one.variance[0] - comps.processes[0].1[0]).abs() < 1e-10);
}

#[test]
fn raster_errors() {
    let (_, model) = common::small_model(5);
    let flat = BBox { min_x: 0.0, min_y: 0.0, max_x: 1.0, max_y: 0.0 };
    assert!(matches!(spatial_grid(&model, "h0", flat, 0.1), Err(Error::Input(_))));
    let bbox = BBox { min_x: 0.0, min_y: 0.0, max_x: 1.0, max_y: 1.0 };
    assert!(spatial_grid(&model, "h0", bbox, 0.0).is_err());
    assert!(spatial_grid(&model, "zoo", bbox, 0.1).is_err());
    let mut untrained = model.clone();
    untrained.trace.clear();
    assert!(matches!(spatial_grid(&untrained, "h0", bbox, 0.1), Err(Error::State(_))));
    assert!(matches!(recover_alphas(&untrained), Err(Error::State(_))));
}

/// Lag at which the empirical semivariogram of the raster reaches the
/// fraction of its sill that a Matérn 3/2 correlation reaches at d = ℓ.
fn variogram_length(r: &Raster) -> f64 {
    let n = r.mean.len() as f64;
    let mu = r.mean.iter().sum::<f64>() / n;
    let sill = r.mean.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let rho_l = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
    let at = |ix: usize, iy: usize| r.mean[iy * r.nx + ix];
    for lag in 1..r.nx.min(r.ny) / 2 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for iy in 0..r.ny {
            for ix in 0..r.nx {
                if ix + lag < r.nx {
                    sum += (at(ix + lag, iy) - at(ix, iy)).powi(2);
                    count += 1;
                }
                if iy + lag < r.ny {
                    sum += (at(ix, iy + lag) - at(ix, iy)).powi(2);
                    count += 1;
                }
            }
        }
        if 0.5 * sum / count as f64 >= (1.0 - rho_l) * sill {
            return lag as f64 * r.cell_km;
        }
    }
    f64::INFINITY
}

#[test]
fn h0_raster_correlation_length_tracks_the_lengthscale() {
    let cfg = SynthConfig {
        stations: 150,
        bbox_km: (6.0, 6.0),
        matern_variance: 1.0,
        matern_lengthscale: 0.8,
        seed: 9,
        ..SynthConfig::default()
    };
    let (ds, _) = synth_generate(&cfg).unwrap();
    let mut spec = ModelSpec { seed: 9, inducing_count: Some(100), charger_kind: ChargerKind::Linear, ..ModelSpec::default() };
    spec.kernel_family = KernelFamily::Relu;
    spec.train.iterations = 200;
    spec.train.learning_rate = 0.05;
    let model = svi::train(&spec, &ds).unwrap();
    let bbox = BBox::around(&ds.locations()).unwrap();
    let r = spatial_grid(&model, "h0", bbox, 0.1).unwrap();
    let est = variogram_length(&r);
    let ls = model.hyper.matern.lengthscale;
    assert!(est > ls / 2.0 && est < ls * 2.0, "variogram length {est}, lengthscale {ls}");
}

proptest! {
    #[test]
    fn average_magnitude_ignores_order(mut a in proptest::collection::vec(-3.0f64..3.0, 1..20), rot in 0usize..20) {
        let e: Vec<PoiEffect> = a.iter().map(|&v| effect("T", v)).collect();
        let (m1, s1) = average_magnitude(&e, "T").unwrap();
        let r = rot % a.len();
        a.rotate_left(r);
        a.reverse();
        let e: Vec<PoiEffect> = a.iter().map(|&v| effect("T", v)).collect();
        let (m2, s2) = average_magnitude(&e, "T").unwrap();
        prop_assert!((m1 - m2).abs() < 1e-12);
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!(m1 >= 0.0 && s1 >= 0.0);
    }
}
