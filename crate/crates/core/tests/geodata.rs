use poigp_core::error::Error;
use poigp_core::geodata::*;
use proptest::prelude::*;

const STATIONS: &str = "\
id,lon,lat,utilization,pop_density,income,car_density,major_road
a,4.900,52.370,37.5,5000,50000,0.3,1
b,4.910,52.372,12.0,4200,32000,0.4,0
c,4.895,52.365,80.0,6100,41000,0.2,1
";

const POIS: &str = r#"{"type":"FeatureCollection","features":[
 {"type":"Feature","geometry":{"type":"Point","coordinates":[4.901,52.371]},"properties":{"amenity":"restaurant"}},
 {"type":"Feature","geometry":{"type":"Point","coordinates":[4.902,52.369]},"properties":{"amenity":"fountain"}},
 {"type":"Feature","geometry":{"type":"Point","coordinates":[4.903,52.368]},"properties":{"shop":"supermarket"}},
 {"type":"Feature","geometry":{"type":"Point","coordinates":[4.904,52.367]},"properties":{"amenity":"university"}},
 {"type":"Feature","geometry":{"type":"LineString","coordinates":[[4.9,52.3],[4.91,52.31]]},"properties":{"highway":"bus_stop"}},
 {"type":"Feature","geometry":{"type":"Point","coordinates":[4.905,52.366]},"properties":{"railway":"subway_entrance"}}
]}"#;

fn dataset() -> Dataset {
    let schema = StationSchema::default();
    let stations = parse_stations(STATIONS, &schema).unwrap();
    let tags = TagMap::default();
    let pois = parse_poi_geojson(POIS, &tags).unwrap();
    Dataset::assemble(stations, pois.pois, tags.registry(), schema.covariates, None).unwrap()
}

#[test]
fn station_csv_is_normalized_on_ingest() {
    let recs = parse_stations(STATIONS, &StationSchema::default()).unwrap();
    assert_eq!(recs[0].utilization, 0.375);
    assert!((recs[0].covariates[1] - 10.819778284410283).abs() < 1e-12);
    assert_eq!(recs[0].covariates[3], 1.0);
    let bad = STATIONS.replace("32000", "-5");
    assert!(matches!(parse_stations(&bad, &StationSchema::default()), Err(Error::Rows(_))));
}

#[test]
fn poi_counts_add_up() {
    let load = parse_poi_geojson(POIS, &TagMap::default()).unwrap();
    let counts = load.counts();
    let mapped: usize = counts.values().sum();
    assert_eq!(mapped + load.skipped_unmapped + load.skipped_geometry, 6);
    assert_eq!(load.skipped_unmapped, 1);
    assert_eq!(load.skipped_geometry, 1);
    assert_eq!(counts["Restaurant"], 1);
    assert_eq!(counts["PublicTransport"], 1);
}

#[test]
fn bundle_round_trip_and_version_check() {
    let ds = dataset();
    let text = ds.to_bundle_json().unwrap();
    let back = Dataset::from_bundle_json(&text).unwrap();
    assert_eq!(back.to_bundle_json().unwrap(), text);
    assert_eq!(back.target_stats, ds.target_stats);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["bundle_version"] = serde_json::json!(BUNDLE_VERSION + 1);
    assert!(matches!(Dataset::from_bundle_json(&v.to_string()), Err(Error::Artifact(_))));
}

#[test]
fn standardized_target_has_unit_scale() {
    let ds = dataset();
    let z = ds.standardized_target();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 1e-12);
    assert!((sd - 1.0).abs() < 1e-12);
}

fn lonlat() -> impl Strategy<Value = LonLat> {
    (4.0f64..6.0, 51.5f64..53.0).prop_map(|(lon, lat)| LonLat::new(lon, lat))
}

fn points(n: usize) -> impl Strategy<Value = Vec<Point>> {
    proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Point::new(x, y)), 1..n)
}

proptest! {
    #[test]
    fn projection_inverts_near_reference(r in lonlat(), dlon in -0.5f64..0.5, dlat in -0.5f64..0.5) {
        let p = LonLat::new(r.lon + dlon, r.lat + dlat);
        let xy = project_coords(&[p], r).unwrap()[0];
        let back = unproject(xy, r);
        prop_assert!((back.lon - p.lon).abs() < 1e-9);
        prop_assert!((back.lat - p.lat).abs() < 1e-9);
    }

    #[test]
    fn standardization_round_trip(y in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        let (z, stats) = standardize_target(&y).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!((sd - 1.0).abs() < 1e-12);
        for (a, b) in unstandardize(&z, &stats).iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_matrix_properties(a in points(12), b in points(12)) {
        let d = pairwise_distances(&a, &b);
        let dt = pairwise_distances(&b, &a);
        prop_assert_eq!(d.transpose(), dt);
        prop_assert!(d.iter().all(|&v| v >= 0.0));
        let aa = pairwise_distances(&a, &a);
        for i in 0..a.len() {
            prop_assert_eq!(aa[(i, i)], 0.0);
            for j in 0..a.len() {
                prop_assert_eq!(aa[(i, j)], aa[(j, i)]);
                for k in 0..a.len() {
                    prop_assert!(aa[(i, k)] <= aa[(i, j)] + aa[(j, k)] + 1e-12);
                }
            }
        }
    }
}
