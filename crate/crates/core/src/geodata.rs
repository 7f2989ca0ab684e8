//! Dataset types, ingestion of station and POI files, planar projection and
//! standardization.
//!
//! Geographic coordinates are projected onto a local equirectangular frame in
//! kilometres around a reference point (fixed 111.320 km per degree of
//! longitude at the equator and 110.574 km per degree of latitude). Every
//! kernel in the crate consumes planar Euclidean distances in km.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

pub const BUNDLE_VERSION: u32 = 1;

/// Kilometres per degree of longitude at the equator.
pub const KM_PER_DEG_LON: f64 = 111.320;
/// Kilometres per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 110.574;

/// Maximum angular distance from the reference accepted by the projection.
const MAX_OFFSET_DEG: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Self {
        LonLat { lon, lat }
    }

    fn validate(&self) -> Result<()> {
        if !self.lon.is_finite() || !self.lat.is_finite() {
            return Err(Error::Input(format!("non-finite coordinate {self:?}")));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Input(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Input(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// Planar point in km east/north of the dataset reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Equirectangular projection of `points` around `reference`, in km.
pub fn project_coords(points: &[LonLat], reference: LonLat) -> Result<Vec<Point>> {
    reference.validate()?;
    let cos_ref = reference.lat.to_radians().cos();
    points
        .iter()
        .map(|p| {
            p.validate()?;
            let dlon = p.lon - reference.lon;
            let dlat = p.lat - reference.lat;
            if dlon.abs() > MAX_OFFSET_DEG || dlat.abs() > MAX_OFFSET_DEG {
                return Err(Error::Input(format!(
                    "point ({}, {}) is too far from the reference ({}, {}) for a city-scale projection",
                    p.lon, p.lat, reference.lon, reference.lat
                )));
            }
            Ok(Point::new(
                dlon * cos_ref * KM_PER_DEG_LON,
                dlat * KM_PER_DEG_LAT,
            ))
        })
        .collect()
}

/// Inverse of [`project_coords`].
pub fn unproject(point: Point, reference: LonLat) -> LonLat {
    let cos_ref = reference.lat.to_radians().cos();
    LonLat::new(
        reference.lon + point.x / (cos_ref * KM_PER_DEG_LON),
        reference.lat + point.y / KM_PER_DEG_LAT,
    )
}

/// |A| x |B| matrix of Euclidean distances.
pub fn pairwise_distances(a: &[Point], b: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i].dist(&b[j]))
}

/// A POI category. The four categories used for charging-station studies are
/// provided as constructors; other cities may register their own through a
/// tag map.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoiType(String);

impl PoiType {
    pub fn new(name: impl Into<String>) -> Self {
        PoiType(name.into())
    }
    pub fn restaurant() -> Self {
        PoiType::new("Restaurant")
    }
    pub fn store() -> Self {
        PoiType::new("Store")
    }
    pub fn education() -> Self {
        PoiType::new("Education")
    }
    pub fn public_transport() -> Self {
        PoiType::new("PublicTransport")
    }
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PoiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn normalize_type_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Ordered set of POI types Γ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRegistry {
    types: Vec<PoiType>,
}

impl Default for TypeRegistry {
    fn default() -> Self {
        TypeRegistry {
            types: vec![
                PoiType::restaurant(),
                PoiType::store(),
                PoiType::education(),
                PoiType::public_transport(),
            ],
        }
    }
}

impl TypeRegistry {
    pub fn new(types: Vec<PoiType>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &types {
            if !seen.insert(normalize_type_name(t.name())) {
                return Err(Error::Input(format!("duplicate POI type {t}")));
            }
        }
        Ok(TypeRegistry { types })
    }

    pub fn types(&self) -> &[PoiType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, t: &PoiType) -> Option<usize> {
        self.types.iter().position(|x| x == t)
    }

    pub fn contains(&self, t: &PoiType) -> bool {
        self.index_of(t).is_some()
    }

    /// Case- and punctuation-insensitive lookup ("public_transport",
    /// "Public Transport" and "PublicTransport" all match).
    pub fn lookup(&self, name: &str) -> Option<&PoiType> {
        let key = normalize_type_name(name);
        self.types
            .iter()
            .find(|t| normalize_type_name(t.name()) == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lonlat: LonLat,
    pub location: Point,
    /// Fraction of time occupied, in [0, 1].
    pub utilization: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub lonlat: LonLat,
    pub location: Point,
    pub poi_type: PoiType,
}

/// Mean and sample standard deviation used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
}

impl Stats {
    pub fn identity() -> Self {
        Stats { mean: 0.0, sd: 1.0 }
    }

    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Degenerate(format!(
                "need at least 2 values to standardize, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let sd = (ss / (n - 1.0)).sqrt();
        Ok(Stats { mean, sd })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// z = (y - mean) / sd with the sample standard deviation.
pub fn standardize_target(y: &[f64]) -> Result<(Vec<f64>, Stats)> {
    let stats = Stats::of(y)?;
    if !(stats.sd > 1e-12 * stats.mean.abs().max(1.0)) || !stats.sd.is_finite() {
        return Err(Error::Degenerate(
            "target has zero variance and cannot be standardized".into(),
        ));
    }
    Ok((y.iter().map(|&v| stats.apply(v)).collect(), stats))
}

pub fn unstandardize(z: &[f64], stats: &Stats) -> Vec<f64> {
    z.iter().map(|&v| stats.invert(v)).collect()
}

/// Stations, POIs and the statistics used to standardize the model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub stations: Vec<Station>,
    pub pois: Vec<Poi>,
    pub reference: LonLat,
    pub registry: TypeRegistry,
    pub covariate_names: Vec<String>,
    pub target_stats: Stats,
    pub covariate_stats: Vec<Stats>,
}

impl Dataset {
    /// Builds a dataset from already-projected stations and POIs, computing
    /// standardization statistics over the given stations.
    pub fn new(
        stations: Vec<Station>,
        pois: Vec<Poi>,
        reference: LonLat,
        registry: TypeRegistry,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let k = covariate_names.len();
        let mut ids = HashSet::new();
        for s in &stations {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Input(format!("duplicate station id {:?}", s.id)));
            }
            if s.covariates.len() != k {
                return Err(Error::Input(format!(
                    "station {:?} has {} covariates, expected {k}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if !(0.0..=1.0).contains(&s.utilization) {
                return Err(Error::Input(format!(
                    "station {:?} utilization {} outside [0, 1]",
                    s.id, s.utilization
                )));
            }
            if !s.location.x.is_finite() || !s.location.y.is_finite() {
                return Err(Error::Input(format!("station {:?} location not finite", s.id)));
            }
        }
        for p in &pois {
            if !registry.contains(&p.poi_type) {
                return Err(Error::Input(format!(
                    "POI {:?} has unregistered type {}",
                    p.id, p.poi_type
                )));
            }
        }
        let util: Vec<f64> = stations.iter().map(|s| s.utilization).collect();
        let (_, target_stats) = standardize_target(&util)?;
        let covariate_stats = covariate_stats(&stations, k)?;
        Ok(Dataset {
            stations,
            pois,
            reference,
            registry,
            covariate_names,
            target_stats,
            covariate_stats,
        })
    }

    /// Projects raw records around `reference` (or the station centroid).
    pub fn assemble(
        stations: Vec<StationRecord>,
        pois: Vec<PoiRecord>,
        registry: TypeRegistry,
        covariate_names: Vec<String>,
        reference: Option<LonLat>,
    ) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::Input("no stations".into()));
        }
        let reference = reference.unwrap_or_else(|| {
            let n = stations.len() as f64;
            LonLat::new(
                stations.iter().map(|s| s.lonlat.lon).sum::<f64>() / n,
                stations.iter().map(|s| s.lonlat.lat).sum::<f64>() / n,
            )
        });
        let s_ll: Vec<LonLat> = stations.iter().map(|s| s.lonlat).collect();
        let p_ll: Vec<LonLat> = pois.iter().map(|p| p.lonlat).collect();
        let s_xy = project_coords(&s_ll, reference)?;
        let p_xy = project_coords(&p_ll, reference)?;
        let stations = stations
            .into_iter()
            .zip(s_xy)
            .map(|(r, location)| Station {
                id: r.id,
                lonlat: r.lonlat,
                location,
                utilization: r.utilization,
                covariates: r.covariates,
            })
            .collect();
        let pois = pois
            .into_iter()
            .zip(p_xy)
            .map(|(r, location)| Poi {
                id: r.id,
                lonlat: r.lonlat,
                location,
                poi_type: r.poi_type,
            })
            .collect();
        Dataset::new(stations, pois, reference, registry, covariate_names)
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn locations(&self) -> Vec<Point> {
        self.stations.iter().map(|s| s.location).collect()
    }

    /// POI locations grouped by registry order.
    pub fn pois_by_type(&self) -> Vec<Vec<&Poi>> {
        let mut groups = vec![Vec::new(); self.registry.len()];
        for p in &self.pois {
            if let Some(i) = self.registry.index_of(&p.poi_type) {
                groups[i].push(p);
            }
        }
        groups
    }

    pub fn poi_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self
            .registry
            .types()
            .iter()
            .map(|t| (t.name().to_string(), 0))
            .collect();
        for p in &self.pois {
            *counts.entry(p.poi_type.name().to_string()).or_default() += 1;
        }
        counts
    }

    /// Standardized target using this dataset's `target_stats`.
    pub fn standardized_target(&self) -> Vec<f64> {
        self.stations
            .iter()
            .map(|s| self.target_stats.apply(s.utilization))
            .collect()
    }

    /// N x K matrix of z-scored covariates using `covariate_stats`.
    pub fn standardized_covariates(&self) -> DMatrix<f64> {
        let k = self.n_covariates();
        DMatrix::from_fn(self.stations.len(), k, |i, j| {
            self.covariate_stats[j].apply(self.stations[i].covariates[j])
        })
    }

    /// Subset of stations sharing POIs and the given statistics.
    pub fn subset(&self, idx: &[usize], target_stats: Stats, covariate_stats: Vec<Stats>) -> Dataset {
        Dataset {
            stations: idx.iter().map(|&i| self.stations[i].clone()).collect(),
            pois: self.pois.clone(),
            reference: self.reference,
            registry: self.registry.clone(),
            covariate_names: self.covariate_names.clone(),
            target_stats,
            covariate_stats,
        }
    }

    /// Recomputes standardization statistics over the current stations.
    pub fn restandardized(mut self) -> Result<Dataset> {
        let util: Vec<f64> = self.stations.iter().map(|s| s.utilization).collect();
        self.target_stats = standardize_target(&util)?.1;
        self.covariate_stats = covariate_stats(&self.stations, self.n_covariates())?;
        Ok(self)
    }

    /// Versioned JSON bundle.
    pub fn to_bundle_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Bundle<'a> {
            bundle_version: u32,
            dataset: &'a Dataset,
        }
        Ok(serde_json::to_string(&Bundle { bundle_version: BUNDLE_VERSION, dataset: self })?)
    }

    /// Reads a bundle and re-checks the dataset invariants; the stored
    /// standardization statistics are kept.
    pub fn from_bundle_json(text: &str) -> Result<Dataset> {
        #[derive(Deserialize)]
        struct Bundle {
            bundle_version: u32,
            dataset: Dataset,
        }
        let b: Bundle = serde_json::from_str(text).map_err(|e| Error::Input(format!("not a dataset bundle: {e}")))?;
        if b.bundle_version != BUNDLE_VERSION {
            return Err(Error::Artifact(format!(
                "bundle version {} is not supported (expected {BUNDLE_VERSION})",
                b.bundle_version
            )));
        }
        let d = b.dataset;
        if d.covariate_stats.len() != d.covariate_names.len() || !(d.target_stats.sd > 0.0) {
            return Err(Error::Input("bundle standardization statistics are inconsistent".into()));
        }
        let checked = Dataset::new(d.stations, d.pois, d.reference, d.registry, d.covariate_names)?;
        Ok(Dataset { target_stats: d.target_stats, covariate_stats: d.covariate_stats, ..checked })
    }

    pub fn save_bundle(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bundle_json()?)?;
        Ok(())
    }

    pub fn load_bundle(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_bundle_json(&fs::read_to_string(path)?)
    }
}

fn covariate_stats(stations: &[Station], k: usize) -> Result<Vec<Stats>> {
    (0..k)
        .map(|j| {
            let col: Vec<f64> = stations.iter().map(|s| s.covariates[j]).collect();
            let mut st = Stats::of(&col)?;
            // constant columns (e.g. an all-zero dummy) pass through centred
            if !(st.sd > 0.0) {
                st.sd = 1.0;
            }
            Ok(st)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Station CSV

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UtilizationScale {
    /// Percent if any value exceeds 1, fraction otherwise.
    #[default]
    Auto,
    Fraction,
    Percent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSchema {
    pub covariates: Vec<String>,
    pub log_columns: Vec<String>,
    pub scale: UtilizationScale,
}

impl Default for StationSchema {
    fn default() -> Self {
        StationSchema {
            covariates: ["pop_density", "income", "car_density", "major_road"]
                .map(String::from)
                .to_vec(),
            log_columns: vec!["income".into()],
            scale: UtilizationScale::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub id: String,
    pub lonlat: LonLat,
    pub utilization: f64,
    pub covariates: Vec<f64>,
}

/// Reads the station CSV. Log columns are transformed on ingest and
/// utilization is normalized to a fraction. Every invalid row is reported
/// with its line number.
pub fn load_stations(path: impl AsRef<Path>, schema: &StationSchema) -> Result<Vec<StationRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_stations(&text, schema)
}

pub fn parse_stations(text: &str, schema: &StationSchema) -> Result<Vec<StationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let mut required = vec!["id", "lon", "lat", "utilization"];
    required.extend(schema.covariates.iter().map(String::as_str));
    for name in &required {
        if col(name).is_none() {
            missing.push(RowError {
                line: 1,
                message: format!("missing column {name:?}"),
            });
        }
    }
    if !missing.is_empty() {
        return Err(Error::Rows(missing));
    }
    let (id_c, lon_c, lat_c, u_c) = (
        col("id").unwrap(),
        col("lon").unwrap(),
        col("lat").unwrap(),
        col("utilization").unwrap(),
    );
    let cov_c: Vec<usize> = schema.covariates.iter().map(|c| col(c).unwrap()).collect();
    let is_log: Vec<bool> = schema
        .covariates
        .iter()
        .map(|c| schema.log_columns.contains(c))
        .collect();

    let mut errors = Vec::new();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let mut row_errs = Vec::new();
        let num = |c: usize, name: &str, errs: &mut Vec<String>| -> f64 {
            let cell = row.get(c).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    errs.push(format!("non-numeric {name} value {cell:?}"));
                    f64::NAN
                }
            }
        };
        let id = row.get(id_c).unwrap_or("").to_string();
        if id.is_empty() {
            row_errs.push("empty id".to_string());
        } else if !seen.insert(id.clone()) {
            row_errs.push(format!("duplicate station id {id:?}"));
        }
        let lon = num(lon_c, "lon", &mut row_errs);
        let lat = num(lat_c, "lat", &mut row_errs);
        let util = num(u_c, "utilization", &mut row_errs);
        if util.is_finite() && !(0.0..=100.0).contains(&util) {
            row_errs.push(format!("utilization {util} outside [0, 100]"));
        }
        if util.is_finite() && schema.scale == UtilizationScale::Fraction && util > 1.0 {
            row_errs.push(format!("utilization {util} outside [0, 1] (fraction scale)"));
        }
        let mut covariates = Vec::with_capacity(cov_c.len());
        for (j, &c) in cov_c.iter().enumerate() {
            let name = &schema.covariates[j];
            let v = num(c, name, &mut row_errs);
            if is_log[j] {
                if v.is_finite() && v <= 0.0 {
                    row_errs.push(format!("{name} must be positive for the log transform, got {v}"));
                }
                covariates.push(v.ln());
            } else {
                covariates.push(v);
            }
        }
        if lat.is_finite() && !(-90.0..=90.0).contains(&lat) {
            row_errs.push(format!("latitude {lat} outside [-90, 90]"));
        }
        if lon.is_finite() && !(-180.0..=180.0).contains(&lon) {
            row_errs.push(format!("longitude {lon} outside [-180, 180]"));
        }
        if row_errs.is_empty() {
            records.push(StationRecord {
                id,
                lonlat: LonLat::new(lon, lat),
                utilization: util,
                covariates,
            });
        } else {
            errors.extend(row_errs.into_iter().map(|message| RowError { line, message }));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    let percent = match schema.scale {
        UtilizationScale::Auto => records.iter().any(|r| r.utilization > 1.0),
        UtilizationScale::Fraction => false,
        UtilizationScale::Percent => true,
    };
    if percent {
        for r in &mut records {
            r.utilization /= 100.0;
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// POIs

/// Ordered OSM tag to POI type rules; the first matching rule wins.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMap {
    rules: Vec<(String, String, PoiType)>,
}

impl Default for TagMap {
    fn default() -> Self {
        let mut rules = Vec::new();
        let mut add = |k: &str, v: &str, t: PoiType| rules.push((k.to_string(), v.to_string(), t));
        add("amenity", "restaurant", PoiType::restaurant());
        for v in ["clothes", "department_store", "supermarket", "mall", "convenience"] {
            add("shop", v, PoiType::store());
        }
        add("building", "retail", PoiType::store());
        add("amenity", "school", PoiType::education());
        add("amenity", "university", PoiType::education());
        add("highway", "bus_stop", PoiType::public_transport());
        add("railway", "station", PoiType::public_transport());
        add("railway", "subway_entrance", PoiType::public_transport());
        add("public_transport", "station", PoiType::public_transport());
        TagMap { rules }
    }
}

impl TagMap {
    /// Parses `osm_key=osm_value -> TypeName` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parsed = line.split_once("->").and_then(|(lhs, ty)| {
                let (k, v) = lhs.trim().split_once('=')?;
                let (k, v, ty) = (k.trim(), v.trim(), ty.trim());
                (!k.is_empty() && !v.is_empty() && !ty.is_empty()).then(|| (k, v, ty))
            });
            match parsed {
                Some((k, v, ty)) => rules.push((k.to_string(), v.to_string(), PoiType::new(ty))),
                None => errors.push(RowError {
                    line: i + 1,
                    message: format!("expected `key=value -> Type`, got {line:?}"),
                }),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Rows(errors));
        }
        if rules.is_empty() {
            return Err(Error::Input("tag map has no rules".into()));
        }
        Ok(TagMap { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TagMap::parse(&fs::read_to_string(path)?)
    }

    /// Types in order of first appearance.
    pub fn registry(&self) -> TypeRegistry {
        let mut types: Vec<PoiType> = Vec::new();
        for (_, _, t) in &self.rules {
            if !types.contains(t) {
                types.push(t.clone());
            }
        }
        TypeRegistry { types }
    }

    pub fn classify<'a>(&self, tags: impl Fn(&str) -> Option<&'a str>) -> Option<&PoiType> {
        self.rules
            .iter()
            .find(|(k, v, _)| tags(k).is_some_and(|val| val == v))
            .map(|(_, _, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub id: String,
    pub lonlat: LonLat,
    pub poi_type: PoiType,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoiLoad {
    pub pois: Vec<PoiRecord>,
    pub skipped_unmapped: usize,
    pub skipped_geometry: usize,
    pub warnings: Vec<String>,
}

impl PoiLoad {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut c = BTreeMap::new();
        for p in &self.pois {
            *c.entry(p.poi_type.name().to_string()).or_default() += 1;
        }
        c
    }
}

/// Loads POIs from a GeoJSON FeatureCollection (by `.geojson`/`.json`
/// extension or content) or from a CSV with `id,lon,lat,type` columns.
pub fn load_pois(path: impl AsRef<Path>, tag_map: &TagMap) -> Result<PoiLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "geojson" || ext == "json" || text.trim_start().starts_with('{') {
        parse_poi_geojson(&text, tag_map)
    } else {
        parse_poi_csv(&text, &tag_map.registry())
    }
}

pub fn parse_poi_geojson(text: &str, tag_map: &TagMap) -> Result<PoiLoad> {
    let doc: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Input(format!("malformed GeoJSON: {e}")))?;
    if doc.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err(Error::Input("GeoJSON root must be a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::Input("FeatureCollection without a features array".into()))?;
    let mut load = PoiLoad::default();
    for (i, feat) in features.iter().enumerate() {
        let props = feat.get("properties").and_then(|p| p.as_object());
        let nested = props
            .and_then(|p| p.get("tags"))
            .and_then(|t| t.as_object());
        let tag = |k: &str| -> Option<&str> {
            nested
                .and_then(|t| t.get(k))
                .or_else(|| props.and_then(|p| p.get(k)))
                .and_then(|v| v.as_str())
        };
        let id = feat
            .get("id")
            .or_else(|| props.and_then(|p| p.get("@id").or_else(|| p.get("osm_id")).or_else(|| p.get("id"))))
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("poi-{i}"));
        let geom = feat.get("geometry");
        let gtype = geom.and_then(|g| g.get("type")).and_then(|t| t.as_str());
        if gtype != Some("Point") {
            load.skipped_geometry += 1;
            load.warnings.push(format!(
                "feature {id}: skipped non-point geometry {}",
                gtype.unwrap_or("null")
            ));
            continue;
        }
        let coords = geom
            .and_then(|g| g.get("coordinates"))
            .and_then(|c| c.as_array())
            .filter(|c| c.len() >= 2)
            .and_then(|c| Some((c[0].as_f64()?, c[1].as_f64()?)));
        let Some((lon, lat)) = coords else {
            return Err(Error::Input(format!("feature {id}: malformed point coordinates")));
        };
        let ll = LonLat::new(lon, lat);
        ll.validate()
            .map_err(|e| Error::Input(format!("feature {id}: {e}")))?;
        match tag_map.classify(tag) {
            Some(t) => load.pois.push(PoiRecord {
                id,
                lonlat: ll,
                poi_type: t.clone(),
            }),
            None => load.skipped_unmapped += 1,
        }
    }
    Ok(load)
}

pub fn parse_poi_csv(text: &str, registry: &TypeRegistry) -> Result<PoiLoad> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let cols: Vec<Option<usize>> = ["id", "lon", "lat", "type"].iter().map(|c| col(c)).collect();
    if cols.iter().any(Option::is_none) {
        return Err(Error::Input("POI CSV requires columns id, lon, lat, type".into()));
    }
    let [id_c, lon_c, lat_c, ty_c] = [cols[0].unwrap(), cols[1].unwrap(), cols[2].unwrap(), cols[3].unwrap()];
    let mut load = PoiLoad::default();
    let mut errors = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let parse = |c: usize| row.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite());
        let (Some(lon), Some(lat)) = (parse(lon_c), parse(lat_c)) else {
            errors.push(RowError { line, message: "non-numeric lon/lat".into() });
            continue;
        };
        let ll = LonLat::new(lon, lat);
        if let Err(e) = ll.validate() {
            errors.push(RowError { line, message: e.to_string() });
            continue;
        }
        let ty = row.get(ty_c).unwrap_or("");
        match registry.lookup(ty) {
            Some(t) => load.pois.push(PoiRecord {
                id: row.get(id_c).unwrap_or("").to_string(),
                lonlat: ll,
                poi_type: t.clone(),
            }),
            None => {
                load.skipped_unmapped += 1;
                load.warnings.push(format!("line {line}: unknown POI type {ty:?} skipped"));
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    Ok(load)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haversine_km(a: LonLat, b: LonLat) -> f64 {
        // mean earth radius; only used as an independent cross-check
        let r = 6371.0088;
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dp = p2 - p1;
        let dl = (b.lon - a.lon).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * r * h.sqrt().asin()
    }

    #[test]
    fn reference_maps_to_origin() {
        let r = LonLat::new(4.9, 52.37);
        let p = project_coords(&[r], r).unwrap();
        assert_eq!(p[0], Point::ORIGIN);
    }

    #[test]
    fn north_and_east_offsets() {
        let r = LonLat::new(4.9, 52.37);
        let pts = project_coords(&[LonLat::new(4.9, 52.38), LonLat::new(4.91, 52.37)], r).unwrap();
        assert!((pts[0].y - 1.10574).abs() < 1e-9);
        assert!(pts[0].x.abs() < 1e-12);
        let expected_east = 0.01 * 52.37f64.to_radians().cos() * 111.320;
        assert!((pts[1].x - expected_east).abs() < 1e-12);
        assert!((pts[1].x - 0.67963).abs() < 5e-5);
        // Great-circle cross-check. The fixed 110.574 km/deg north scale is the
        // equatorial meridian degree, about 0.6% short of a spherical-earth
        // degree at 52°N, so north agreement is bounded at 1%.
        let hn = haversine_km(r, LonLat::new(4.9, 52.38));
        let he = haversine_km(r, LonLat::new(4.91, 52.37));
        assert!(((pts[0].y - hn) / hn).abs() < 1e-2, "north {} vs {}", pts[0].y, hn);
        assert!(((pts[1].x - he) / he).abs() < 2e-3, "east {} vs {}", pts[1].x, he);
    }

    #[test]
    fn projection_rejects_bad_latitude() {
        let r = LonLat::new(4.9, 52.37);
        assert!(project_coords(&[LonLat::new(4.9, 95.0)], r).is_err());
        assert!(project_coords(&[LonLat::new(40.0, 52.0)], r).is_err());
    }

    #[test]
    fn standardize_symmetric_case() {
        let (z, st) = standardize_target(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        assert_eq!(st.mean, 2.0);
        assert_eq!(st.sd, 1.0);
    }

    #[test]
    fn standardize_constant_is_degenerate() {
        assert!(matches!(
            standardize_target(&[0.2, 0.2, 0.2]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pairwise_distance_examples() {
        let d = pairwise_distances(&[Point::ORIGIN], &[Point::ORIGIN]);
        assert_eq!(d[(0, 0)], 0.0);
        let d = pairwise_distances(&[Point::ORIGIN], &[Point::new(3.0, 4.0)]);
        assert_eq!(d[(0, 0)], 5.0);
    }

    const HEADER: &str = "id,lon,lat,utilization,pop_density,income,car_density,major_road\n";

    #[test]
    fn percent_scale_detected() {
        let text = format!("{HEADER}a,4.90,52.37,37.5,100,50000,3,1\nb,4.91,52.37,80,120,40000,2,0\n");
        let recs = parse_stations(&text, &StationSchema::default()).unwrap();
        assert_eq!(recs[0].utilization, 0.375);
        assert!((recs[0].covariates[1] - 10.819778284410283).abs() < 1e-12);
        assert_eq!(recs[1].covariates[3], 0.0);
    }

    #[test]
    fn fraction_scale_kept() {
        let text = format!("{HEADER}a,4.90,52.37,0.375,100,50000,3,1\nb,4.91,52.37,0.8,120,40000,2,0\n");
        let recs = parse_stations(&text, &StationSchema::default()).unwrap();
        assert_eq!(recs[0].utilization, 0.375);
    }

    #[test]
    fn duplicate_id_is_reported() {
        let text = format!("{HEADER}a,4.90,52.37,0.3,100,50000,3,1\na,4.91,52.37,0.8,120,40000,2,0\n");
        let err = parse_stations(&text, &StationSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate station id \"a\""), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let text = format!(
            "{HEADER}a,4.90,52.37,0.3,100,50000,3,1\nb,4.91,52.37,xx,120,40000,2,0\nc,4.91,52.37,150,120,0,2,0\n"
        );
        let Err(Error::Rows(rows)) = parse_stations(&text, &StationSchema::default()) else {
            panic!("expected row errors");
        };
        assert!(rows.iter().any(|r| r.line == 3 && r.message.contains("utilization")));
        assert!(rows.iter().any(|r| r.line == 4 && r.message.contains("outside [0, 100]")));
        assert!(rows.iter().any(|r| r.line == 4 && r.message.contains("income")));
    }

    #[test]
    fn missing_column() {
        let text = "id,lon,lat,utilization\na,4.9,52.3,0.3\n";
        let err = parse_stations(text, &StationSchema::default()).unwrap_err();
        assert!(err.to_string().contains("pop_density"));
    }

    #[test]
    fn geojson_tags_map_to_types() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","id":"n1","geometry":{"type":"Point","coordinates":[4.9,52.37]},"properties":{"amenity":"restaurant"}},
          {"type":"Feature","id":"n2","geometry":{"type":"Point","coordinates":[4.9,52.37]},"properties":{"amenity":"fountain"}},
          {"type":"Feature","id":"n3","geometry":{"type":"Point","coordinates":[4.9,52.37]},"properties":{"tags":{"shop":"supermarket"}}},
          {"type":"Feature","id":"w4","geometry":{"type":"LineString","coordinates":[[4.9,52.37],[4.91,52.37]]},"properties":{"highway":"bus_stop"}},
          {"type":"Feature","id":"n5","geometry":{"type":"Point","coordinates":[4.9,52.37]},"properties":{"railway":"subway_entrance"}}
        ]}"#;
        let load = parse_poi_geojson(text, &TagMap::default()).unwrap();
        assert_eq!(load.pois.len(), 3);
        assert_eq!(load.pois[0].poi_type, PoiType::restaurant());
        assert_eq!(load.pois[1].poi_type, PoiType::store());
        assert_eq!(load.pois[2].poi_type, PoiType::public_transport());
        assert_eq!(load.skipped_unmapped, 1);
        assert_eq!(load.skipped_geometry, 1);
        assert_eq!(load.warnings.len(), 1);
        let total: usize = load.counts().values().sum();
        assert_eq!(total, 5 - load.skipped_unmapped - load.skipped_geometry);
    }

    #[test]
    fn malformed_geojson_is_an_error() {
        assert!(parse_poi_geojson("{not json", &TagMap::default()).is_err());
        assert!(parse_poi_geojson(r#"{"type":"Feature"}"#, &TagMap::default()).is_err());
    }

    #[test]
    fn csv_type_column() {
        let text = "id,lon,lat,type\np1,4.9,52.37,education\np2,4.9,52.37,public_transport\np3,4.9,52.37,zoo\n";
        let load = parse_poi_csv(text, &TypeRegistry::default()).unwrap();
        assert_eq!(load.pois[0].poi_type, PoiType::education());
        assert_eq!(load.pois[1].poi_type, PoiType::public_transport());
        assert_eq!(load.skipped_unmapped, 1);
    }

    #[test]
    fn tag_map_file_format() {
        let text = "# custom map\namenity=cafe -> Cafe\nshop = bakery -> Cafe  # food\nleisure=park -> Park\n";
        let map = TagMap::parse(text).unwrap();
        let reg = map.registry();
        assert_eq!(reg.types(), &[PoiType::new("Cafe"), PoiType::new("Park")]);
        let tags = |k: &str| (k == "shop").then_some("bakery");
        assert_eq!(map.classify(tags), Some(&PoiType::new("Cafe")));
        assert!(TagMap::parse("amenity cafe Cafe").is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let rec = |id: &str| StationRecord {
            id: id.into(),
            lonlat: LonLat::new(4.9, 52.37),
            utilization: 0.5,
            covariates: vec![],
        };
        let err = Dataset::assemble(vec![rec("a"), rec("a")], vec![], TypeRegistry::default(), vec![], None);
        assert!(err.is_err());
    }
}
