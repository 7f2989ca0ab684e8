//! The additive model `f(x, s) = g(x) + Σ_γ h_γ(s) + h_0(s)` with a Gaussian
//! likelihood: specification, fitted state, prediction and persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{LonLat, Point, PoiType, Station, Stats, TypeRegistry};
use crate::kernels::KernelFamily;
use crate::mlp::Mlp;
use crate::svi::{self, posterior_at, Hyperparameters, InducingSet, TraceEntry, TrainConfig, VariationalState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChargerKind {
    Linear,
    NeuralNet,
}

impl ChargerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChargerKind::Linear => "linear",
            ChargerKind::NeuralNet => "neural",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Some(ChargerKind::Linear),
            "neural" | "nn" | "neuralnet" => Some(ChargerKind::NeuralNet),
            _ => None,
        }
    }
}

/// Charger influence g(x; θ_x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargerFunction {
    pub kind: ChargerKind,
    pub net: Mlp,
    pub params: Vec<f64>,
}

impl ChargerFunction {
    pub fn init<R: Rng>(kind: ChargerKind, inputs: usize, hidden: &[usize], rng: &mut R) -> Self {
        let net = match kind {
            ChargerKind::Linear => Mlp::new(inputs, &[]),
            ChargerKind::NeuralNet => Mlp::new(inputs, hidden),
        };
        let params = net.init(rng, 0.1);
        ChargerFunction { kind, net, params }
    }

    /// Linear map `w·x + b`.
    pub fn linear(weights: &[f64], bias: f64) -> Self {
        let net = Mlp::new(weights.len(), &[]);
        let mut params = weights.to_vec();
        params.push(bias);
        ChargerFunction { kind: ChargerKind::Linear, net, params }
    }

    pub fn evaluate(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.net.forward(&self.params, x)
    }
}

/// g(x) for a single standardized covariate vector.
pub fn charger_influence(g: &ChargerFunction, x: &[f64]) -> Result<f64> {
    if x.len() != g.net.inputs() {
        return Err(Error::Input(format!(
            "covariate vector has length {}, expected {}",
            x.len(),
            g.net.inputs()
        )));
    }
    Ok(g.evaluate(&DMatrix::from_row_slice(1, x.len(), x))[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub charger_kind: ChargerKind,
    /// Hidden widths of the neural charger function.
    pub hidden: Vec<usize>,
    pub kernel_family: KernelFamily,
    /// Restrict the POI processes to these types; all registered types when
    /// `None`.
    pub poi_types: Option<Vec<String>>,
    /// Defaults to `min(N_train, 100)`.
    pub inducing_count: Option<usize>,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            charger_kind: ChargerKind::NeuralNet,
            hidden: vec![4],
            kernel_family: KernelFamily::Relu,
            poi_types: None,
            inducing_count: None,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inducing_count == Some(0) {
            return Err(Error::Parameter("inducing count must be at least 1".into()));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if self.charger_kind == ChargerKind::NeuralNet && self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Parameter("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn types_in_scope(&self, registry: &TypeRegistry) -> Result<Vec<PoiType>> {
        match &self.poi_types {
            None => Ok(registry.types().to_vec()),
            Some(names) => names
                .iter()
                .map(|n| {
                    registry
                        .lookup(n)
                        .cloned()
                        .ok_or_else(|| Error::Parameter(format!("unknown POI type {n:?}")))
                })
                .collect(),
        }
    }

    /// Short label such as `neural+relu`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.charger_kind.name(), self.kernel_family.name())
    }
}

/// POIs of one type as seen by a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiGroup {
    pub poi_type: PoiType,
    pub ids: Vec<String>,
    pub locations: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub poi_groups: Vec<PoiGroup>,
    pub charger: ChargerFunction,
    pub hyper: Hyperparameters,
    pub inducing: InducingSet,
    pub state: VariationalState,
    pub target_stats: Stats,
    pub covariate_stats: Vec<Stats>,
    pub covariate_names: Vec<String>,
    pub reference: LonLat,
    pub block_names: Vec<String>,
    pub trace: Vec<TraceEntry>,
}

/// Predictive distribution at a set of stations.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Standardized scale.
    pub mean: Vec<f64>,
    /// Standardized scale, includes the noise variance.
    pub variance: Vec<f64>,
    /// De-standardized mean clamped to [0, 1].
    pub utilization: Vec<f64>,
}

/// Per-component posterior marginals.
#[derive(Debug, Clone)]
pub struct Components {
    pub charger: DVector<f64>,
    /// (mean, variance) for h_0 then each POI type.
    pub processes: Vec<(DVector<f64>, DVector<f64>)>,
}

impl FittedModel {
    pub fn n_processes(&self) -> usize {
        self.state.processes.len()
    }

    pub fn process_name(&self, p: usize) -> String {
        if p == 0 {
            "h0".into()
        } else {
            self.poi_groups[p - 1].poi_type.name().to_string()
        }
    }

    /// Index of a process by name (`h0` or a POI type).
    pub fn process_index(&self, name: &str) -> Option<usize> {
        if name.eq_ignore_ascii_case("h0") {
            return Some(0);
        }
        let reg = TypeRegistry::new(self.poi_groups.iter().map(|g| g.poi_type.clone()).collect()).ok()?;
        let t = reg.lookup(name)?;
        self.poi_groups.iter().position(|g| &g.poi_type == t).map(|i| i + 1)
    }

    pub(crate) fn ensure_trained(&self) -> Result<()> {
        if self.trace.is_empty() {
            return Err(Error::State("model has not been trained".into()));
        }
        Ok(())
    }

    pub fn standardize_covariates(&self, stations: &[Station]) -> Result<DMatrix<f64>> {
        let k = self.covariate_stats.len();
        if let Some(s) = stations.iter().find(|s| s.covariates.len() != k) {
            return Err(Error::Input(format!(
                "station {:?} has {} covariates, model expects {k}",
                s.id,
                s.covariates.len()
            )));
        }
        Ok(DMatrix::from_fn(stations.len(), k, |i, j| {
            self.covariate_stats[j].apply(stations[i].covariates[j])
        }))
    }

    /// Posterior marginals of process `p` at arbitrary locations.
    pub fn process_posterior(&self, p: usize, locations: &[Point]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.ensure_trained()?;
        let kernel = self.process_kernel(p)?;
        posterior_at(
            &self.state.processes[p],
            &kernel,
            &self.inducing.locations,
            locations,
            self.spec.train.jitter,
        )
    }

    pub fn components(&self, covariates: &DMatrix<f64>, locations: &[Point]) -> Result<Components> {
        self.ensure_trained()?;
        if covariates.nrows() != locations.len() {
            return Err(Error::Input("covariate rows and locations differ in length".into()));
        }
        let processes = (0..self.n_processes())
            .map(|p| self.process_posterior(p, locations))
            .collect::<Result<Vec<_>>>()?;
        Ok(Components { charger: self.charger.evaluate(covariates), processes })
    }

    /// Prediction from standardized covariates.
    pub fn predict_inputs(&self, covariates: &DMatrix<f64>, locations: &[Point]) -> Result<Prediction> {
        let c = self.components(covariates, locations)?;
        let noise = self.hyper.noise_sd * self.hyper.noise_sd;
        let mut mean = c.charger.clone();
        let mut var = DVector::from_element(locations.len(), noise);
        for (m, v) in &c.processes {
            mean += m;
            var += v;
        }
        let utilization = mean.iter().map(|&z| self.target_stats.invert(z).clamp(0.0, 1.0)).collect();
        Ok(Prediction {
            mean: mean.as_slice().to_vec(),
            variance: var.as_slice().to_vec(),
            utilization,
        })
    }

    pub fn predict(&self, stations: &[Station]) -> Result<Prediction> {
        let x = self.standardize_covariates(stations)?;
        let locs: Vec<Point> = stations.iter().map(|s| s.location).collect();
        self.predict_inputs(&x, &locs)
    }

    /// Per-station Gaussian log density of standardized targets, and the sum.
    pub fn log_predictive_density(&self, stations: &[Station], y: &[f64]) -> Result<(Vec<f64>, f64)> {
        if y.len() != stations.len() {
            return Err(Error::Input("target length differs from station count".into()));
        }
        let pred = self.predict(stations)?;
        let per: Vec<f64> = y
            .iter()
            .zip(pred.mean.iter().zip(&pred.variance))
            .map(|(&yi, (&m, &v))| svi::log_normal(yi, m, v))
            .collect();
        let total = per.iter().sum();
        Ok((per, total))
    }

    pub fn final_elbo(&self) -> f64 {
        self.trace.last().map(|t| t.elbo).unwrap_or(f64::NAN)
    }

    /// `iteration,elbo,<block norms...>`
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,elbo");
        for b in &self.block_names {
            write!(out, ",grad_norm_{b}").unwrap();
        }
        out.push('\n');
        for t in &self.trace {
            write!(out, "{},{}", t.iteration, t.elbo).unwrap();
            if t.grad_norms.is_empty() {
                for _ in &self.block_names {
                    out.push(',');
                }
            }
            for g in &t.grad_norms {
                write!(out, ",{g}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let h: Header = serde_json::from_str(text)
            .map_err(|e| Error::Artifact(format!("not a model file: {e}")))?;
        if h.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                h.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Artifact(format!("corrupt model file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FittedModel::from_json(&fs::read_to_string(path)?)
    }
}
