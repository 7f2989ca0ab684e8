use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use poigp_core::error::Error;
use poigp_core::eval::{self, EvalConfig, SynthConfig};
use poigp_core::geodata::{self, Dataset, LonLat, StationSchema, TagMap, UtilizationScale};
use poigp_core::gpmodel::{ChargerKind, FittedModel, ModelSpec};
use poigp_core::interpret::{self, BBox};
use poigp_core::kernels::KernelFamily;

#[derive(Parser)]
#[command(name = "poigp", version, about = "Additive GP model of charging-station utilization with POI effects")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate station and POI files into a dataset bundle.
    Ingest(IngestArgs),
    /// Fit the POI model on a bundle.
    Train(TrainArgs),
    /// Per-type summaries, per-POI effects and posterior rasters of a model.
    Interpret(InterpretArgs),
    /// Predict utilization for the stations of a bundle.
    Predict(PredictArgs),
    /// Baselines and POI model on one train/test split.
    Benchmark(BenchArgs),
    /// Charger × kernel variants of the POI model on one split.
    Sensitivity(BenchArgs),
    /// Generate a synthetic bundle with known parameters.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Scale {
    Auto,
    Fraction,
    Percent,
}

#[derive(Args)]
struct IngestArgs {
    /// Station CSV: id, lon, lat, utilization and covariate columns.
    #[arg(long)]
    stations: PathBuf,
    /// POI GeoJSON (OSM tags) or CSV with id,lon,lat,type.
    #[arg(long)]
    pois: PathBuf,
    /// Tag map file with `key=value -> Type` lines; built-in table if omitted.
    #[arg(long)]
    tag_map: Option<PathBuf>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "pop_density,income,car_density,major_road")]
    covariates: Vec<String>,
    /// Covariates log-transformed on ingest.
    #[arg(long, value_delimiter = ',', default_value = "income")]
    log_columns: Vec<String>,
    /// Utilization unit: percent if any value exceeds 1 (auto), or forced.
    #[arg(long, value_enum, default_value = "auto")]
    utilization_scale: Scale,
    /// Projection origin as lon,lat; station centroid if omitted.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    reference: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelFlags {
    /// Charger function: neural or linear.
    #[arg(long)]
    charger: Option<String>,
    /// POI kernel: relu or gaussian.
    #[arg(long)]
    kernel: Option<String>,
    /// Inducing point count.
    #[arg(long)]
    m: Option<usize>,
    /// Optimizer iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Optimizer step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden widths of the neural charger, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Restrict the POI processes to these types, comma separated.
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset bundle from `ingest` or `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
    /// key = value file (model.* keys); overrides flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raster components: h0 or POI type names. Repeatable.
    #[arg(long)]
    component: Vec<String>,
    /// Raster cell size in km.
    #[arg(long, default_value_t = 0.1)]
    cell: f64,
    /// Raster extent min_x,min_y,max_x,max_y in km; defaults to the box
    /// around POIs and inducing points.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    bbox: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Seed of the split and of every model.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
    /// Also run the repeated-splits summary over this many seeds.
    #[arg(long)]
    repeats: Option<usize>,
    /// key = value run configuration; overrides flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory of the hash-named run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    stations: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// SynthConfig as JSON; overrides flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory of the hash-named run directory.
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code: 2 input, 3 training, 4 artifact.
struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn input(e: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn training(e: impl std::fmt::Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

/// Artifact errors map to 4 wherever they occur.
fn classify(e: Error, default: fn(Error) -> Failure) -> Failure {
    match e {
        Error::Artifact(_) => Failure { code: 4, message: e.to_string() },
        e => default(e),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| input(format!("cannot create {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_bundle(path: &Path) -> Result<Dataset, Failure> {
    Dataset::load_bundle(path).map_err(|e| classify(e, input))
}

fn load_model(path: &Path) -> Result<FittedModel, Failure> {
    FittedModel::load(path).map_err(|e| match e {
        Error::Io(_) => input(e),
        e => Failure { code: 4, message: e.to_string() },
    })
}

fn apply_model_flags(spec: &mut ModelSpec, f: &ModelFlags) -> CmdResult {
    if let Some(c) = &f.charger {
        spec.charger_kind = ChargerKind::parse(c).ok_or_else(|| input(format!("unknown charger {c:?}")))?;
    }
    if let Some(k) = &f.kernel {
        spec.kernel_family = KernelFamily::parse(k).ok_or_else(|| input(format!("unknown kernel {k:?}")))?;
    }
    if f.m.is_some() {
        spec.inducing_count = f.m;
    }
    if let Some(n) = f.iterations {
        spec.train.iterations = n;
    }
    if let Some(lr) = f.lr {
        spec.train.learning_rate = lr;
    }
    if let Some(h) = &f.hidden {
        spec.hidden = h.clone();
    }
    if let Some(t) = &f.types {
        spec.poi_types = Some(t.clone());
    }
    Ok(())
}

fn apply_config_file(cfg: &mut EvalConfig, path: &Option<PathBuf>) -> CmdResult {
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| input(format!("cannot read {}: {e}", p.display())))?;
        cfg.apply_text(&text).map_err(input)?;
    }
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> CmdResult {
    let tag_map = match &a.tag_map {
        Some(p) => TagMap::load(p).map_err(input)?,
        None => TagMap::default(),
    };
    let scale = match a.utilization_scale {
        Scale::Auto => UtilizationScale::Auto,
        Scale::Fraction => UtilizationScale::Fraction,
        Scale::Percent => UtilizationScale::Percent,
    };
    let schema = StationSchema { covariates: a.covariates.clone(), log_columns: a.log_columns.clone(), scale };
    let stations = geodata::load_stations(&a.stations, &schema).map_err(input)?;
    let pois = geodata::load_pois(&a.pois, &tag_map).map_err(input)?;
    if pois.pois.is_empty() {
        return Err(input(format!("no usable POIs in {}", a.pois.display())));
    }
    let reference = a.reference.as_ref().map(|r| LonLat::new(r[0], r[1]));
    let counts = pois.counts();
    let mut report = String::new();
    let _ = writeln!(report, "stations: {}", stations.len());
    let _ = writeln!(report, "pois: {}", pois.pois.len());
    let _ = writeln!(report, "skipped_unmapped: {}", pois.skipped_unmapped);
    let _ = writeln!(report, "skipped_geometry: {}", pois.skipped_geometry);
    for w in &pois.warnings {
        let _ = writeln!(report, "warning: {w}");
    }
    let dataset = Dataset::assemble(stations, pois.pois, tag_map.registry(), a.covariates.clone(), reference).map_err(input)?;
    let _ = writeln!(report, "poi_types: {}", dataset.registry.len());
    for t in dataset.registry.types() {
        let _ = writeln!(report, "  {}: {}", t.name(), counts.get(t.name()).copied().unwrap_or(0));
    }
    let bundle = dataset.to_bundle_json().map_err(input)?;
    let _ = writeln!(report, "bundle_sha256: {}", sha256_hex(bundle.as_bytes()));
    create_dir(&a.out)?;
    write(&a.out.join("dataset.json"), &bundle)?;
    write(&a.out.join("ingest_report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn train_summary(model: &FittedModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "final_elbo: {}", model.final_elbo());
    let _ = writeln!(s, "noise_sd: {}", model.hyper.noise_sd);
    let _ = writeln!(s, "matern_variance: {}", model.hyper.matern.variance);
    let _ = writeln!(s, "matern_lengthscale_km: {}", model.hyper.matern.lengthscale);
    for (g, p) in model.poi_groups.iter().zip(&model.hyper.poi) {
        let _ = writeln!(s, "theta_km[{}]: {}", g.poi_type.name(), p.theta);
        let _ = writeln!(s, "alpha_variance[{}]: {}", g.poi_type.name(), p.alpha_variance);
    }
    s
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let data = load_bundle(&a.data)?;
    let mut cfg = EvalConfig::default();
    cfg.model = ModelSpec::default();
    cfg.model.seed = a.seed;
    apply_model_flags(&mut cfg.model, &a.model)?;
    apply_config_file(&mut cfg, &a.config)?;
    let model = poigp_core::svi::train(&cfg.model, &data).map_err(|e| match e {
        Error::Training { .. } | Error::Numerical { .. } => training(e),
        e => input(e),
    })?;
    create_dir(&a.out)?;
    write(&a.out.join("model.json"), model.to_json().map_err(training)?)?;
    write(&a.out.join("trace.csv"), model.trace_csv())?;
    let summary = train_summary(&model);
    write(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_interpret(a: &InterpretArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let effects = interpret::recover_alphas(&model).map_err(training)?;
    let summaries = interpret::type_summaries(&model, &effects).map_err(input)?;
    create_dir(&a.out)?;
    write(&a.out.join("type_summary.csv"), interpret::summary_csv(&summaries))?;
    write(&a.out.join("poi_effects.csv"), interpret::effects_csv(&effects, &model))?;
    if !a.component.is_empty() {
        let bbox = match &a.bbox {
            Some(b) => BBox { min_x: b[0], min_y: b[1], max_x: b[2], max_y: b[3] },
            None => {
                let mut pts = model.inducing.locations.clone();
                pts.extend(model.poi_groups.iter().flat_map(|g| g.locations.iter().copied()));
                BBox::around(&pts).map_err(input)?
            }
        };
        for c in &a.component {
            let r = interpret::spatial_grid(&model, c, bbox, a.cell).map_err(input)?;
            let stem = r.component.replace(|ch: char| !ch.is_ascii_alphanumeric(), "_");
            write(&a.out.join(format!("raster_{stem}.csv")), r.to_csv())?;
            write(&a.out.join(format!("raster_{stem}.geojson")), r.to_geojson(model.reference))?;
        }
    }
    print!("{}", interpret::summary_csv(&summaries));
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let data = load_bundle(&a.data)?;
    let p = model.predict(&data.stations).map_err(input)?;
    let mut s = String::from("id,mean,variance,utilization\n");
    for (i, st) in data.stations.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", st.id, p.mean[i], p.variance[i], p.utilization[i]);
    }
    write(&a.out, s)
}

/// Runs a report-producing command into `<out>/<config hash prefix>/`.
fn cmd_report(a: &BenchArgs, sensitivity: bool) -> CmdResult {
    let data = load_bundle(&a.data)?;
    let mut cfg = EvalConfig::default();
    cfg.split.seed = a.seed;
    cfg.model.seed = a.seed;
    cfg.baselines.forest.seed = a.seed;
    cfg.baselines.nn.seed = a.seed;
    apply_model_flags(&mut cfg.model, &a.model)?;
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    apply_config_file(&mut cfg, &a.config)?;
    let report = if sensitivity { eval::sensitivity(&data, &cfg) } else { eval::run_benchmark(&data, &cfg) }.map_err(input)?;
    let kind = if sensitivity { "sensitivity" } else { "benchmark" };
    let data_hash = sha256_hex(data.to_bundle_json().map_err(input)?.as_bytes());
    let run_hash = sha256_hex(format!("{kind}\n{}\n{data_hash}\n", cfg.to_text()).as_bytes());
    let dir = a.out.join(format!("{kind}-{}", &run_hash[..16]));
    create_dir(&dir)?;
    write(&dir.join("config.txt"), cfg.to_text())?;
    write(&dir.join("report.csv"), report.to_csv())?;
    write(&dir.join("report.txt"), report.to_text())?;
    for r in &report.rows {
        log::info!("{} trained in {:.1}s", r.label, r.train_seconds);
    }
    if a.repeats.is_some() && !sensitivity {
        let rows = eval::repeated_benchmark(&data, &cfg).map_err(input)?;
        write(&dir.join("repeated.csv"), eval::bench::repeated_csv(&rows))?;
    }
    print!("{}", report.to_text());
    println!("run directory: {}", dir.display());
    if report.all_failed() {
        return Err(training("every row failed"));
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let mut cfg = SynthConfig { seed: a.seed, ..Default::default() };
    if let Some(n) = a.stations {
        cfg.stations = n;
    }
    if let Some(s) = a.noise {
        cfg.noise_sd = s;
    }
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| input(format!("cannot read {}: {e}", p.display())))?;
        cfg = serde_json::from_str(&text).map_err(|e| input(format!("invalid synth config: {e}")))?;
    }
    let (data, truth) = eval::synth_generate(&cfg).map_err(input)?;
    let cfg_json = serde_json::to_string_pretty(&cfg).map_err(input)?;
    let dir = a.out.join(format!("synth-{}", &sha256_hex(cfg_json.as_bytes())[..16]));
    create_dir(&dir)?;
    write(&dir.join("synth_config.json"), &cfg_json)?;
    write(&dir.join("dataset.json"), data.to_bundle_json().map_err(input)?)?;
    write(&dir.join("truth.json"), serde_json::to_string(&truth).map_err(input)?)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::new().parse_filters(level).init();
    let res = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Interpret(a) => cmd_interpret(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_report(a, false),
        Command::Sensitivity(a) => cmd_report(a, true),
        Command::Synth(a) => cmd_synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
