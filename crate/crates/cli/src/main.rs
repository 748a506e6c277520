//! `hbscan`: batch driver for the screening pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 pipeline.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hbscan_core::dataset::{read_corpus, read_labels, synth_corpus, write_corpus, DatasetError, LABELS_FILE};
use hbscan_core::features::{csv_header, csv_row, Metadata, Region};
use hbscan_core::imaging::{encode_mask_png, encode_png, read_image, ImageRgb8, ImagingError};
use hbscan_core::models::{
    read_bundle, write_bundle, CalibrationParams, DemographicGroup, Demographics, ModelBundle, ModelError, Severity,
    Sex,
};
use hbscan_core::par;
use hbscan_core::pipeline::{
    analyse_region, evaluate_bundle, extract_corpus, extract_patient, finalize, load_net, metrics_from_predictions,
    preprocess_image, screen_features, train_from_corpus, EvalMetrics, PipelineConfig, PipelineError, ScreeningResult,
};
use hbscan_core::reports::OcrConfig;
use hbscan_service::{DefaultTrainer, HttpOcrClient, Service, ServiceConfig, ServiceError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hbscan", version, about = "Haemoglobin screening from nailbed, conjunctiva and tongue photographs")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, env = "HBSCAN_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Illumination correction, CLAHE and glare mask for one image or a patient directory.
    Preprocess(ImageArgs),
    /// ROI mask for one image or a patient directory.
    Segment(ImageArgs),
    /// Feature CSV for a corpus or a patient directory.
    Features(FeaturesArgs),
    /// Writes a synthetic corpus with planted haemoglobin values.
    Synth(SynthArgs),
    /// Trains a model bundle on a corpus.
    Train(TrainArgs),
    /// Screens one patient directory.
    Predict(PredictArgs),
    /// Held-out metrics for a bundle on a corpus.
    Evaluate(EvaluateArgs),
    /// Runs the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ImageArgs {
    /// Image file, or a directory holding `<region>.png` files.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Region of a single image; inferred from the file name when omitted.
    #[arg(long)]
    region: Option<Region>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Corpus directory (with labels.csv) or one patient directory.
    #[arg(long)]
    input: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    meta: MetaArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    input: PathBuf,
    /// Bundle file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    bundle_version: u32,
    /// Recorded in the bundle; fixed by default so runs are reproducible.
    #[arg(long, default_value_t = 0)]
    trained_at: i64,
}

#[derive(Args)]
struct PatientArgs {
    #[arg(long)]
    age: f64,
    #[arg(long)]
    sex: Sex,
    #[arg(long)]
    pregnant: bool,
}

#[derive(Args)]
struct MetaArgs {
    /// Used when the input has no labels file.
    #[arg(long, default_value_t = 0.0)]
    altitude: f64,
    #[arg(long = "meta-age", default_value_t = 0.0)]
    age: f64,
}

#[derive(Args)]
struct PredictArgs {
    /// Patient directory holding any of nailbed.png, conjunctiva.png, tongue.png.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// JSON file to write; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    patient: PatientArgs,
    #[arg(long, default_value_t = 0.0)]
    altitude: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Corpus directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Directory for metrics.json, metrics.csv and predictions.csv.
    #[arg(long)]
    output: PathBuf,
    /// Evaluate every patient instead of the bundle's held-out set.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "HBSCAN_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "HBSCAN_DATA_DIR")]
    data_dir: PathBuf,
    /// Initial bundle; needed only when the data directory is new.
    #[arg(long, env = "HBSCAN_BUNDLE")]
    bundle: Option<PathBuf>,
    /// Overrides the threshold table carried by the bundle.
    #[arg(long, env = "HBSCAN_THRESHOLD_TABLE")]
    threshold_table: Option<PathBuf>,
    /// Corpus mixed into every retrain.
    #[arg(long, env = "HBSCAN_BASE_CORPUS")]
    base_corpus: Option<PathBuf>,
    /// Static bearer token required on every request.
    #[arg(long, env = "HBSCAN_API_TOKEN")]
    token: Option<String>,
    #[arg(long, env = "HBSCAN_OCR_URL")]
    ocr_url: Option<String>,
    #[arg(long, env = "HBSCAN_OCR_TIMEOUT_SECS", default_value_t = 10.0)]
    ocr_timeout_secs: f64,
    #[arg(long, env = "HBSCAN_OCR_RETRIES", default_value_t = 2)]
    ocr_retries: usize,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    stage: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, stage: "usage", message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, stage: "config", message: message.into() }
    }

    fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self { code: 3, stage, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) => 2,
            PipelineError::Imaging(_) | PipelineError::Io(_) | PipelineError::Dataset(_) => 3,
            _ => 4,
        };
        Self { code, stage: e.stage(), message: e.to_string() }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        PipelineError::from(e).into()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::data("io", format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let jobs = cli.jobs;
    match cli.cmd {
        Command::Serve(args) => serve(cfg, args),
        Command::Synth(args) => par::with_jobs(jobs, || synth(&cfg, &args)),
        Command::Preprocess(args) => par::with_jobs(jobs, || preprocess(&cfg, &args)),
        Command::Segment(args) => par::with_jobs(jobs, || segment(&cfg, &args)),
        Command::Features(args) => par::with_jobs(jobs, || features(&cfg, &args)),
        Command::Train(args) => par::with_jobs(jobs, || train(&cfg, &args)),
        Command::Predict(args) => par::with_jobs(jobs, || predict(&cfg, &args)),
        Command::Evaluate(args) => par::with_jobs(jobs, || evaluate(&cfg, &args)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<()> {
    if args.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    write_corpus(&args.output, &synth_corpus(args.n, cfg.seed))?;
    eprintln!("wrote {} patients to {}", args.n, args.output.display());
    Ok(())
}

fn find_image(dir: &Path, region: Region) -> Option<PathBuf> {
    ["png", "jpg", "jpeg"].iter().map(|ext| dir.join(format!("{region}.{ext}"))).find(|p| p.is_file())
}

/// `(region, path)` for a single image or every region image in a directory.
fn image_inputs(args: &ImageArgs) -> Result<Vec<(Region, PathBuf)>> {
    if args.input.is_dir() {
        let found: Vec<_> = Region::ALL.into_iter().filter_map(|r| find_image(&args.input, r).map(|p| (r, p))).collect();
        if found.is_empty() {
            return Err(Failure::data("imaging", format!("{}: no nailbed, conjunctiva or tongue image", args.input.display())));
        }
        return Ok(found);
    }
    if !args.input.is_file() {
        return Err(Failure::data("io", format!("{}: no such file", args.input.display())));
    }
    let region = match args.region {
        Some(r) => r,
        None => args
            .input
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Failure::usage("cannot infer the region from the file name; pass --region"))?,
    };
    Ok(vec![(region, args.input.clone())])
}

fn preprocess(cfg: &PipelineConfig, args: &ImageArgs) -> Result<()> {
    create_dir(&args.output)?;
    for (region, path) in image_inputs(args)? {
        let img = read_image(&path)?;
        let p = preprocess_image(&img, region, cfg)?;
        write_file(&args.output.join(format!("{region}_corrected.png")), &encode_png(&p.corrected)?)?;
        write_file(&args.output.join(format!("{region}_enhanced.png")), &encode_png(&p.enhanced)?)?;
        write_file(&args.output.join(format!("{region}_glare.png")), &encode_mask_png(&p.glare)?)?;
        if let Some(s) = &p.sclera {
            write_file(&args.output.join(format!("{region}_sclera.png")), &encode_mask_png(s)?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SegmentSummary {
    region: Region,
    roi_area_fraction: f64,
    selection_area_fraction: f64,
    low_confidence: bool,
    superpixels: Option<usize>,
}

fn segment(cfg: &PipelineConfig, args: &ImageArgs) -> Result<()> {
    create_dir(&args.output)?;
    let net = load_net(cfg)?;
    for (region, path) in image_inputs(args)? {
        let img = read_image(&path)?;
        let a = analyse_region(&img, region, Metadata::default(), cfg, net.as_ref())?;
        write_file(&args.output.join(format!("{region}_mask.png")), &encode_mask_png(&a.segmented.mask)?)?;
        let summary = SegmentSummary {
            region,
            roi_area_fraction: a.roi_area_fraction(),
            selection_area_fraction: a.segmented.area_fraction,
            low_confidence: a.segmented.low_confidence,
            superpixels: a.segmented.labels.as_ref().map(|l| l.k()),
        };
        write_file(&args.output.join(format!("{region}_segment.json")), &to_json(&summary))?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serialisable");
    out.push(b'\n');
    out
}

fn load_patient_dir(dir: &Path) -> Result<[Option<ImageRgb8>; 3]> {
    let mut images: [Option<ImageRgb8>; 3] = [None, None, None];
    for r in Region::ALL {
        if let Some(p) = find_image(dir, r) {
            images[r.index()] = Some(read_image(&p)?);
        }
    }
    if images.iter().all(Option::is_none) {
        return Err(Failure::data(
            "imaging",
            format!("{}: missing nailbed, conjunctiva and tongue images (expected <region>.png)", dir.display()),
        ));
    }
    Ok(images)
}

fn features(cfg: &PipelineConfig, args: &FeaturesArgs) -> Result<()> {
    if !args.input.is_dir() {
        return Err(Failure::data("io", format!("{}: not a directory", args.input.display())));
    }
    let net = load_net(cfg)?;
    let patients: Vec<(String, Metadata, [Option<ImageRgb8>; 3])> = if args.input.join(LABELS_FILE).is_file() {
        read_corpus(&args.input)?
            .into_iter()
            .map(|(e, imgs)| (e.patient_id.clone(), Metadata { altitude_m: e.altitude_m, age_years: e.age_years }, imgs))
            .collect()
    } else {
        let id = args.input.file_name().and_then(|s| s.to_str()).unwrap_or("patient").to_string();
        vec![(id, Metadata { altitude_m: args.meta.altitude, age_years: args.meta.age }, load_patient_dir(&args.input)?)]
    };
    let rows = par::map_slice(&patients, |(id, meta, imgs)| {
        extract_patient(imgs, *meta, cfg, net.as_ref()).map(|(f, _)| f.iter().map(|fv| csv_row(id, fv)).collect::<Vec<_>>())
    });
    let mut out = csv_header();
    out.push('\n');
    for r in rows {
        for line in r? {
            out.push_str(&line);
            out.push('\n');
        }
    }
    write_file(&args.output, out.as_bytes())
}

fn train(cfg: &PipelineConfig, args: &TrainArgs) -> Result<()> {
    let (bundle, test) = train_from_corpus(&args.input, cfg, args.bundle_version, args.trained_at)?;
    let mut bytes = Vec::new();
    write_bundle(&bundle, &mut bytes)?;
    write_file(&args.output, &bytes)?;
    eprintln!(
        "bundle v{} written to {} ({} patients held out, {} test samples)",
        bundle.bundle_version,
        args.output.display(),
        bundle.held_out.len(),
        test.len()
    );
    Ok(())
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(read_bundle(&bytes[..])?)
}

#[derive(Serialize)]
struct Prediction {
    #[serde(flatten)]
    result: ScreeningResult,
    group: DemographicGroup,
    calibrated_hb: f64,
    calibration: CalibrationParams,
    severity: Severity,
}

fn predict(cfg: &PipelineConfig, args: &PredictArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    let images = load_patient_dir(&args.input)?;
    let who = Demographics { age_years: args.patient.age, sex: args.patient.sex, pregnant: args.patient.pregnant };
    if who.pregnant && who.sex != Sex::Female {
        return Err(Failure::usage("--pregnant requires --sex female"));
    }
    let thresholds = match &cfg.threshold_table {
        Some(_) => cfg.threshold_table()?,
        None => bundle.thresholds.clone(),
    };
    let net = load_net(cfg)?;
    let meta = Metadata { altitude_m: args.altitude, age_years: args.patient.age };
    let (features, areas) = extract_patient(&images, meta, cfg, net.as_ref())?;
    let result = screen_features(features, areas, &bundle)?;
    let calibration = CalibrationParams::IDENTITY;
    let (calibrated_hb, severity) = finalize(result.raw_hb, &calibration, &who, &thresholds)?;
    let out = to_json(&Prediction { result, group: who.group(), calibrated_hb, calibration, severity });
    match &args.output {
        Some(p) => write_file(p, &out),
        None => std::io::stdout().write_all(&out).map_err(|e| Failure::data("io", e.to_string())),
    }
}

fn metrics_csv(m: &EvalMetrics) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("n,{}\naccuracy,{}\nspearman,{}\nmae,{}\n", m.n, m.accuracy, m.spearman, m.mae));
    for (t, row) in Severity::ALL.iter().zip(&m.confusion) {
        for (p, c) in Severity::ALL.iter().zip(row) {
            out.push_str(&format!("confusion_{t}_{p},{c}\n"));
        }
    }
    out
}

fn evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    let thresholds = match &cfg.threshold_table {
        Some(_) => cfg.threshold_table()?,
        None => bundle.thresholds.clone(),
    };
    let mut patients = read_corpus(&args.input)?;
    if !args.all && !bundle.held_out.is_empty() {
        patients.retain(|(e, _)| bundle.held_out.contains(&e.patient_id));
        if patients.is_empty() {
            return Err(Failure::data("dataset", "none of the bundle's held-out patients are in this corpus; pass --all"));
        }
    }
    let demo = read_labels(&args.input)?.into_iter().map(|e| (e.patient_id.clone(), e.demographics())).collect();
    let net = load_net(cfg)?;
    let samples = extract_corpus(&patients, cfg, &thresholds, net.as_ref(), false)?;
    let mut eval_bundle = bundle;
    eval_bundle.thresholds = thresholds;
    let rows = evaluate_bundle(&samples, &demo, &eval_bundle)?;
    let metrics = metrics_from_predictions(&rows);

    create_dir(&args.output)?;
    write_file(&args.output.join("metrics.json"), &to_json(&metrics))?;
    write_file(&args.output.join("metrics.csv"), metrics_csv(&metrics).as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::data("io", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::data("io", e.to_string()))?;
    write_file(&args.output.join("predictions.csv"), &bytes)?;
    eprintln!(
        "n={} accuracy={:.3} spearman={:.3} mae={:.3} g/dL",
        metrics.n, metrics.accuracy, metrics.spearman, metrics.mae
    );
    Ok(())
}

fn serve(cfg: PipelineConfig, args: ServeArgs) -> Result<()> {
    let thresholds = match &args.threshold_table {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            Some(hbscan_core::models::ThresholdTable::from_toml(&text).map_err(|e| Failure::config(e.to_string()))?)
        }
        None => None,
    };
    let initial = args.bundle.as_deref().map(load_bundle).transpose()?;
    let ocr_cfg = OcrConfig { endpoint: args.ocr_url.clone(), timeout_secs: args.ocr_timeout_secs, retries: args.ocr_retries };
    let ocr = args.ocr_url.clone().map(|u| Box::new(HttpOcrClient::new(u)) as Box<dyn hbscan_core::reports::OcrClient>);
    let mut scfg = ServiceConfig::new(&args.data_dir);
    scfg.pipeline = cfg;
    scfg.thresholds = thresholds;
    scfg.base_corpus = args.base_corpus.clone();
    scfg.ocr = ocr_cfg;
    let service = Service::open(scfg, initial, Box::new(DefaultTrainer), ocr).map_err(|e| match e {
        ServiceError::Invalid { message, .. } => Failure::config(message),
        ServiceError::Pipeline(p) => p.into(),
        other => Failure::data("storage", other.to_string()),
    })?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let app = hbscan_service::http::router(Arc::new(service), args.token.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::data("io", e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen).await.map_err(|e| Failure::config(format!("bind {}: {e}", args.listen)))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Failure::data("io", e.to_string()))?);
        axum_serve(listener, app).await
    })
}

async fn axum_serve(listener: tokio::net::TcpListener, app: hbscan_service::http::Router) -> Result<()> {
    hbscan_service::http::serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| Failure::data("io", e.to_string()))
}
