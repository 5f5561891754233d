//! `smearscan` subcommands.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use smearscan_core::classify::{classifier_infer, CropContext, CLASSIFIER_INPUT};
use smearscan_core::datasets::{
    generate_synthetic_slide, load_classification_dataset, load_voc_dir, write_voc_xml, AnnotatedImage, CellLabels,
    CropLabel, SyntheticSlideSpec,
};
use smearscan_core::detect::{detector_infer, postprocess, CellClass, DETECTOR_INPUT};
use smearscan_core::imaging::{crop, decode_any, encode_image, resize, ImageFormat};
use smearscan_core::metrics::{
    classification_report, coco_ap_suite, format_dump_line, parse_prediction_dump, DetectionReport, PredictionDump,
    ScoredBox,
};
use smearscan_core::prng::Prng;
use smearscan_store::server::{FaultConfig, ServerConfig, ServerState};
use smearscan_store::{sync_once, HttpTransport, Store, SyncOptions};

use crate::backends::Backends;
use crate::config::{BackendChoice, CameraKind, Config};
use crate::screening::screen_frame;
use crate::service::{bind, serve, AppState, ServiceOptions};

#[derive(Debug, Parser)]
#[command(name = "smearscan", version, about = "Thin blood smear screening for malaria")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct BackendArgs {
    /// Detector backend: oracle, heuristic or external.
    #[arg(long)]
    pub detector: Option<BackendChoice>,
    /// Classifier backend: oracle, heuristic or external.
    #[arg(long)]
    pub classifier: Option<BackendChoice>,
    /// Directory of oracle fixtures (`<stem>.xml`, `<stem>.labels.json`).
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Relabel RBCs whose p_infected exceeds this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen one slide image and write result.json, overlay.png and crops.
    Screen {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backends: BackendArgs,
        /// Also save the slide and result to the store.
        #[arg(long)]
        save: bool,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Detection metrics from a prediction dump or a backend against VOC annotations.
    EvalDet {
        #[arg(long)]
        gt: PathBuf,
        /// JSON-lines prediction dump; without it the configured detector runs.
        #[arg(long)]
        preds: Option<PathBuf>,
        /// Image directory when running a detector (defaults to --gt).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Write the detector's predictions as a dump.
        #[arg(long)]
        write_preds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backends: BackendArgs,
    },
    /// Classification accuracy on a Parasitized/Uninfected crop tree.
    EvalCls {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: Option<BackendChoice>,
        #[arg(long, default_value_t = 0.5)]
        decision_threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write seeded synthetic slides with VOC annotations and infection labels.
    GenSlides {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rbc: Option<usize>,
        #[arg(long)]
        wbc: Option<usize>,
        #[arg(long)]
        platelets: Option<usize>,
        #[arg(long)]
        parasitized: Option<f64>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        /// Also write ground-truth RBC crops as a Parasitized/Uninfected tree.
        #[arg(long)]
        crops: bool,
    },
    /// Run the device HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        camera_kind: Option<CameraKind>,
        #[arg(long)]
        camera_path: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        backends: BackendArgs,
    },
    /// Upload pending records once.
    Sync {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Inspect the local store.
    Store {
        #[arg(long, global = true)]
        store: Option<PathBuf>,
        #[command(subcommand)]
        action: StoreAction,
    },
    /// Run the reference sync server.
    CloudServer {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8443)]
        port: u16,
        /// Required bearer token; defaults to MAISCOPE_SYNC_TOKEN when set.
        #[arg(long)]
        token: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        fault_rate: f64,
        #[arg(long, default_value_t = 0)]
        fault_seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum StoreAction {
    /// List records, oldest first.
    Ls {
        #[arg(long)]
        state: Option<String>,
    },
    /// Print one record as JSON.
    Show { record_id: String },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parse `argv` and run. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(usage),
        None => Ok(Config::default()),
    }
}

fn apply_backends(cfg: &mut Config, b: &BackendArgs) {
    if let Some(d) = b.detector {
        cfg.detector.backend = d;
    }
    if let Some(c) = b.classifier {
        cfg.classifier.backend = c;
    }
    if let Some(f) = &b.fixtures {
        cfg.fixtures.path = Some(f.clone());
    }
    if let Some(t) = b.threshold {
        cfg.pipeline.malaria_threshold = t;
    }
    if let Some(s) = b.score_floor {
        cfg.detector.score_floor = s;
    }
    if let Some(n) = b.nms_iou {
        cfg.detector.nms_iou = n;
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports always serialize")
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Screen { input, out: dir, backends, save, store } => {
            apply_backends(&mut cfg, &backends);
            if let Some(s) = store {
                cfg.store.path = s;
            }
            cfg.validate().map_err(usage)?;
            let slide = decode_any(&read_file(&input)?).map_err(|e| runtime(format!("{}: {e}", input.display())))?;
            let output = screen_frame(&Backends::from_config(&cfg), &cfg.pipeline_config(), &input, &slide).map_err(runtime)?;
            write_file(&dir.join("result.json"), output.result.to_json().as_bytes())?;
            write_file(&dir.join("overlay.png"), &output.overlay_png)?;
            for c in &output.crops {
                write_file(&dir.join("crops").join(format!("{}.png", c.crop_ref)), &c.png)?;
            }
            let r = &output.result;
            writeln!(
                out,
                "infected {} uninfected {} parasitemia {} wbc {} platelets {}",
                r.infected_count,
                r.uninfected_count,
                r.parasitemia_display(),
                r.wbc_count,
                r.platelet_count
            )
            .map_err(runtime)?;
            if save {
                let store = Store::open(&cfg.store.path).map_err(runtime)?;
                let rec = store.save_screening(&slide, &output).map_err(runtime)?;
                writeln!(out, "saved record {}", rec.record_id()).map_err(runtime)?;
            }
            Ok(())
        }
        Command::EvalDet { gt, preds, images, write_preds, out: report_path, backends } => {
            apply_backends(&mut cfg, &backends);
            let annotations = load_voc_dir(&gt).map_err(runtime)?;
            if annotations.is_empty() {
                return Err(runtime(format!("no VOC annotations in {}", gt.display())));
            }
            let mut dump = PredictionDump::default();
            let ids: Vec<String> = annotations.iter().map(|(p, _)| stem(p)).collect();
            for (id, (_, ann)) in ids.iter().zip(&annotations) {
                dump.add_ground_truth(id.clone(), ann);
            }
            match preds {
                Some(p) => {
                    let text = String::from_utf8(read_file(&p)?).map_err(runtime)?;
                    dump.predictions = parse_prediction_dump(&text).map_err(runtime)?.into_iter().collect::<HashMap<_, _>>();
                }
                None => {
                    if cfg.fixtures.path.is_none() {
                        cfg.fixtures.path = Some(gt.clone());
                    }
                    cfg.validate().map_err(usage)?;
                    let image_dir = images.unwrap_or_else(|| gt.clone());
                    let mut lines = String::new();
                    for (id, (_, ann)) in ids.iter().zip(&annotations) {
                        let dets = detect_annotated(&cfg, &image_dir, id, ann)?;
                        lines.push_str(&format_dump_line(id, &dets));
                        lines.push('\n');
                        dump.add_predictions(id.clone(), dets);
                    }
                    if let Some(w) = write_preds {
                        write_file(&w, lines.as_bytes())?;
                    }
                }
            }
            let metrics = coco_ap_suite(&dump).map_err(runtime)?;
            let report = DetectionReport::new("original image pixels", annotations.len(), metrics);
            let text = to_json(&report);
            if let Some(p) = report_path {
                write_file(&p, text.as_bytes())?;
            }
            writeln!(out, "{text}").map_err(runtime)
        }
        Command::EvalCls { data, classifier, decision_threshold, out: report_path } => {
            if let Some(c) = classifier {
                cfg.classifier.backend = c;
            }
            if cfg.classifier.backend == BackendChoice::Oracle {
                return Err(usage("eval-cls needs a heuristic or external classifier"));
            }
            if cfg.detector.backend == BackendChoice::Oracle {
                cfg.detector.backend = BackendChoice::Heuristic;
            }
            let dataset = load_classification_dataset(&data).map_err(runtime)?;
            let (_, cls) = Backends::from_config(&cfg).for_frame(&data).map_err(runtime)?;
            let mut verdicts = Vec::with_capacity(dataset.items.len());
            let mut truth = Vec::with_capacity(dataset.items.len());
            for item in &dataset.items {
                let img = decode_any(&read_file(&item.image_path)?)
                    .map_err(|e| runtime(format!("{}: {e}", item.image_path.display())))?;
                let crop224 = resize(&img, CLASSIFIER_INPUT, CLASSIFIER_INPUT);
                verdicts.push(classifier_infer(cls.as_ref(), &crop224, &CropContext::default()).map_err(runtime)?);
                truth.push(item.label.is_infected());
            }
            let metrics = classification_report(&verdicts, &truth, decision_threshold).map_err(runtime)?;
            let text = to_json(&serde_json::json!({
                "backend": cls.descriptor().name,
                "total": dataset.items.len(),
                "parasitized": dataset.parasitized,
                "uninfected": dataset.uninfected,
                "accuracy": metrics.accuracy,
                "confusion": metrics.confusion,
            }));
            if let Some(p) = report_path {
                write_file(&p, text.as_bytes())?;
            }
            writeln!(out, "{text}").map_err(runtime)
        }
        Command::GenSlides { seed, count, out: dir, rbc, wbc, platelets, parasitized, width, height, crops } => {
            let base = SyntheticSlideSpec::default();
            let template = SyntheticSlideSpec {
                n_rbc: rbc.unwrap_or(base.n_rbc),
                n_wbc: wbc.unwrap_or(base.n_wbc),
                n_platelet: platelets.unwrap_or(base.n_platelet),
                parasitized_fraction: parasitized.unwrap_or(base.parasitized_fraction),
                width: width.unwrap_or(base.width),
                height: height.unwrap_or(base.height),
                ..base
            };
            let n = generate_slides(&dir, seed, count, &template, crops)?;
            writeln!(out, "wrote {n} slides to {}", dir.display()).map_err(runtime)
        }
        Command::Serve { port, store, camera_kind, camera_path, endpoint, static_dir, backends } => {
            apply_backends(&mut cfg, &backends);
            if let Some(p) = port {
                cfg.server.port = p;
            }
            if let Some(s) = store {
                cfg.store.path = s;
            }
            if let Some(k) = camera_kind {
                cfg.camera.kind = k;
            }
            if let Some(p) = camera_path {
                cfg.camera.path = p;
            }
            if endpoint.is_some() {
                cfg.sync.endpoint = endpoint;
            }
            if static_dir.is_some() {
                cfg.server.static_dir = static_dir;
            }
            let state = Arc::new(AppState::from_config(&cfg).map_err(usage)?);
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(async {
                let listener = bind(cfg.server.port).await.map_err(runtime)?;
                writeln!(out, "listening on {}", listener.local_addr().map_err(runtime)?).map_err(runtime)?;
                out.flush().map_err(runtime)?;
                serve(listener, state).await.map_err(runtime)
            })
        }
        Command::Sync { store, endpoint } => {
            if let Some(s) = store {
                cfg.store.path = s;
            }
            let endpoint = endpoint
                .or(cfg.sync.endpoint.clone())
                .ok_or_else(|| usage("no sync endpoint (use --endpoint or sync.endpoint)"))?;
            let store = Store::open(&cfg.store.path).map_err(runtime)?;
            let opts = ServiceOptions::from_config(&cfg);
            let transport = HttpTransport::new(&endpoint, opts.sync_token, Duration::from_secs(10));
            let report = sync_once(&store, &transport, &SyncOptions::default()).map_err(runtime)?;
            writeln!(out, "{}", to_json(&report)).map_err(runtime)
        }
        Command::Store { store, action } => {
            if let Some(s) = store {
                cfg.store.path = s;
            }
            let store = Store::open(&cfg.store.path).map_err(runtime)?;
            match action {
                StoreAction::Ls { state } => {
                    let records = match state.as_deref() {
                        None | Some("all") => store.records(),
                        Some(s @ ("pending" | "uploading" | "synced" | "failed")) => store.records_in_state(s),
                        Some(other) => return Err(usage(format!("unknown state {other:?}"))),
                    };
                    for r in records {
                        let res = &r.doc.result;
                        writeln!(
                            out,
                            "{}  {}  {:<9}  infected {:>3}  uninfected {:>4}  {}",
                            r.record_id(),
                            r.created_at(),
                            r.sync_state.name(),
                            res.infected_count,
                            res.uninfected_count,
                            res.parasitemia_display()
                        )
                        .map_err(runtime)?;
                    }
                    Ok(())
                }
                StoreAction::Show { record_id } => {
                    let r = store.get(&record_id).ok_or_else(|| runtime(format!("no record {record_id}")))?;
                    writeln!(out, "{}", to_json(&r)).map_err(runtime)
                }
            }
        }
        Command::CloudServer { dir, port, token, fault_rate, fault_seed } => {
            if !(0.0..=1.0).contains(&fault_rate) {
                return Err(usage("--fault-rate must be in [0, 1]"));
            }
            let token = token.or_else(|| std::env::var(smearscan_store::SYNC_TOKEN_ENV).ok().filter(|t| !t.is_empty()));
            let config = ServerConfig {
                token,
                faults: FaultConfig { rate: fault_rate, seed: fault_seed, ..Default::default() },
            };
            let state = Arc::new(ServerState::new(&dir, config).map_err(runtime)?);
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(async {
                let listener = bind(port).await.map_err(runtime)?;
                writeln!(out, "sync server listening on {}", listener.local_addr().map_err(runtime)?).map_err(runtime)?;
                out.flush().map_err(runtime)?;
                smearscan_store::server::serve(listener, state).await.map_err(runtime)
            })
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Locate the image for an annotation: its `<filename>` first, then `<id>.*`.
fn find_image(dir: &Path, id: &str, ann: &AnnotatedImage) -> Option<PathBuf> {
    let named = ann.image_path.file_name().map(|n| dir.join(n)).filter(|p| p.is_file());
    named.or_else(|| {
        ["ppm", "pnm", "png"].iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.is_file())
    })
}

fn detect_annotated(cfg: &Config, dir: &Path, id: &str, ann: &AnnotatedImage) -> Result<Vec<ScoredBox>, CliError> {
    let path = find_image(dir, id, ann).ok_or_else(|| runtime(format!("no image for annotation {id} in {}", dir.display())))?;
    let img = decode_any(&read_file(&path)?).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let (det, _) = Backends::from_config(cfg).for_frame(&path).map_err(runtime)?;
    let raw = detector_infer(det.as_ref(), &resize(&img, DETECTOR_INPUT, DETECTOR_INPUT)).map_err(runtime)?;
    Ok(postprocess(&raw, cfg.pipeline_config().postprocess(), img.width(), img.height())
        .into_iter()
        .map(|d| ScoredBox { class: d.class, score: d.score, bbox: d.bbox })
        .collect())
}

/// Write `count` slides as `slide_NNNN.{ppm,xml,labels.json}` under `dir`.
pub fn generate_slides(
    dir: &Path,
    seed: u64,
    count: usize,
    template: &SyntheticSlideSpec,
    crops: bool,
) -> Result<usize, CliError> {
    let mut seeds = Prng::new(seed);
    for i in 0..count {
        let spec = SyntheticSlideSpec { seed: seeds.next_u64(), ..template.clone() };
        let slide = generate_synthetic_slide(&spec).map_err(usage)?;
        let name = format!("slide_{i:04}");
        let mut truth = slide.truth.clone();
        truth.image_path = PathBuf::from(format!("{name}.ppm"));
        write_file(&dir.join(format!("{name}.ppm")), &encode_image(&slide.image, ImageFormat::PpmP6))?;
        write_file(&dir.join(format!("{name}.xml")), write_voc_xml(&truth).as_bytes())?;
        let labels: CellLabels = slide.labels();
        write_file(&dir.join(format!("{name}.labels.json")), to_json(&labels).as_bytes())?;
        if crops {
            for (j, (class, b)) in slide.truth.objects.iter().enumerate() {
                if *class != CellClass::Rbc {
                    continue;
                }
                let label = if slide.parasitized[j] { CropLabel::Parasitized } else { CropLabel::Uninfected };
                let img = crop(&slide.image, *b).map_err(runtime)?;
                let path = dir.join("crops").join(label.dir_name()).join(format!("{name}_{j:03}.png"));
                write_file(&path, &encode_image(&img, ImageFormat::Png))?;
            }
        }
    }
    Ok(count)
}
