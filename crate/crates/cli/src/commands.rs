use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use plugtrace::geoloc::{self, EvaluationReport, ReportMetadata, ACCURACY_NOTE};
use plugtrace::ingest::{
    augment_encoded, doubling_plan, geocode_records, make_folds, merge_metadata, restructure, AugmentParams,
    AugmentationSpec, CountryBoundaries, RestructureOptions,
};
use plugtrace::pipeline::{
    load_classifier, load_detector, run_pipeline_with, BackendConfig, ImageFailure, ImageRef, PipelineConfig,
    PipelineRun, RunOptions, SocketFinding,
};
use plugtrace::vision::interchange::{read_ground_truths, read_predictions};
use plugtrace::vision::{classification_report, confusion_matrix, evaluate_detections};
use plugtrace::{ClfClass, KnowledgeBase};
use plugtrace_service::ServiceConfig;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::{
    AugmentArgs, Cli, ClfmetricsArgs, Command, DetmetricsArgs, EvaluateArgs, FoldsArgs, Format, IngestArgs, RunArgs,
    ServeArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub const IMAGE_EXTENSIONS: [&str; 8] = ["png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "webp"];

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a, cli.format),
        Command::Run(a) => run(a, cli),
        Command::Evaluate(a) => evaluate(a, cli.format),
        Command::Detmetrics(a) => detmetrics(a, cli.format),
        Command::Clfmetrics(a) => clfmetrics(a, cli.format),
        Command::Folds(a) => folds(a, cli.format),
        Command::Augment(a) => augment(a, cli.format),
        Command::Serve(a) => serve(a, cli),
    }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Runtime(format!("stdout: {e}")))
}

fn write_file(path: &Path, text: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn ingest(a: &IngestArgs, format: Format) -> Result<()> {
    let loaded;
    let boundaries = if a.boundaries == "bundled" {
        CountryBoundaries::bundled()
    } else {
        loaded = CountryBoundaries::load(&a.boundaries)?;
        &loaded
    };
    let mut records = merge_metadata(&a.meta)?;
    let unresolved = geocode_records(boundaries, &mut records);
    let opts = RestructureOptions {
        images_root: a.images.clone(),
        include_travel: a.include_travel,
    };
    let report = restructure(&records, &a.out, &opts)?;
    let manifest_path = a.out.join(plugtrace::ingest::restructure::MANIFEST_NAME);
    eprintln!(
        "{} manifest rows written to {} ({} failures, {} unresolved)",
        report.manifest.len(),
        manifest_path.display(),
        report.failures.len(),
        unresolved
    );
    match format {
        Format::Json => emit(&to_json(&json!({
            "records": records.len(),
            "unresolved": unresolved,
            "manifest_rows": report.manifest.len(),
            "manifest": manifest_path,
            "excluded_travel": report.excluded_travel,
            "per_country": report.per_country,
            "failures": report.failures,
        }))),
        Format::Csv => {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
            emit(&text)
        }
    }
}

/// Image files directly under `dir`, sorted by name, with ids from file stems.
pub fn image_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.as_str())) {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            files.push((id, path));
        }
    }
    files.sort();
    let mut seen = BTreeSet::new();
    for (id, _) in &files {
        if !seen.insert(id) {
            return Err(CliError::Validation(format!("{}: two images share the id {id}", dir.display())));
        }
    }
    Ok(files)
}

fn run(a: &RunArgs, cli: &Cli) -> Result<()> {
    let cfg: PipelineConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    let det = load_detector(&BackendConfig::load(&a.detector)?)?;
    let clf = load_classifier(&BackendConfig::load(&a.classifier)?)?;
    let mut refs = Vec::new();
    let mut unreadable = Vec::new();
    for (id, path) in image_files(&a.images)? {
        match ImageRef::from_path(&id, &path) {
            Ok(r) => refs.push(r),
            Err(e) => unreadable.push(ImageFailure {
                image_id: id,
                stage: "load".into(),
                message: e.to_string(),
            }),
        }
    }
    let opts = RunOptions {
        jobs: cli.jobs.map(usize::from),
        skip_probe: false,
    };
    let mut run = run_pipeline_with(&refs, det.as_ref(), clf.as_ref(), &cfg, opts)?;
    run.errors.extend(unreadable);
    run.errors.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    for e in &run.errors {
        log::warn!("{}: {} failed: {}", e.image_id, e.stage, e.message);
    }
    let audit_path = a.audit.clone().unwrap_or_else(|| a.out.with_extension("audit.jsonl"));
    write_file(&a.out, to_json(&run).as_bytes())?;
    write_file(&audit_path, run.audit_jsonl().as_bytes())?;
    let images = refs.len() + run.errors.iter().filter(|e| e.stage == "load").count();
    match cli.format {
        Format::Json => emit(&to_json(&json!({
            "images": images,
            "findings": run.findings.len(),
            "errors": run.errors.len(),
            "funnel": run.funnel,
            "out": a.out,
            "audit": audit_path,
        }))),
        Format::Csv => emit(&findings_csv(&run.findings)),
    }
}

pub fn findings_csv(findings: &[SocketFinding]) -> String {
    let mut out = String::from("finding_id,image_id,x_min,y_min,x_max,y_max,det_conf,top_class,top_prob,status\n");
    for f in findings {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            f.finding_id,
            f.image_id,
            f.bbox.x_min,
            f.bbox.y_min,
            f.bbox.x_max,
            f.bbox.y_max,
            f.det_conf,
            f.top_class.as_str(),
            f.top_prob,
            f.status.as_str()
        );
    }
    out
}

/// Findings from a `run` output, a `{"findings": [...]}` object or a bare array.
pub fn read_findings(path: &Path) -> Result<(Vec<SocketFinding>, Option<PipelineRun>)> {
    let v: Value = read_json(path)?;
    let bad = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    if v.is_array() {
        return Ok((serde_json::from_value(v).map_err(bad)?, None));
    }
    if v.get("detector").is_some() {
        let run: PipelineRun = serde_json::from_value(v).map_err(bad)?;
        return Ok((run.findings.clone(), Some(run)));
    }
    match v.get("findings") {
        Some(f) => Ok((serde_json::from_value(f.clone()).map_err(bad)?, None)),
        None => Err(CliError::Validation(format!("{}: no findings array", path.display()))),
    }
}

/// The evaluation report the `evaluate` subcommand prints.
pub fn evaluation_report(
    findings: &[SocketFinding],
    run: Option<&PipelineRun>,
    truth: &geoloc::Truth,
    kb: &KnowledgeBase,
    a: &EvaluateArgs,
) -> Result<EvaluationReport> {
    let mut thresholds = a.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let opts = geoloc::EvalOptions {
        comparator: a.comparator,
        mode: a.mode,
    };
    let evals = geoloc::sweep(findings, truth, kb, &thresholds, opts)?;
    let metadata = ReportMetadata {
        kb_version: kb.version().to_string(),
        comparator: a.comparator,
        mode: a.mode,
        detector: run.map(|r| r.detector.clone()),
        classifier: run.map(|r| r.classifier.clone()),
        notes: vec![ACCURACY_NOTE.to_string()],
    };
    Ok(EvaluationReport::new(evals, metadata))
}

fn evaluate(a: &EvaluateArgs, format: Format) -> Result<()> {
    let (findings, run) = read_findings(&a.findings)?;
    if findings.is_empty() {
        return Err(CliError::Validation("nothing to evaluate".into()));
    }
    let truth = geoloc::read_truth(&a.truth)?;
    let kb = match &a.kb {
        Some(p) => KnowledgeBase::load(p)?,
        None => KnowledgeBase::bundled_v1(),
    };
    let report = evaluation_report(&findings, run.as_ref(), &truth, &kb, a)?;
    if !report.excluded_findings.is_empty() {
        log::warn!("{} finding(s) have no truth entry", report.excluded_findings.len());
    }
    eprint!("{}", geoloc::render_table(&report.rows, a.comparator));
    if let Some(p) = &a.chart {
        write_file(p, geoloc::chart_csv(&report.rows).as_bytes())?;
    }
    match format {
        Format::Json => emit(&to_json(&report)),
        Format::Csv => emit(&geoloc::rows_csv(&report.rows)),
    }
}

fn detmetrics(a: &DetmetricsArgs, format: Format) -> Result<()> {
    let preds = read_predictions(open(&a.preds)?)?;
    let gts = read_ground_truths(open(&a.gts)?)?;
    let report = evaluate_detections(&preds, &gts, a.conf_min)?;
    match format {
        Format::Json => emit(&to_json(&report)),
        Format::Csv => {
            let mut out = String::from("class_id,ground_truths,predictions,ap50,ap5095\n");
            for c in &report.per_class_ap {
                let _ = writeln!(out, "{},{},{},{},{}", c.cls.id(), c.ground_truths, c.predictions, c.ap50, c.ap5095);
            }
            emit(&out)
        }
    }
}

/// `item_id` to label from a CSV with `item_id` and `label` (or `class`) columns.
/// Labels are class names (`A`..`L`, `NOISE`) or indices 0..12.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, ClfClass>> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
            .ok_or_else(|| bad(format!("missing column {}", names[0])))
    };
    let (id_col, label_col) = (col(&["item_id", "image_id", "id"])?, col(&["label", "class"])?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let raw = rec.get(label_col).unwrap_or_default();
        let class = match raw.parse::<usize>() {
            Ok(n) => ClfClass::from_index(n).map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
            Err(_) => raw.parse::<ClfClass>().map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
        };
        if out.insert(id.clone(), class).is_some() {
            return Err(bad(format!("duplicate item {id}")));
        }
    }
    Ok(out)
}

fn clfmetrics(a: &ClfmetricsArgs, format: Format) -> Result<()> {
    let preds = read_labels(&a.preds)?;
    let truth = read_labels(&a.truth)?;
    let missing: Vec<&String> = truth.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(format!(
            "{} truth item(s) have no prediction, first {}",
            missing.len(),
            missing[0]
        )));
    }
    let extra = preds.keys().filter(|k| !truth.contains_key(*k)).count();
    if extra > 0 {
        log::warn!("{extra} prediction(s) have no truth entry and are ignored");
    }
    let t: Vec<ClfClass> = truth.values().copied().collect();
    let p: Vec<ClfClass> = truth.keys().map(|k| preds[k]).collect();
    let m = confusion_matrix(&t, &p)?;
    let report = classification_report(&m)?;
    match format {
        Format::Json => emit(&to_json(&json!({ "confusion_matrix": m, "report": report }))),
        Format::Csv => {
            let mut out = String::from("class,precision,recall,f1,support,predicted\n");
            for c in &report.per_class {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.class.as_str(),
                    c.precision,
                    c.recall,
                    c.f1,
                    c.support,
                    c.predicted
                );
            }
            emit(&out)
        }
    }
}

fn folds(a: &FoldsArgs, format: Format) -> Result<()> {
    let items: Vec<(String, ClfClass)> = read_labels(&a.items)?.into_iter().collect();
    let f = make_folds(&items, a.k, a.seed)?;
    let text = match format {
        Format::Json => to_json(&f),
        Format::Csv => f.to_csv(),
    };
    match &a.out {
        Some(p) => {
            write_file(p, text.as_bytes())?;
            emit(&to_json(&json!({ "out": p, "fold_sizes": f.fold_sizes(), "warnings": f.warnings })))
        }
        None => emit(&text),
    }
}

#[derive(Debug, Serialize)]
struct AugmentedItem {
    image_id: String,
    augmented: Option<u32>,
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<AugmentParams>,
}

fn augment(a: &AugmentArgs, format: Format) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => AugmentationSpec::load(p)?,
        None => AugmentationSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let files = image_files(&a.input)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let paths: BTreeMap<&str, &PathBuf> = files.iter().map(|(id, p)| (id.as_str(), p)).collect();
    let ids: Vec<&str> = files.iter().map(|(id, _)| id.as_str()).collect();
    let items = doubling_plan(&ids)
        .into_par_iter()
        .map(|item| -> Result<AugmentedItem> {
            let src = paths[item.image_id.as_str()];
            match item.augmented {
                None => {
                    let name = src.file_name().expect("listed files have names").to_string_lossy().to_string();
                    let dest = a.out.join(&name);
                    std::fs::copy(src, &dest).map_err(|e| CliError::io(&dest, e))?;
                    Ok(AugmentedItem {
                        image_id: item.image_id,
                        augmented: None,
                        file: name,
                        params: None,
                    })
                }
                Some(i) => {
                    let img = ImageRef::from_path(&item.image_id, src)?;
                    let (bytes, fmt, params) = augment_encoded(&img, &spec, i)?;
                    let ext = fmt.extensions_str().first().copied().unwrap_or("png");
                    let name = format!("{}_aug{i}.{ext}", item.image_id);
                    let dest = a.out.join(&name);
                    std::fs::write(&dest, bytes).map_err(|e| CliError::io(&dest, e))?;
                    Ok(AugmentedItem {
                        image_id: item.image_id,
                        augmented: Some(i),
                        file: name,
                        params: Some(params),
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    eprintln!("{} inputs, {} outputs in {}", files.len(), items.len(), a.out.display());
    match format {
        Format::Json => emit(&to_json(&json!({ "spec": spec, "inputs": files.len(), "items": items }))),
        Format::Csv => {
            let mut out = String::from(
                "image_id,augmented,file,crop_fraction,crop_x,crop_y,rotation,grayscale,hue_shift,brightness\n",
            );
            for it in &items {
                let aug = it.augmented.map(|i| i.to_string()).unwrap_or_default();
                let p = match &it.params {
                    Some(p) => format!(
                        "{},{},{},{},{},{},{}",
                        p.crop_fraction, p.crop_x, p.crop_y, p.rotation, p.grayscale, p.hue_shift, p.brightness
                    ),
                    None => ",,,,,,".into(),
                };
                let _ = writeln!(out, "{},{aug},{},{p}", it.image_id, it.file);
            }
            emit(&out)
        }
    }
}

pub fn service_config(a: &ServeArgs) -> Result<ServiceConfig> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p).map_err(CliError::Validation)?,
        None => {
            let need = |v: &Option<PathBuf>, flag: &str| {
                v.clone()
                    .ok_or_else(|| CliError::Validation(format!("--{flag} is required without --config")))
            };
            ServiceConfig::new(
                need(&a.data_dir, "data-dir")?,
                need(&a.detector, "detector")?,
                need(&a.classifier, "classifier")?,
            )
        }
    };
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(d) = &a.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &a.detector {
        cfg.detector = d.clone();
    }
    if let Some(c) = &a.classifier {
        cfg.classifier = c.clone();
    }
    if !a.kb.is_empty() {
        cfg.kb = a.kb.clone();
    }
    if let Some(t) = &a.token {
        cfg.token = Some(t.clone());
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(s) = &a.static_dir {
        cfg.static_dir = Some(s.clone());
    }
    cfg.validate().map_err(CliError::Validation)?;
    Ok(cfg)
}

fn serve(a: &ServeArgs, cli: &Cli) -> Result<()> {
    let cfg = service_config(a)?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = cli.jobs {
        rt.worker_threads(n as usize);
    }
    let rt = rt.enable_all().build().map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!("serving on {}", cfg.bind);
    rt.block_on(plugtrace_service::serve(cfg)).map_err(CliError::Runtime)
}
