//! Pipeline stages over an output directory. Each stage verifies its
//! prerequisites, writes its artifacts, and records a stamp with a config
//! fingerprint plus content hashes; a stage whose stamp still verifies is
//! skipped on re-runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::{EvalSelection, ExperimentConfig};
use crate::harness::montage::{render_montage, MontageRow};
use crate::harness::boxplot::render_boxplots;
use crate::netcore::{load_model, save_model, NetworkModel};
use crate::rng::CounterRng;
use crate::saliency::{
    estimate_patterns, explain_batch, load_patterns, save_patterns, Heatmap, PatternSet,
};
use crate::synthgen::{build_dataset, read_dataset, write_dataset, BackgroundSource, Dataset, Split};
use crate::tensor::Tensor;
use crate::trainer::{evaluate, select_best, train, write_history_csv, StopReason, TrainHistory};
use crate::xmetrics::{
    evaluate_heatmaps, read_metrics_csv, write_metrics_csv, write_summary_csv, MetricsReport,
};

pub const REPORT_VERSION: u32 = 1;

/// Seed-derivation domains (experiment seed -> per-purpose streams).
const STREAM_TRAIN: u64 = 10;
const STREAM_EVAL_SELECTION: u64 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    fingerprint: String,
    outputs: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((sha256_hex(&bytes), bytes.len() as u64))
}

fn fingerprint<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable config").as_bytes())
}

fn rel_path(out: &Path, path: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn stamp_path(out: &Path, stage: &str) -> PathBuf {
    out.join(".stamps").join(format!("{stage}.json"))
}

/// Entries of a still-valid stamp, or None when the stage must run.
fn valid_stamp(out: &Path, stage: &str, fp: &str) -> Option<Vec<FileEntry>> {
    let text = std::fs::read_to_string(stamp_path(out, stage)).ok()?;
    let stamp: Stamp = serde_json::from_str(&text).ok()?;
    if stamp.fingerprint != fp {
        return None;
    }
    for entry in &stamp.outputs {
        let (hash, _) = hash_file(&out.join(&entry.path)).ok()?;
        if hash != entry.sha256 {
            return None;
        }
    }
    Some(stamp.outputs)
}

fn write_stamp(out: &Path, stage: &str, fp: &str, files: &[PathBuf]) -> Result<Vec<FileEntry>> {
    let mut outputs = Vec::with_capacity(files.len());
    for f in files {
        let (sha256, bytes) = hash_file(f)?;
        outputs.push(FileEntry { path: rel_path(out, f), sha256, bytes });
    }
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    let stamp = Stamp { fingerprint: fp.to_string(), outputs: outputs.clone() };
    let path = stamp_path(out, stage);
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, serde_json::to_string_pretty(&stamp)?)?;
    Ok(outputs)
}

fn record_timing(out: &Path, stage: &str, seconds: f64) {
    use std::io::Write;
    if let Ok(mut f) =
        std::fs::OpenOptions::new().create(true).append(true).open(out.join("timings.txt"))
    {
        let _ = writeln!(f, "{stage} {seconds:.3}");
    }
}

fn stage_wrap<T>(stage: &str, r: std::result::Result<T, Error>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::stage(stage, other.to_string()),
    })
}

// ------------------------------------------------------------- generate

pub fn stage_generate(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    let fp = fingerprint(&("generate", &cfg.datasets));
    if let Some(entries) = valid_stamp(&cfg.out_dir, "generate", &fp) {
        eprintln!("[generate] up to date, skipping");
        return Ok(entries);
    }
    let start = Instant::now();
    let run = || -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for ds_cfg in &cfg.datasets {
            eprintln!("[generate] building dataset '{}'", ds_cfg.name);
            let dataset = build_dataset(ds_cfg)?;
            let dir = cfg.out_dir.join("dataset").join(&ds_cfg.name);
            files.extend(write_dataset(&dataset, &dir)?);
        }
        Ok(files)
    };
    let files = stage_wrap("generate", run())?;
    let entries = write_stamp(&cfg.out_dir, "generate", &fp, &files)?;
    record_timing(&cfg.out_dir, "generate", start.elapsed().as_secs_f64());
    Ok(entries)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub holdout_accuracy: f64,
    pub stop_reason: StopReason,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionFile {
    pub accuracies: Vec<f64>,
    pub best_run: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub selection: String,
    pub runs: Vec<RunSummary>,
}

fn train_fingerprint(cfg: &ExperimentConfig) -> String {
    fingerprint(&("train", &cfg.datasets, &cfg.block_filters, cfg.dense_units, &cfg.hp, cfg.seed))
}

pub fn stage_train(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    let fp = train_fingerprint(cfg);
    if let Some(entries) = valid_stamp(&cfg.out_dir, "train", &fp) {
        eprintln!("[train] up to date, skipping");
        return Ok(entries);
    }
    let start = Instant::now();
    let run = || -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for (ci, ds_cfg) in cfg.datasets.iter().enumerate() {
            let ds_dir = cfg.out_dir.join("dataset").join(&ds_cfg.name);
            if !ds_dir.join("manifest.json").exists() {
                return Err(Error::stage(
                    "train",
                    format!("dataset '{}' not found; run generate first", ds_cfg.name),
                ));
            }
            let dataset = read_dataset(&ds_dir)?;
            let (h, w) = dataset.config.image_shape;
            let root = CounterRng::new(cfg.seed).derive(STREAM_TRAIN).derive(ci as u64);
            let runs = cfg.hp.runs_per_dataset;
            eprintln!("[train] '{}': {} run(s), max {} epochs", ds_cfg.name, runs, cfg.hp.max_epochs);

            let results: Result<Vec<(NetworkModel, TrainHistory, f64)>> = (0..runs)
                .into_par_iter()
                .map(|k| {
                    let run_rng = root.derive(k as u64);
                    let model = NetworkModel::conv_classifier(
                        (h, w),
                        &cfg.block_filters,
                        cfg.dense_units,
                        2,
                        run_rng.derive(0).key(),
                    )?;
                    let hp = crate::trainer::Hyperparams {
                        shuffle_seed: run_rng.derive(1).key(),
                        ..cfg.hp.clone()
                    };
                    let (model, history) = train(model, &dataset.train, &dataset.val, &hp)?;
                    let (_, acc) = evaluate(&model, &dataset.holdout, cfg.hp.batch_size_eval)?;
                    eprintln!(
                        "[train] '{}' run {k}: {} epochs, holdout accuracy {acc:.4}",
                        ds_cfg.name,
                        history.epochs.len()
                    );
                    Ok((model, history, acc))
                })
                .collect();
            let results = results?;

            let accuracies: Vec<f64> = results.iter().map(|(_, _, a)| *a).collect();
            let (best_run, mean, std) = select_best(&accuracies);
            for (k, (model, history, _)) in results.iter().enumerate() {
                let run_dir = cfg.out_dir.join("runs").join(&ds_cfg.name).join(k.to_string());
                std::fs::create_dir_all(&run_dir)?;
                save_model(model, &run_dir.join("checkpoint"))?;
                write_history_csv(history, &run_dir.join("history.csv"))?;
                files.push(run_dir.join("checkpoint"));
                files.push(run_dir.join("history.csv"));
            }
            let selection = SelectionFile {
                accuracies: accuracies.clone(),
                best_run,
                accuracy_mean: mean,
                accuracy_std: std,
                selection: "best holdout accuracy".into(),
                runs: results
                    .iter()
                    .enumerate()
                    .map(|(k, (_, h, a))| RunSummary {
                        run: k,
                        holdout_accuracy: *a,
                        stop_reason: h.stop_reason,
                        epochs: h.epochs.len(),
                        best_epoch: h.best_epoch,
                    })
                    .collect(),
            };
            let sel_path = cfg.out_dir.join("runs").join(&ds_cfg.name).join("selection.json");
            std::fs::write(&sel_path, serde_json::to_string_pretty(&selection)?)?;
            files.push(sel_path);
        }
        Ok(files)
    };
    let files = stage_wrap("train", run())?;
    let entries = write_stamp(&cfg.out_dir, "train", &fp, &files)?;
    record_timing(&cfg.out_dir, "train", start.elapsed().as_secs_f64());
    Ok(entries)
}

// -------------------------------------------------------------- explain

fn read_selection(cfg: &ExperimentConfig, name: &str, stage: &str) -> Result<SelectionFile> {
    let path = cfg.out_dir.join("runs").join(name).join("selection.json");
    let text = std::fs::read_to_string(&path).map_err(|_| {
        Error::stage(stage, format!("missing {}; run train first", rel_path(&cfg.out_dir, &path)))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn best_model(cfg: &ExperimentConfig, name: &str, stage: &str) -> Result<NetworkModel> {
    let selection = read_selection(cfg, name, stage)?;
    let path = cfg
        .out_dir
        .join("runs")
        .join(name)
        .join(selection.best_run.to_string())
        .join("checkpoint");
    load_model(&path)
}

/// Holdout indices of the evaluated class-2 samples, in protocol order.
fn eval_sample_indices(
    cfg: &ExperimentConfig,
    cond_idx: usize,
    holdout: &Split,
) -> Result<Vec<usize>> {
    let class2: Vec<usize> =
        (0..holdout.len()).filter(|&i| holdout.label(i) == 2).collect();
    if class2.len() < cfg.eval_count {
        return Err(Error::Protocol(format!(
            "holdout has {} class-2 samples, protocol needs {}",
            class2.len(),
            cfg.eval_count
        )));
    }
    Ok(match cfg.eval_selection {
        EvalSelection::First => class2[..cfg.eval_count].to_vec(),
        EvalSelection::Random => {
            let mut ids = class2;
            CounterRng::new(cfg.seed)
                .derive(STREAM_EVAL_SELECTION)
                .derive(cond_idx as u64)
                .shuffle(&mut ids);
            ids.truncate(cfg.eval_count);
            ids
        }
    })
}

fn sample_id(index: usize) -> String {
    format!("h{index:06}")
}

fn explain_fingerprint(cfg: &ExperimentConfig) -> String {
    fingerprint(&(
        "explain",
        train_fingerprint(cfg),
        &cfg.methods,
        cfg.eval_count,
        &cfg.eval_selection,
        cfg.alpha,
        cfg.beta,
        cfg.epsilon,
    ))
}

pub fn stage_explain(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    let fp = explain_fingerprint(cfg);
    if let Some(entries) = valid_stamp(&cfg.out_dir, "explain", &fp) {
        eprintln!("[explain] up to date, skipping");
        return Ok(entries);
    }
    let start = Instant::now();
    let run = || -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for (ci, ds_cfg) in cfg.datasets.iter().enumerate() {
            let model = best_model(cfg, &ds_cfg.name, "explain")?;
            let dataset = read_dataset(&cfg.out_dir.join("dataset").join(&ds_cfg.name))?;
            let indices = eval_sample_indices(cfg, ci, &dataset.holdout)?;
            eprintln!(
                "[explain] '{}': {} samples x {} methods",
                ds_cfg.name,
                indices.len(),
                cfg.methods.len()
            );

            let patterns = if cfg.methods.iter().any(|m| m.needs_patterns()) {
                let set = estimate_patterns(&model, &dataset.train.images, 16)?;
                for warning in &set.warnings {
                    eprintln!("[explain] pattern warning: {warning}");
                }
                let dir = cfg.out_dir.join("patterns");
                std::fs::create_dir_all(&dir)?;
                let path = dir.join(format!("{}.pat", ds_cfg.name));
                save_patterns(&set, &path)?;
                files.push(path);
                Some(set)
            } else {
                None
            };

            let chunks: Vec<&[usize]> = indices.chunks(16).collect();
            let per_chunk: Result<Vec<Vec<(usize, Vec<Heatmap>)>>> = chunks
                .par_iter()
                .map(|chunk| {
                    let batch = gather_images(&dataset.holdout, chunk);
                    let (_, record) = model.forward(&batch)?;
                    let ids: Vec<String> = chunk.iter().map(|&i| sample_id(i)).collect();
                    let mut method_maps = Vec::with_capacity(cfg.methods.len());
                    for (mi, kind) in cfg.methods.iter().enumerate() {
                        let maps = explain_batch(
                            &model,
                            &record,
                            &cfg.method_spec(*kind),
                            2,
                            patterns.as_ref(),
                            &ids,
                        )?;
                        method_maps.push((mi, maps));
                    }
                    Ok(method_maps)
                })
                .collect();

            for chunk_maps in per_chunk? {
                for (mi, maps) in chunk_maps {
                    let method_dir = cfg
                        .out_dir
                        .join("heatmaps")
                        .join(&ds_cfg.name)
                        .join(cfg.methods[mi].name());
                    for map in maps {
                        files.extend(crate::saliency::write_heatmap(
                            &method_dir,
                            &map.sample_id.clone(),
                            &map,
                        )?);
                    }
                }
            }
        }
        Ok(files)
    };
    let files = stage_wrap("explain", run())?;
    let entries = write_stamp(&cfg.out_dir, "explain", &fp, &files)?;
    record_timing(&cfg.out_dir, "explain", start.elapsed().as_secs_f64());
    Ok(entries)
}

fn gather_images(split: &Split, indices: &[usize]) -> Tensor {
    let (h, w) = split.image_shape();
    let mut data = Vec::with_capacity(indices.len() * h * w);
    for &i in indices {
        data.extend_from_slice(split.image(i));
    }
    Tensor::from_vec(&[indices.len(), 1, h, w], data).expect("gathered image batch")
}

// ------------------------------------------------------------- evaluate

fn evaluate_fingerprint(cfg: &ExperimentConfig) -> String {
    fingerprint(&(
        "evaluate",
        explain_fingerprint(cfg),
        &cfg.transform,
        cfg.mask_restricted,
    ))
}

/// Pixel filter for mask-restricted evaluation.
fn brain_mask_for(
    ds_cfg: &crate::synthgen::DatasetConfig,
    holdout_index: usize,
    holdout_offset: usize,
) -> Result<Vec<u8>> {
    match &ds_cfg.background {
        BackgroundSource::Perlin { .. } => Ok(crate::synthgen::default_brain_mask(
            ds_cfg.image_shape,
        )?
        .bits()
        .to_vec()),
        BackgroundSource::File { archive } => {
            let all = crate::synthgen::load_background_archive(archive, ds_cfg.image_shape)?;
            let global = holdout_offset + holdout_index;
            all.get(global)
                .map(|(_, m)| m.bits().to_vec())
                .ok_or_else(|| Error::Config("archive shrank since generation".into()))
        }
    }
}

pub fn stage_evaluate(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    let fp = evaluate_fingerprint(cfg);
    if let Some(entries) = valid_stamp(&cfg.out_dir, "evaluate", &fp) {
        eprintln!("[evaluate] up to date, skipping");
        return Ok(entries);
    }
    let start = Instant::now();
    let run = || -> Result<Vec<PathBuf>> {
        let mut all_rows = Vec::new();
        for (ci, ds_cfg) in cfg.datasets.iter().enumerate() {
            let dataset = read_dataset(&cfg.out_dir.join("dataset").join(&ds_cfg.name))?;
            let indices = eval_sample_indices(cfg, ci, &dataset.holdout)?;
            let holdout_offset = ds_cfg.split_sizes.0 + ds_cfg.split_sizes.1;
            for kind in &cfg.methods {
                let dir = cfg.out_dir.join("heatmaps").join(&ds_cfg.name).join(kind.name());
                if !dir.exists() {
                    return Err(Error::stage(
                        "evaluate",
                        format!(
                            "no heatmaps at {}; run explain first",
                            rel_path(&cfg.out_dir, &dir)
                        ),
                    ));
                }
                let mut maps = Vec::with_capacity(indices.len());
                let mut gts: Vec<Vec<u8>> = Vec::with_capacity(indices.len());
                for &i in &indices {
                    let map = crate::saliency::read_heatmap(&dir, &sample_id(i)).map_err(|e| {
                        Error::stage("evaluate", format!("missing heatmap: {e}; run explain first"))
                    })?;
                    let gt = dataset.holdout.ground_truth_of(i);
                    if cfg.mask_restricted {
                        let mask = brain_mask_for(ds_cfg, i, holdout_offset)?;
                        let mut filtered = map;
                        let (relevance, gtv): (Vec<f32>, Vec<u8>) = filtered
                            .relevance
                            .iter()
                            .zip(gt)
                            .zip(&mask)
                            .filter(|(_, &m)| m == 1)
                            .map(|((r, g), _)| (*r, *g))
                            .unzip();
                        // masked pixel vectors are no longer rasters; keep a
                        // 1 x n shape for scoring
                        filtered.height = 1;
                        filtered.width = relevance.len();
                        filtered.relevance = relevance;
                        gts.push(gtv);
                        maps.push(filtered);
                    } else {
                        gts.push(gt.to_vec());
                        maps.push(map);
                    }
                }
                let gt_refs: Vec<&[u8]> = gts.iter().map(|g| g.as_slice()).collect();
                let report =
                    evaluate_heatmaps(&ds_cfg.name, &maps, &gt_refs, cfg.transform)?;
                all_rows.extend(report.rows);
            }
        }
        let report = MetricsReport { rows: all_rows, transform: cfg.transform };
        let metrics_path = cfg.out_dir.join("metrics.csv");
        let summary_path = cfg.out_dir.join("summary.csv");
        write_metrics_csv(&report, &metrics_path)?;
        write_summary_csv(&report, &summary_path)?;
        Ok(vec![metrics_path, summary_path])
    };
    let files = stage_wrap("evaluate", run())?;
    let entries = write_stamp(&cfg.out_dir, "evaluate", &fp, &files)?;
    record_timing(&cfg.out_dir, "evaluate", start.elapsed().as_secs_f64());
    Ok(entries)
}

// --------------------------------------------------------------- report

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub runs: Vec<RunSummary>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub best_run: usize,
    pub selection: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub dataset: String,
    pub method: String,
    pub samples: usize,
    pub roc_auc_mean: f64,
    pub roc_auc_std: f64,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub prec99_mean: f64,
    pub prec99_std: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub datasets: Vec<DatasetReport>,
    pub metrics: Vec<MethodAggregate>,
    pub transform: String,
    pub eval_count: usize,
    pub inventory: Vec<FileEntry>,
}

fn report_fingerprint(cfg: &ExperimentConfig) -> String {
    fingerprint(&("report", evaluate_fingerprint(cfg), cfg.montage, cfg.boxplots))
}

pub fn stage_report(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    let fp = report_fingerprint(cfg);
    if let Some(entries) = valid_stamp(&cfg.out_dir, "report", &fp) {
        eprintln!("[report] up to date, skipping");
        return Ok(entries);
    }
    let start = Instant::now();
    let run = || -> Result<Vec<PathBuf>> {
        let metrics_path = cfg.out_dir.join("metrics.csv");
        if !metrics_path.exists() {
            return Err(Error::stage("report", "metrics.csv missing; run evaluate first"));
        }
        let metrics = read_metrics_csv(&metrics_path)?;
        let mut files = Vec::new();

        if cfg.montage {
            let path = cfg.out_dir.join("figures").join("montage.png");
            build_montage(cfg, &path)?;
            files.push(path);
        }
        if cfg.boxplots {
            let path = cfg.out_dir.join("figures").join("boxplots.svg");
            let order: Vec<String> = cfg.methods.iter().map(|m| m.name().to_string()).collect();
            render_boxplots(&metrics, &order, &path)?;
            files.push(path);
        }

        // inventory: every artifact of the completed stages plus figures
        let mut inventory = Vec::new();
        for stage in ["generate", "train", "explain", "evaluate"] {
            let text = std::fs::read_to_string(stamp_path(&cfg.out_dir, stage)).map_err(|_| {
                Error::stage("report", format!("stage '{stage}' has not completed"))
            })?;
            let stamp: Stamp = serde_json::from_str(&text)?;
            inventory.extend(stamp.outputs);
        }
        for f in &files {
            let (sha256, bytes) = hash_file(f)?;
            inventory.push(FileEntry { path: rel_path(&cfg.out_dir, f), sha256, bytes });
        }
        inventory.sort_by(|a, b| a.path.cmp(&b.path));

        let mut datasets = Vec::new();
        for ds_cfg in &cfg.datasets {
            let sel = read_selection(cfg, &ds_cfg.name, "report")?;
            datasets.push(DatasetReport {
                name: ds_cfg.name.clone(),
                runs: sel.runs,
                accuracy_mean: sel.accuracy_mean,
                accuracy_std: sel.accuracy_std,
                best_run: sel.best_run,
                selection: sel.selection,
            });
        }

        let aggregates = metrics
            .aggregates()
            .into_iter()
            .map(|((dataset, method), a)| MethodAggregate {
                dataset,
                method,
                samples: a.samples,
                roc_auc_mean: a.roc_auc_mean,
                roc_auc_std: a.roc_auc_std,
                ap_mean: a.ap_mean,
                ap_std: a.ap_std,
                prec99_mean: a.prec99_mean,
                prec99_std: a.prec99_std,
            })
            .collect();

        let report = ExperimentReport {
            format_version: REPORT_VERSION,
            config: serde_json::to_value(cfg)?,
            datasets,
            metrics: aggregates,
            transform: cfg.transform.name().to_string(),
            eval_count: cfg.eval_count,
            inventory,
        };
        let report_path = cfg.out_dir.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
        files.push(report_path);
        Ok(files)
    };
    let files = stage_wrap("report", run())?;
    let entries = write_stamp(&cfg.out_dir, "report", &fp, &files)?;
    record_timing(&cfg.out_dir, "report", start.elapsed().as_secs_f64());
    Ok(entries)
}

/// One row per (condition, class): the first class-1 and class-2 holdout
/// samples, explained with every configured method at their true class.
fn build_montage(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut shape = (0usize, 0usize);
    for ds_cfg in &cfg.datasets {
        let model = best_model(cfg, &ds_cfg.name, "report")?;
        let dataset = read_dataset(&cfg.out_dir.join("dataset").join(&ds_cfg.name))?;
        let patterns = if cfg.methods.iter().any(|m| m.needs_patterns()) {
            let p = cfg.out_dir.join("patterns").join(format!("{}.pat", ds_cfg.name));
            Some(load_patterns(&p, model.layers.len()).map_err(|e| {
                Error::stage("report", format!("patterns missing ({e}); run explain first"))
            })?)
        } else {
            None
        };
        shape = dataset.config.image_shape;
        for class in [1u8, 2u8] {
            let idx = (0..dataset.holdout.len())
                .find(|&i| dataset.holdout.label(i) == class)
                .ok_or_else(|| Error::Protocol(format!("holdout has no class-{class} sample")))?;
            rows.push(montage_row(cfg, &model, &dataset, idx, class, patterns.as_ref())?);
        }
    }
    render_montage(&rows, shape.0, shape.1, path)
}

fn montage_row(
    cfg: &ExperimentConfig,
    model: &NetworkModel,
    dataset: &Dataset,
    index: usize,
    class: u8,
    patterns: Option<&PatternSet>,
) -> Result<MontageRow> {
    let batch = gather_images(&dataset.holdout, &[index]);
    let (_, record) = model.forward(&batch)?;
    let ids = vec![sample_id(index)];
    let mut heatmaps = Vec::with_capacity(cfg.methods.len());
    for kind in &cfg.methods {
        let mut maps =
            explain_batch(model, &record, &cfg.method_spec(*kind), class, patterns, &ids)?;
        heatmaps.push(maps.pop().unwrap());
    }
    Ok(MontageRow {
        input: dataset.holdout.image(index).to_vec(),
        ground_truth: dataset.holdout.ground_truth_of(index).to_vec(),
        heatmaps,
    })
}

// -------------------------------------------------------------- run-all

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<FileEntry>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    stage_generate(cfg)?;
    stage_train(cfg)?;
    stage_explain(cfg)?;
    stage_evaluate(cfg)?;
    stage_report(cfg)
}

pub fn read_report(out_dir: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(out_dir.join("report.json"))?;
    Ok(serde_json::from_str(&text)?)
}
