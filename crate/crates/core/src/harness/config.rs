//! Experiment configuration: scale presets, the declarative config file,
//! and override resolution (preset -> config file -> CLI flags).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::MethodKind;
use crate::synthgen::{BackgroundSource, DatasetConfig, LesionSpec};
use crate::trainer::Hyperparams;
use crate::xmetrics::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Full-size protocol: 140x192 rasters, 42k/6k/12k splits, four conv
    /// blocks, 125 epochs, three runs. Hours of CPU time.
    Paper,
    /// Small protocol for commodity hardware: 64x64 rasters, 2k/500/1k
    /// splits, two conv blocks, 60 epochs, one run.
    Desk,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::Config(format!("unknown scale '{s}' (expected paper|desk)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundChoice {
    Perlin,
    File,
    Both,
}

impl BackgroundChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "perlin" => Ok(Self::Perlin),
            "file" => Ok(Self::File),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!(
                "unknown background '{s}' (expected perlin|file|both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSelection {
    /// First eval_count class-2 holdout samples in stored order.
    First,
    /// Seed-controlled random selection of class-2 holdout samples.
    Random,
}

impl EvalSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown selection '{s}' (expected first|random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: Scale,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    pub block_filters: Vec<usize>,
    pub dense_units: usize,
    pub hp: Hyperparams,
    pub methods: Vec<MethodKind>,
    pub alpha: f32,
    pub beta: f32,
    pub epsilon: f32,
    pub eval_count: usize,
    pub eval_selection: EvalSelection,
    pub transform: Transform,
    pub mask_restricted: bool,
    pub montage: bool,
    pub boxplots: bool,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale, seed: u64, out_dir: PathBuf) -> ExperimentConfig {
        let (image_shape, split_sizes, block_filters, max_epochs, runs) = match scale {
            Scale::Paper => ((140, 192), (42_000, 6_000, 12_000), vec![32, 64, 128, 256], 125, 3),
            Scale::Desk => ((64, 64), (2_000, 500, 1_000), vec![32, 64], 60, 1),
        };
        ExperimentConfig {
            seed,
            scale,
            out_dir,
            datasets: vec![DatasetConfig {
                name: "perlin".into(),
                background: BackgroundSource::Perlin { grid: (5, 8) },
                image_shape,
                split_sizes,
                lesion: LesionSpec::default(),
                master_seed: seed,
            }],
            block_filters,
            dense_units: 128,
            hp: Hyperparams { max_epochs, runs_per_dataset: runs, ..Hyperparams::default() },
            methods: MethodKind::ALL.to_vec(),
            alpha: 2.0,
            beta: 1.0,
            epsilon: 1e-7,
            eval_count: 200,
            eval_selection: EvalSelection::First,
            transform: Transform::Abs,
            mask_restricted: false,
            montage: true,
            boxplots: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset condition required".into()));
        }
        for d in &self.datasets {
            d.validate()?;
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list must be nonempty".into()));
        }
        if self.eval_count == 0 {
            return Err(Error::Config("eval_count must be positive".into()));
        }
        self.hp.validate()?;
        let spec = crate::saliency::MethodSpec {
            kind: MethodKind::LrpAlphaBeta,
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            input_bounds: (0.0, 1.0),
        };
        spec.validate()?;
        Ok(())
    }

    pub fn method_spec(&self, kind: MethodKind) -> crate::saliency::MethodSpec {
        crate::saliency::MethodSpec {
            kind,
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            input_bounds: (0.0, 1.0),
        }
    }
}

/// Partial settings from a config file or CLI flags; later layers win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub out: Option<PathBuf>,
    pub background: Option<BackgroundChoice>,
    pub archive: Option<PathBuf>,
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    pub train_size: Option<usize>,
    pub val_size: Option<usize>,
    pub holdout_size: Option<usize>,
    pub perlin_rows: Option<usize>,
    pub perlin_cols: Option<usize>,
    pub lesion_diameter: Option<f64>,
    pub lesion_intensity: Option<f64>,
    pub lesion_count: Option<usize>,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub batch_size: Option<usize>,
    pub eval_batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub loss_stop: Option<f64>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
    pub runs: Option<usize>,
    pub blocks: Option<Vec<usize>>,
    pub dense_units: Option<usize>,
    pub methods: Option<Vec<MethodKind>>,
    pub eval_count: Option<usize>,
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub epsilon: Option<f32>,
    pub selection: Option<EvalSelection>,
    pub transform: Option<Transform>,
    pub mask_restricted: Option<bool>,
    pub montage: Option<bool>,
    pub boxplots: Option<bool>,
}

impl Overrides {
    /// Later settings win field by field.
    pub fn merged_with(mut self, later: Overrides) -> Overrides {
        macro_rules! take {
            ($($f:ident),*) => { $( if later.$f.is_some() { self.$f = later.$f; } )* };
        }
        take!(
            seed, scale, out, background, archive, image_height, image_width, train_size,
            val_size, holdout_size, perlin_rows, perlin_cols, lesion_diameter, lesion_intensity,
            lesion_count, learning_rate, momentum, batch_size, eval_batch_size, max_epochs,
            loss_stop, patience, min_delta, runs, blocks, dense_units, methods, eval_count,
            alpha, beta, epsilon, selection, transform, mask_restricted, montage, boxplots
        );
        self
    }

    /// Flat key-value text with one section per stage. `#` starts a
    /// comment; empty values mean "unset".
    pub fn from_config_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let mut o = Overrides::default();
        let mut section = String::from("experiment");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                continue;
            }
            o.apply_key(&section, key, value).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(o)
    }

    fn apply_key(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value for {key}: '{v}'")))
        }
        match (section, key) {
            ("experiment", "seed") => self.seed = Some(num(key, value)?),
            ("experiment", "scale") => self.scale = Some(Scale::parse(value)?),
            ("experiment", "out") => self.out = Some(PathBuf::from(value)),
            ("experiment", "methods") | ("explain", "methods") => {
                self.methods = Some(parse_methods(value)?)
            }
            ("experiment", "transform") | ("evaluate", "transform") => {
                self.transform = Some(Transform::parse(value)?)
            }
            ("experiment", "eval_count") | ("explain", "eval_count") => {
                self.eval_count = Some(num(key, value)?)
            }
            ("generate", "background") => {
                self.background = Some(BackgroundChoice::parse(value)?)
            }
            ("generate", "archive") => self.archive = Some(PathBuf::from(value)),
            ("generate", "image_height") => self.image_height = Some(num(key, value)?),
            ("generate", "image_width") => self.image_width = Some(num(key, value)?),
            ("generate", "train") => self.train_size = Some(num(key, value)?),
            ("generate", "val") => self.val_size = Some(num(key, value)?),
            ("generate", "holdout") => self.holdout_size = Some(num(key, value)?),
            ("generate", "perlin_rows") => self.perlin_rows = Some(num(key, value)?),
            ("generate", "perlin_cols") => self.perlin_cols = Some(num(key, value)?),
            ("generate", "lesion_diameter") => self.lesion_diameter = Some(num(key, value)?),
            ("generate", "lesion_intensity") => self.lesion_intensity = Some(num(key, value)?),
            ("generate", "lesion_count") => self.lesion_count = Some(num(key, value)?),
            ("train", "learning_rate") => self.learning_rate = Some(num(key, value)?),
            ("train", "momentum") => self.momentum = Some(num(key, value)?),
            ("train", "batch_size") => self.batch_size = Some(num(key, value)?),
            ("train", "eval_batch_size") => self.eval_batch_size = Some(num(key, value)?),
            ("train", "max_epochs") => self.max_epochs = Some(num(key, value)?),
            ("train", "loss_stop") => self.loss_stop = Some(num(key, value)?),
            ("train", "patience") => self.patience = Some(num(key, value)?),
            ("train", "min_delta") => self.min_delta = Some(num(key, value)?),
            ("train", "runs") => self.runs = Some(num(key, value)?),
            ("train", "blocks") => self.blocks = Some(parse_blocks(value)?),
            ("train", "dense_units") => self.dense_units = Some(num(key, value)?),
            ("explain", "alpha") => self.alpha = Some(num(key, value)?),
            ("explain", "beta") => self.beta = Some(num(key, value)?),
            ("explain", "epsilon") => self.epsilon = Some(num(key, value)?),
            ("explain", "selection") => self.selection = Some(EvalSelection::parse(value)?),
            ("evaluate", "mask_restricted") => self.mask_restricted = Some(num(key, value)?),
            ("report", "montage") => self.montage = Some(num(key, value)?),
            ("report", "boxplots") => self.boxplots = Some(num(key, value)?),
            _ => {
                return Err(Error::Config(format!("unknown key '{key}' in section [{section}]")))
            }
        }
        Ok(())
    }
}

pub fn parse_methods(value: &str) -> Result<Vec<MethodKind>> {
    if value.trim() == "all" {
        return Ok(MethodKind::ALL.to_vec());
    }
    value.split(',').map(|m| MethodKind::parse(m.trim())).collect()
}

pub fn parse_blocks(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|b| {
            b.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad filter count '{b}' in blocks")))
        })
        .collect()
}

/// Build the final config: scale preset, then overrides.
pub fn resolve_config(o: &Overrides) -> Result<ExperimentConfig> {
    let scale = o.scale.unwrap_or(Scale::Desk);
    let seed = o.seed.unwrap_or(1);
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut cfg = ExperimentConfig::preset(scale, seed, out);

    let base = &mut cfg.datasets[0];
    if let Some(h) = o.image_height {
        base.image_shape.0 = h;
    }
    if let Some(w) = o.image_width {
        base.image_shape.1 = w;
    }
    if let Some(t) = o.train_size {
        base.split_sizes.0 = t;
    }
    if let Some(v) = o.val_size {
        base.split_sizes.1 = v;
    }
    if let Some(h) = o.holdout_size {
        base.split_sizes.2 = h;
    }
    if let Some(r) = o.perlin_rows {
        if let BackgroundSource::Perlin { grid } = &mut base.background {
            grid.0 = r;
        }
    }
    if let Some(c) = o.perlin_cols {
        if let BackgroundSource::Perlin { grid } = &mut base.background {
            grid.1 = c;
        }
    }
    if let Some(d) = o.lesion_diameter {
        base.lesion.diameter = d;
    }
    if let Some(i) = o.lesion_intensity {
        base.lesion.intensity = i;
    }
    if let Some(c) = o.lesion_count {
        base.lesion.count = c;
    }

    let choice = o.background.unwrap_or(BackgroundChoice::Perlin);
    match choice {
        BackgroundChoice::Perlin => {}
        BackgroundChoice::File | BackgroundChoice::Both => {
            let archive = o.archive.clone().ok_or_else(|| {
                Error::Config("file-backed backgrounds need an archive directory".into())
            })?;
            let file_ds = DatasetConfig {
                name: "file".into(),
                background: BackgroundSource::File { archive },
                ..cfg.datasets[0].clone()
            };
            if choice == BackgroundChoice::File {
                cfg.datasets[0] = file_ds;
            } else {
                cfg.datasets.push(file_ds);
            }
        }
    }

    if let Some(lr) = o.learning_rate {
        cfg.hp.learning_rate = lr;
    }
    if let Some(m) = o.momentum {
        cfg.hp.momentum = m;
    }
    if let Some(b) = o.batch_size {
        cfg.hp.batch_size_train = b;
    }
    if let Some(b) = o.eval_batch_size {
        cfg.hp.batch_size_eval = b;
    }
    if let Some(e) = o.max_epochs {
        cfg.hp.max_epochs = e;
    }
    if let Some(l) = o.loss_stop {
        cfg.hp.loss_stop_threshold = l;
    }
    if let Some(p) = o.patience {
        cfg.hp.patience = p;
    }
    if let Some(d) = o.min_delta {
        cfg.hp.min_delta = d;
    }
    if let Some(r) = o.runs {
        cfg.hp.runs_per_dataset = r;
    }
    if let Some(b) = &o.blocks {
        cfg.block_filters = b.clone();
    }
    if let Some(d) = o.dense_units {
        cfg.dense_units = d;
    }
    if let Some(m) = &o.methods {
        cfg.methods = m.clone();
    }
    if let Some(e) = o.eval_count {
        cfg.eval_count = e;
    }
    if let Some(a) = o.alpha {
        cfg.alpha = a;
    }
    if let Some(b) = o.beta {
        cfg.beta = b;
    }
    if let Some(e) = o.epsilon {
        cfg.epsilon = e;
    }
    if let Some(s) = o.selection {
        cfg.eval_selection = s;
    }
    if let Some(t) = o.transform {
        cfg.transform = t;
    }
    if let Some(m) = o.mask_restricted {
        cfg.mask_restricted = m;
    }
    if let Some(m) = o.montage {
        cfg.montage = m;
    }
    if let Some(b) = o.boxplots {
        cfg.boxplots = b;
    }

    cfg.validate()?;
    Ok(cfg)
}
