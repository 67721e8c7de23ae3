use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{EyePolicy, SplitSpec};
use crate::error::{FlameError, Result};
use crate::loss::LossKind;
use crate::model::{ModelSpec, Preset, Variant, RESOLUTIONS};
use crate::trainer::{Precision, TrainConfig};

/// Which records `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Train,
    Val,
    Test,
}

impl FromStr for EvalSplit {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(EvalSplit::All),
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            other => Err(FlameError::Config(format!(
                "unknown split `{other}` (expected all, train, val or test)"
            ))),
        }
    }
}

impl std::fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalSplit::All => "all",
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
        })
    }
}

/// Everything a run needs: training, model, split, and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub resolutions: Vec<usize>,
    pub eval_split: EvalSplit,
}

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

pub const PATH_KEYS: &[Key] = &[
    key("data", "dataset root (manifest.tsv + landmarks/)"),
    key("out", "output directory"),
];

pub const MODEL_KEYS: &[Key] = &[
    key("variant", "FLAME, F_AO, F_AF, F_B or DENSE_FUSION [FLAME]"),
    key("preset", "architecture scale: paper or tiny [paper]"),
    key(
        "resolution",
        "eye patch side in pixels: 120, 60 or 30 [120]",
    ),
    key("channels", "backbone module widths, comma separated"),
    key(
        "blocks_per_module",
        "residual blocks per backbone module [2]",
    ),
    key(
        "head_widths",
        "hidden widths of the regression head, comma separated",
    ),
    key("dropout", "dropout after each head layer [0.2]"),
    key("heatmap_scale", "multiplier on the landmark heatmap [1]"),
    key("hybrid_width", "output width of the aggregation block"),
    key(
        "mmtm_z_activation",
        "ReLU on the joint squeeze vector [true]",
    ),
    key("mmtm_zero_init", "start excitation heads at zero [false]"),
    key("zero_output_init", "start the output layer at zero [true]"),
    key(
        "coord_input_width",
        "first coordinate-branch width (DENSE_FUSION)",
    ),
    key(
        "coord_widths",
        "coordinate-branch module widths, comma separated",
    ),
    key(
        "coord_layers_per_module",
        "dense layers per coordinate module [4]",
    ),
    key("init_seed", "seed for weight initialisation [0]"),
];

pub const TRAIN_KEYS: &[Key] = &[
    key("epochs", "training epochs [200]"),
    key("batch_size", "minibatch size, at least 2 [8]"),
    key("lr", "initial learning rate [1e-4]"),
    key(
        "lr_milestones",
        "epochs after which the rate drops, comma separated [85,120,175]",
    ),
    key("lr_factor", "rate multiplier at each milestone [0.5]"),
    key("beta1", "Adam beta1 [0.9]"),
    key("beta2", "Adam beta2 [0.999]"),
    key("eps", "Adam epsilon [1e-8]"),
    key("seed", "run seed; falls back to FLAME_SEED, then 0"),
    key("loss", "vector or angular [vector]"),
    key(
        "eval_eye",
        "eyes scored at evaluation: both, left, right, random [both]",
    ),
    key("precision", "f32 or f64 [f32]"),
    key("patch_size", "eye patch side cut from the face crop [120]"),
    key("deterministic", "serial batch preparation [true]"),
    key(
        "stop_below_train_deg",
        "stop once training error is below this (degrees)",
    ),
];

pub const SPLIT_KEYS: &[Key] = &[
    key("split_ratios", "train,val,test subject proportions [8,1,1]"),
    key("split_seed", "subject shuffle seed; defaults to seed"),
];

pub const ABLATE_KEYS: &[Key] = &[key(
    "variants",
    "variants to compare, comma separated [F_B,F_AF,F_AO,FLAME]",
)];

pub const RESOLUTION_KEYS: &[Key] = &[key(
    "resolutions",
    "resolutions to compare, comma separated [120,60,30]",
)];

pub const EVAL_KEYS: &[Key] = &[
    key("checkpoint", "checkpoint file to evaluate"),
    key(
        "eval_split",
        "records to score: all, train, val or test [all]",
    ),
];

/// Run keys `eval` honours besides the eval keys themselves.
pub const EVAL_RUN_KEYS: &[Key] = &[
    key(
        "seed",
        "seed for random eye choice; falls back to FLAME_SEED, then 0",
    ),
    key("eval_eye", "eyes scored: both, left, right, random [both]"),
    key("patch_size", "eye patch side cut from the face crop [120]"),
];

pub fn all_keys() -> impl Iterator<Item = &'static Key> {
    [
        PATH_KEYS,
        MODEL_KEYS,
        TRAIN_KEYS,
        SPLIT_KEYS,
        ABLATE_KEYS,
        RESOLUTION_KEYS,
        EVAL_KEYS,
    ]
    .into_iter()
    .flatten()
}

pub fn is_known_key(name: &str) -> bool {
    all_keys().any(|k| k.name == name)
}

/// Reads a flat `key = value` file. `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| FlameError::io(path, e))?;
    parse_config_text(&text, path)
}

pub fn parse_config_text(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let err = |msg: String| FlameError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !is_known_key(k) {
            return Err(err(format!("unknown config key `{k}`")));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("config key `{k}` given twice")));
        }
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| FlameError::Config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Builds a config from merged settings (`later wins` is resolved by the
    /// caller). The architecture keys are applied first so that `preset` and
    /// `variant` pick defaults the other keys can then override.
    pub fn from_settings(
        settings: &BTreeMap<String, String>,
        env_seed: Option<&str>,
    ) -> Result<Self> {
        for k in settings.keys() {
            if !is_known_key(k) {
                return Err(FlameError::Config(format!("unknown config key `{k}`")));
            }
        }
        let get = |k: &str| settings.get(k).map(String::as_str);
        let variant = get("variant").map_or(Ok(Variant::Flame), |v| parse("variant", v))?;
        let preset = get("preset").map_or(Ok(Preset::Paper), |v| parse("preset", v))?;
        let resolution = get("resolution").map_or(Ok(120), |v| parse("resolution", v))?;
        let mut cfg = RunConfig {
            train: TrainConfig::new(ModelSpec::new(variant, preset, resolution)),
            split: SplitSpec::new(0),
            data: None,
            out: None,
            checkpoint: None,
            variants: Variant::ABLATION.to_vec(),
            resolutions: RESOLUTIONS.to_vec(),
            eval_split: EvalSplit::All,
        };
        let seed = match (get("seed"), env_seed) {
            (Some(v), _) => parse("seed", v)?,
            (None, Some(v)) => parse("FLAME_SEED", v)?,
            (None, None) => 0,
        };
        cfg.train.seed = seed;
        cfg.split.seed = seed;
        for (k, v) in settings {
            if !matches!(k.as_str(), "variant" | "preset" | "resolution" | "seed") {
                cfg.apply(k, v)?;
            }
        }
        if get("hybrid_width").is_none() {
            if let Some(&last) = cfg.train.model.channels.last() {
                cfg.train.model.hybrid_width = last;
            }
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "channels" => m.channels = parse_list(key, v)?,
            "blocks_per_module" => m.blocks_per_module = parse(key, v)?,
            "head_widths" => m.head_widths = parse_list(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "heatmap_scale" => m.heatmap_scale = parse(key, v)?,
            "hybrid_width" => m.hybrid_width = parse(key, v)?,
            "mmtm_z_activation" => m.mmtm_z_activation = parse(key, v)?,
            "mmtm_zero_init" => m.mmtm_zero_init = parse(key, v)?,
            "zero_output_init" => m.zero_output_init = parse(key, v)?,
            "coord_input_width" => m.coord_input_width = parse(key, v)?,
            "coord_widths" => m.coord_widths = parse_list(key, v)?,
            "coord_layers_per_module" => m.coord_layers_per_module = parse(key, v)?,
            "init_seed" => m.init_seed = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "lr_milestones" => t.lr_milestones = parse_list(key, v)?,
            "lr_factor" => t.lr_factor = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "eps" => t.eps = parse(key, v)?,
            "loss" => t.loss = parse::<LossKind>(key, v)?,
            "eval_eye" => t.eval_eye = parse::<EyePolicy>(key, v)?,
            "precision" => t.precision = parse::<Precision>(key, v)?,
            "patch_size" => t.patch_size = parse(key, v)?,
            "deterministic" => t.deterministic = parse(key, v)?,
            "stop_below_train_deg" => {
                t.stop_below_train_deg = match v.trim() {
                    "" | "none" => None,
                    s => Some(parse(key, s)?),
                }
            }
            "split_ratios" => {
                let r: Vec<f64> = parse_list(key, v)?;
                self.split.ratios = r.try_into().map_err(|r: Vec<f64>| {
                    FlameError::Config(format!("split_ratios needs 3 values, got {}", r.len()))
                })?;
            }
            "split_seed" => self.split.seed = parse(key, v)?,
            "variants" => self.variants = parse_list(key, v)?,
            "resolutions" => self.resolutions = parse_list(key, v)?,
            "eval_split" => self.eval_split = parse(key, v)?,
            other => return Err(FlameError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The resolved configuration in config-file form; reloading it gives
    /// back the same run.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        if let Some(c) = &self.checkpoint {
            put("checkpoint", c.display().to_string());
        }
        put("variant", m.variant.to_string());
        put("preset", m.preset.to_string());
        put("resolution", m.resolution.to_string());
        put("channels", join(&m.channels));
        put("blocks_per_module", m.blocks_per_module.to_string());
        put("head_widths", join(&m.head_widths));
        put("dropout", m.dropout.to_string());
        put("heatmap_scale", m.heatmap_scale.to_string());
        put("hybrid_width", m.hybrid_width.to_string());
        put("mmtm_z_activation", m.mmtm_z_activation.to_string());
        put("mmtm_zero_init", m.mmtm_zero_init.to_string());
        put("zero_output_init", m.zero_output_init.to_string());
        put("coord_input_width", m.coord_input_width.to_string());
        put("coord_widths", join(&m.coord_widths));
        put(
            "coord_layers_per_module",
            m.coord_layers_per_module.to_string(),
        );
        put("init_seed", m.init_seed.to_string());
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("lr", t.lr.to_string());
        put("lr_milestones", join(&t.lr_milestones));
        put("lr_factor", t.lr_factor.to_string());
        put("beta1", t.beta1.to_string());
        put("beta2", t.beta2.to_string());
        put("eps", t.eps.to_string());
        put("seed", t.seed.to_string());
        put("loss", t.loss.to_string());
        put("eval_eye", t.eval_eye.to_string());
        put("precision", t.precision.to_string());
        put("patch_size", t.patch_size.to_string());
        put("deterministic", t.deterministic.to_string());
        put(
            "stop_below_train_deg",
            t.stop_below_train_deg
                .map_or("none".into(), |v| v.to_string()),
        );
        put("split_ratios", join(&self.split.ratios));
        put("split_seed", self.split.seed.to_string());
        put("variants", join(&self.variants));
        put("resolutions", join(&self.resolutions));
        put("eval_split", self.eval_split.to_string());
        s
    }
}
