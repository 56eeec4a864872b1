//! INI run configuration.
//!
//! ```ini
//! [run]
//! seed = 7
//! out_dir = out
//! n_bricks = 5
//!
//! [gen]
//! n_showers = 8
//!
//! [cluster]
//! threshold = 0.2
//! sweep = 0.05, 0.1, 0.2, 0.3
//! ```
//!
//! Every section is optional and every key defaults. Unknown sections and
//! keys are rejected. Relative paths are taken from the config file's
//! directory. Section seeds default to `[run] seed`; `EMUCASCADE_SEED`
//! overrides all of them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emucascade::recon::ReportConfig;
use emucascade::{ClusterParams, GenConfig, GraphConfig, ModelConfig, TrainConfig};
use ini::Ini;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "EMUCASCADE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: String,
    /// Directory of existing `brick_<id>.csv` / `truth_<id>.csv` files. Empty
    /// means the bricks are generated.
    pub data_dir: String,
    /// Trained model to score with. Empty means a model is trained.
    pub model: String,
    pub n_bricks: usize,
    /// Explicit split sizes; all zero selects the seeded 34/33/33 split.
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Worker threads, 0 for one per core. Results do not depend on it.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            data_dir: String::new(),
            model: String::new(),
            n_bricks: 5,
            n_train: 0,
            n_val: 0,
            n_test: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub gen: GenConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cluster: ClusterParams,
    /// Thresholds of the recovered-vs-threshold sweep.
    pub sweep: Vec<f64>,
    pub eval: ReportConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            gen: GenConfig::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cluster: ClusterParams::default(),
            sweep: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.7],
            eval: ReportConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

const SECTIONS: [&str; 7] = ["run", "gen", "graph", "model", "train", "cluster", "eval"];

/// Overwrites fields of `default` from string entries, parsing each value
/// by the JSON type of the field it replaces.
fn apply<T: Serialize + DeserializeOwned>(default: &T, section: &str, entries: &BTreeMap<String, String>) -> CliResult<T> {
    let mut value = serde_json::to_value(default).map_err(|e| CliError::runtime(e.to_string()))?;
    let obj = value.as_object_mut().expect("config sections are structs");
    for (key, raw) in entries {
        let bad = |what: &str| CliError::validation(format!("[{section}] {key} = {raw}: expected {what}"));
        let slot = obj
            .get_mut(key)
            .ok_or_else(|| CliError::validation(format!("unknown key `{key}` in [{section}]")))?;
        *slot = match slot {
            Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
            Value::Number(n) if n.is_f64() => {
                let v: f64 = raw.parse().map_err(|_| bad("a number"))?;
                serde_json::Number::from_f64(v)
                    .map(Value::Number)
                    .ok_or_else(|| bad("a finite number"))?
            }
            Value::Number(_) => Value::from(raw.parse::<u64>().map_err(|_| bad("a nonnegative integer"))?),
            Value::String(_) => Value::String(raw.clone()),
            _ => return Err(bad("a scalar")),
        };
    }
    serde_json::from_value(value).map_err(|e| CliError::validation(format!("[{section}]: {e}")))
}

fn parse_list(section: &str, key: &str, raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::validation(format!("[{section}] {key}: `{s}` is not a number")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_ini_str(text: &str, base_dir: &Path) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::validation(format!("config: {e}")))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in &ini {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::validation(format!("config key `{k}` outside any section")));
                }
                continue;
            };
            if !SECTIONS.contains(&name) {
                return Err(CliError::validation(format!("unknown section [{name}]")));
            }
            let entries = sections.entry(name.to_string()).or_default();
            for (k, v) in props.iter() {
                if entries.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(CliError::validation(format!("duplicate key `{k}` in [{name}]")));
                }
            }
        }
        let mut cfg = RunConfig::default();
        let empty = BTreeMap::new();
        let get = |s: &str| sections.get(s).unwrap_or(&empty);
        let has_seed = |s: &str| get(s).contains_key("seed");

        cfg.run = apply(&cfg.run, "run", get("run"))?;
        cfg.gen = apply(&cfg.gen, "gen", get("gen"))?;
        cfg.graph = apply(&cfg.graph, "graph", get("graph"))?;
        cfg.model = apply(&cfg.model, "model", get("model"))?;
        cfg.train = apply(&cfg.train, "train", get("train"))?;
        cfg.eval = apply(&cfg.eval, "eval", get("eval"))?;
        let mut cluster = get("cluster").clone();
        if let Some(raw) = cluster.remove("sweep") {
            cfg.sweep = parse_list("cluster", "sweep", &raw)?;
        }
        cfg.cluster = apply(&cfg.cluster, "cluster", &cluster)?;

        for (section, seed) in [
            ("gen", &mut cfg.gen.seed),
            ("model", &mut cfg.model.seed),
            ("train", &mut cfg.train.seed),
            ("eval", &mut cfg.eval.seed),
        ] {
            if !has_seed(section) {
                *seed = cfg.run.seed;
            }
        }
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::from_ini_str(&text, &base).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message)))
    }

    /// Loads `path`, or the defaults when no file is given, then applies
    /// the seed environment variable and validates.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.gen.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn apply_env_seed(&mut self, value: Option<&str>) -> CliResult<()> {
        if let Some(v) = value.map(str::trim).filter(|v| !v.is_empty()) {
            let seed = v
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV}=`{v}` is not a nonnegative integer")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.run.out_dir)
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        (!self.run.data_dir.is_empty()).then(|| self.resolve(&self.run.data_dir))
    }

    pub fn model_path(&self) -> Option<PathBuf> {
        (!self.run.model.is_empty()).then(|| self.resolve(&self.run.model))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.gen.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.cluster.validate()?;
        if self.graph.k == 0 {
            return Err(CliError::validation("[graph] k must be at least 1"));
        }
        if self.sweep.is_empty() || self.sweep.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::validation("[cluster] sweep must list thresholds in [0, 1]"));
        }
        if self.eval.cv_folds < 2 {
            return Err(CliError::validation("[eval] cv_folds must be at least 2"));
        }
        let r = &self.run;
        let counts = [r.n_train, r.n_val, r.n_test];
        if counts.iter().any(|&c| c > 0) && counts.contains(&0) {
            return Err(CliError::validation(
                "[run] n_train, n_val and n_test must all be set or all be 0",
            ));
        }
        if let Some(dir) = self.data_dir() {
            if !dir.is_dir() {
                return Err(CliError::validation(format!(
                    "[run] data_dir {} is not a directory",
                    dir.display()
                )));
            }
        } else {
            let needed = counts.iter().sum::<usize>().max(3);
            if r.n_bricks < needed {
                return Err(CliError::validation(format!("[run] n_bricks must be at least {needed}")));
            }
        }
        if let Some(m) = self.model_path() {
            if !m.is_file() {
                return Err(CliError::validation(format!("[run] model {} does not exist", m.display())));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the effective configuration; the basis of the
    /// manifest's config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
