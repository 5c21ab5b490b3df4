//! Run configuration: a JSON document naming the data, model and training setup.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use sae_core::active::ActiveSchedule;
use sae_core::data::{apply_decomposition, load_csv, load_idx, split_labeled, Dataset, Decomposition};
use sae_core::mds::DistanceSpec;
use sae_core::sae::{MlpSpec, TrainConfig};
use sae_core::svm::SvmParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, ConfigIssue, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// IDX image/label file pairs.
    #[default]
    Idx,
    /// Numeric CSV, optionally with an integer label in the last column.
    Csv,
}

/// How raw labels fold into superclasses. With neither field set every distinct
/// raw label of the training set becomes its own class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DecompositionConfig {
    /// `mnist-abc` or `fashion-season`.
    pub preset: Option<String>,
    /// `groups[k]` lists the raw labels of superclass `k`.
    pub groups: Option<Vec<Vec<u32>>>,
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub format: DataFormat,
    /// IDX image file or CSV file of the training set.
    pub train: PathBuf,
    /// IDX label file of the training set.
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    /// Whether CSV files carry a label column.
    #[serde(default = "yes")]
    pub csv_labels: bool,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    /// Size of the initial labeled set; all samples with a class when absent.
    #[serde(default)]
    pub labeled: Option<usize>,
}

fn yes() -> bool {
    true
}

/// Prescribed class distances: a full matrix, or `inter` between every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub inter: f64,
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig { inter: 1.0, matrix: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: MlpSpec,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub svm: SvmParams,
    #[serde(default)]
    pub active: ActiveSchedule,
    /// Replay label file (`id,label`) for guided experiments.
    #[serde(default)]
    pub oracle: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Static files served at `/` by the labeling service.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Training and test data after decomposition and the initial label split.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub class_names: Vec<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config file, applies `path=value` overrides and resolves relative
    /// paths against the file's directory. Does not validate.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let mut doc: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(doc)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        for p in [&mut self.data.train_labels, &mut self.data.test, &mut self.data.test_labels, &mut self.oracle, &mut self.ui_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Every problem found, each with the path of the offending field.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut issue = |path: &str, message: String| out.push(ConfigIssue { path: path.into(), message });
        let exists = |p: &Path| p.exists();

        let d = &self.data;
        if !exists(&d.train) {
            issue("data.train", format!("{} does not exist", d.train.display()));
        }
        let idx = d.format == DataFormat::Idx;
        match (&d.train_labels, idx) {
            (None, true) => issue("data.train_labels", "required for IDX data".into()),
            (Some(p), _) if !exists(p) => issue("data.train_labels", format!("{} does not exist", p.display())),
            _ => {}
        }
        if let Some(p) = &d.test {
            if !exists(p) {
                issue("data.test", format!("{} does not exist", p.display()));
            }
            match (&d.test_labels, idx) {
                (None, true) => issue("data.test_labels", "required for IDX test data".into()),
                (Some(p), _) if !exists(p) => issue("data.test_labels", format!("{} does not exist", p.display())),
                _ => {}
            }
        }
        let dec = &d.decomposition;
        if dec.preset.is_some() && dec.groups.is_some() {
            issue("data.decomposition", "set either preset or groups, not both".into());
        }
        if let Some(p) = &dec.preset {
            if preset(p).is_none() {
                issue("data.decomposition.preset", format!("unknown preset '{p}' (mnist-abc, fashion-season)"));
            }
        }
        if let Some(g) = &dec.groups {
            if let Err(e) = Decomposition::from_groups("custom", g) {
                issue("data.decomposition.groups", e.to_string());
            }
        }
        let k = self.declared_classes();
        if let (Some(names), Some(k)) = (&dec.class_names, k) {
            if names.len() != k {
                issue("data.decomposition.class_names", format!("{} names for {k} classes", names.len()));
            }
        }
        if d.labeled == Some(0) {
            issue("data.labeled", "must be positive when set".into());
        }

        if let Err(e) = self.model.validate() {
            issue("model", e.to_string());
        }

        let dist = &self.distance;
        match &dist.matrix {
            Some(m) => {
                let n = m.len();
                if m.iter().any(|r| r.len() != n) {
                    issue("distance.matrix", "must be square".into());
                } else if let Err(e) = distance_from_rows(m) {
                    issue("distance.matrix", e.to_string());
                } else if let Some(k) = k.filter(|&k| k != n) {
                    issue("distance.matrix", format!("{n}×{n} matrix for {k} classes"));
                }
            }
            None if !(dist.inter.is_finite() && dist.inter > 0.0) => {
                issue("distance.inter", "must be a positive finite number".into());
            }
            None => {}
        }

        let t = &self.train;
        if !(0.0..=1.0).contains(&t.gamma) {
            issue("train.gamma", format!("{} is outside [0, 1]", t.gamma));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            issue("train.learning_rate", "must be positive".into());
        }
        if t.batch_size == 0 {
            issue("train.batch_size", "must be positive".into());
        }
        if t.mds.max_iter == 0 {
            issue("train.mds.max_iter", "must be positive".into());
        }
        if !(self.svm.lambda.is_finite() && self.svm.lambda > 0.0) {
            issue("svm.lambda", "must be positive".into());
        }
        if self.svm.epochs == 0 {
            issue("svm.epochs", "must be positive".into());
        }
        if self.active.initial_labels == 0 {
            issue("active.initial_labels", "must be positive".into());
        }
        if let Some(p) = &self.oracle {
            if !exists(p) {
                issue("oracle", format!("{} does not exist", p.display()));
            }
        }
        if let Some(p) = &self.ui_dir {
            if !p.is_dir() {
                issue("ui_dir", format!("{} is not a directory", p.display()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(issues))
        }
    }

    /// Class count fixed by the decomposition, when it does not depend on the data.
    fn declared_classes(&self) -> Option<usize> {
        let dec = &self.data.decomposition;
        match (&dec.preset, &dec.groups) {
            (Some(p), None) => preset(p).map(|d| d.n_groups()),
            (None, Some(g)) => Some(g.len()),
            _ => None,
        }
    }

    fn load_split(&self, main: &Path, labels: Option<&PathBuf>) -> Result<Dataset> {
        Ok(match self.data.format {
            DataFormat::Idx => {
                let labels = labels.ok_or_else(|| CliError::Usage("IDX data needs a label file".into()))?;
                load_idx(main, labels)?
            }
            DataFormat::Csv => load_csv(main, self.data.csv_labels)?,
        })
    }

    fn decomposition(&self, train: &Dataset) -> Result<Decomposition> {
        let dec = &self.data.decomposition;
        if let Some(p) = &dec.preset {
            return preset(p).ok_or_else(|| CliError::Usage(format!("unknown preset '{p}'")));
        }
        if let Some(g) = &dec.groups {
            return Ok(Decomposition::from_groups("custom", g)?);
        }
        let alphabet: BTreeSet<u32> = (0..train.len()).filter_map(|i| train.raw_label(i)).collect();
        Ok(Decomposition::identity(&alphabet.into_iter().collect::<Vec<_>>()))
    }

    /// Loads train and test data, applies the decomposition and labels the initial set.
    pub fn load_data(&self) -> Result<LoadedData> {
        self.validate()?;
        let raw_train = self.load_split(&self.data.train, self.data.train_labels.as_ref())?;
        let dec = self.decomposition(&raw_train)?;
        let train = apply_decomposition(&raw_train, &dec)?;
        let train = match self.data.labeled {
            Some(n) => split_labeled(&train, n, self.train.seed)?,
            None => {
                let all: BTreeSet<usize> = (0..train.len()).filter(|&i| train.superclass(i).is_some()).collect();
                let mut t = train;
                t.set_labeled(&all)?;
                t
            }
        };
        let test = match &self.data.test {
            Some(p) => Some(apply_decomposition(&self.load_split(p, self.data.test_labels.as_ref())?, &dec)?),
            None => None,
        };
        if train.dim() != self.model.input_dim() {
            return Err(CliError::Config(vec![ConfigIssue {
                path: "model.layer_dims".into(),
                message: format!("input size {} but the data has {} features", self.model.input_dim(), train.dim()),
            }]));
        }
        let k = train.n_classes();
        let class_names = match &self.data.decomposition.class_names {
            Some(names) if names.len() == k => names.clone(),
            _ => (0..k).map(|c| c.to_string()).collect(),
        };
        Ok(LoadedData { train, test, class_names })
    }

    pub fn distance_spec(&self, k: usize) -> Result<DistanceSpec> {
        Ok(match &self.distance.matrix {
            Some(rows) => {
                let spec = distance_from_rows(rows)?;
                if spec.k() != k {
                    return Err(CliError::Config(vec![ConfigIssue {
                        path: "distance.matrix".into(),
                        message: format!("{}×{} matrix for {k} classes", spec.k(), spec.k()),
                    }]));
                }
                spec
            }
            None => DistanceSpec::uniform(k, self.distance.inter)?,
        })
    }
}

fn preset(name: &str) -> Option<Decomposition> {
    match name {
        "mnist-abc" => Some(Decomposition::mnist_abc()),
        "fashion-season" => Some(Decomposition::fashion_season()),
        _ => None,
    }
}

fn distance_from_rows(rows: &[Vec<f64>]) -> sae_core::Result<DistanceSpec> {
    let n = rows.len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = ndarray::Array2::from_shape_vec((n, n), flat).map_err(|e| sae_core::Error::Shape(e.to_string()))?;
    DistanceSpec::new(m)
}

/// Applies one `dotted.path=value` override; the value is read as JSON, or as a
/// string when it does not parse.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{spec}' is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("override '{spec}' has an empty path segment")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override '{spec}': '{}' is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment")
}
