#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::array;
use sae_cli::RunConfig;
use sae_core::active::ReplayOracle;
use sae_core::data::{write_csv, Dataset};
use sae_core::synth::{gaussian_blobs, HiddenStructure};
use serde_json::{json, Value};
use tempfile::TempDir;

/// A scratch directory holding `train.csv`, `test.csv`, `oracle.csv` and `config.json`.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("config.json")
    }

    pub fn config(&self, overrides: &[&str]) -> RunConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(self.config_path(), &o).unwrap()
    }

    pub fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn write_all(train: &Dataset, test: &Dataset, config: Value) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_csv(train, p.join("train.csv")).unwrap();
    write_csv(test, p.join("test.csv")).unwrap();
    ReplayOracle::from_dataset(train).write_csv(p.join("oracle.csv")).unwrap();
    std::fs::write(p.join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
    Workspace { dir }
}

fn base_config(layer_dims: Value, inter: f64, epochs: usize) -> Value {
    json!({
        "data": {"format": "csv", "train": "train.csv", "test": "test.csv", "decomposition": {"class_names": ["a", "b", "c"]}},
        "model": {"layer_dims": layer_dims, "output": "identity"},
        "distance": {"inter": inter},
        "train": {"gamma": 0.5, "learning_rate": 0.01, "batch_size": 16, "epochs": epochs, "seed": 3, "optimizer": "adam"},
        "svm": {"lambda": 0.001, "epochs": 50, "seed": 0},
        "active": {"initial_labels": 12, "k": 6, "rounds": 2, "initial_epochs": 5, "round_epochs": 3},
        "oracle": "oracle.csv",
        "output_dir": "out"
    })
}

/// Three well separated 4-D blobs, every training sample labeled.
pub fn blobs(epochs: usize) -> Workspace {
    let centers = array![[4.0, 0.0, 0.0, 1.0], [0.0, 4.0, 0.0, -1.0], [0.0, 0.0, 4.0, 0.0]];
    let train = gaussian_blobs(&centers, 30, 0.3, 1).unwrap();
    let test = gaussian_blobs(&centers, 20, 0.3, 2).unwrap();
    write_all(&train, &test, base_config(json!([4, 12, 2]), 5.0, epochs))
}

/// Two classes separated only along a low-variance direction.
pub fn hidden(epochs: usize) -> Workspace {
    let (ds, _) = HiddenStructure { n: 1000, seed: 5, ..Default::default() }.generate().unwrap();
    let train = ds.subset(&(0..400).collect::<Vec<_>>());
    let test = ds.subset(&(400..1000).collect::<Vec<_>>());
    let mut cfg = base_config(json!([20, 16, 2]), 10.0, epochs);
    cfg["data"]["decomposition"]["class_names"] = json!(["neg", "pos"]);
    write_all(&train, &test, cfg)
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

pub fn csv_header(text: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.headers().unwrap().iter().map(String::from).collect()
}
