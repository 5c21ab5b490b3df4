//! Single-file model checkpoints.
//!
//! Layout: the magic line `SAE1`, a text manifest of `key=value` lines ended by
//! an empty line, the parameters as little-endian `f32` in declaration order
//! (encoder layers then decoder layers, each `W` row-major then `b`), and an
//! optional SVM section of little-endian `f64`: `λ`, the `K × m` centers
//! row-major, then `w` and the bias of every pair in lexicographic order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::sae::{init_model, MlpSpec, SaeModel};
use crate::svm::{PairModel, SvmModel};

pub const MAGIC: &str = "SAE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SaeModel<f32>,
    /// Completed training epochs.
    pub epoch: usize,
    pub seed: u64,
    /// Run configuration the model was trained with.
    pub config: serde_json::Value,
    pub svm: Option<SvmModel>,
}

fn activation_from(name: &str) -> Result<Activation> {
    match name {
        "sigmoid" => Ok(Activation::Sigmoid),
        "identity" => Ok(Activation::Identity),
        other => Err(Error::Checkpoint(format!("unknown output activation {other:?}"))),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = &self.model.spec;
        let dims: Vec<String> = spec.layer_dims.iter().map(usize::to_string).collect();
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "layer_dims={}", dims.join(","))?;
        writeln!(out, "output={}", spec.output.name())?;
        writeln!(out, "epoch={}", self.epoch)?;
        writeln!(out, "seed={}", self.seed)?;
        writeln!(out, "config={}", serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?)?;
        writeln!(out, "params={}", self.model.param_count())?;
        match &self.svm {
            Some(svm) => {
                writeln!(out, "svm_classes={}", svm.n_classes)?;
                writeln!(out, "svm_dim={}", svm.latent_dim())?;
            }
            None => writeln!(out, "svm_classes=0")?,
        }
        writeln!(out)?;
        for s in self.model.param_slices() {
            for &v in s {
                out.write_f32::<LittleEndian>(v)?;
            }
        }
        if let Some(svm) = &self.svm {
            out.write_f64::<LittleEndian>(svm.lambda)?;
            for &v in svm.centers.iter() {
                out.write_f64::<LittleEndian>(v)?;
            }
            for p in &svm.pairs {
                for &v in p.w.iter() {
                    out.write_f64::<LittleEndian>(v)?;
                }
                out.write_f64::<LittleEndian>(p.bias)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut line = String::new();
        cur.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Format("not an SAE1 checkpoint".into()));
        }
        let mut manifest = BTreeMap::new();
        loop {
            line.clear();
            if cur.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("manifest is not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l.is_empty() {
                break;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad manifest line {l:?}")))?;
            manifest.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| manifest.get(k).ok_or_else(|| Error::Checkpoint(format!("manifest lacks {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Checkpoint(format!("bad value for {k}"))) };

        let layer_dims = get("layer_dims")?
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| Error::Checkpoint("bad layer_dims".into())))
            .collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::new(layer_dims, activation_from(get("output")?)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let epoch = num("epoch")? as usize;
        let seed = num("seed")?;
        let config = serde_json::from_str(get("config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;

        let mut model: SaeModel<f32> = init_model(&spec, 0)?;
        if num("params")? as usize != model.param_count() {
            return Err(Error::Checkpoint("parameter count does not match layer_dims".into()));
        }
        for s in model.param_slices_mut() {
            cur.read_f32_into::<LittleEndian>(s)?;
        }
        if !model.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }

        let k = num("svm_classes")? as usize;
        let svm = if k > 0 {
            let m = num("svm_dim")? as usize;
            let lambda = cur.read_f64::<LittleEndian>()?;
            let mut centers = Array2::<f64>::zeros((k, m));
            cur.read_f64_into::<LittleEndian>(centers.as_slice_mut().expect("standard layout"))?;
            let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
            for a in 0..k {
                for b in (a + 1)..k {
                    let mut w = Array1::<f64>::zeros(m);
                    cur.read_f64_into::<LittleEndian>(w.as_slice_mut().expect("standard layout"))?;
                    let bias = cur.read_f64::<LittleEndian>()?;
                    pairs.push(PairModel { a, b, w, bias });
                }
            }
            Some(SvmModel { n_classes: k, pairs, centers, lambda })
        } else {
            None
        };
        let mut rest = Vec::new();
        cur.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { model, epoch, seed, config, svm })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
