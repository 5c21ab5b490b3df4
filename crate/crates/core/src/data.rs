//! Datasets, IDX/CSV ingestion, superclass decompositions and labeled splits.
//!
//! Features are stored row-major as an `n × dim` matrix so that a mini-batch is a
//! contiguous row selection; the network consumes its transpose (`dim × batch`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Pixel data scaled into `[0, 1]`.
    Image,
    /// Arbitrary real vectors, used as given.
    Vector,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub id: usize,
    pub features: ArrayView1<'a, f32>,
    pub raw_label: Option<u32>,
    pub superclass: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f32>,
    raw_labels: Vec<Option<u32>>,
    superclass: Vec<Option<usize>>,
    labeled: Vec<bool>,
    n_classes: usize,
    kind: FeatureKind,
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Builds a dataset with every sample unlabeled and no superclasses assigned.
    pub fn new(features: Array2<f32>, raw_labels: Vec<Option<u32>>, kind: FeatureKind) -> Result<Self> {
        let n = features.nrows();
        if raw_labels.len() != n {
            return Err(Error::Consistency(format!("{} feature rows but {} labels", n, raw_labels.len())));
        }
        if features.ncols() == 0 {
            return Err(Error::Format("dataset dimension must be positive".into()));
        }
        if kind == FeatureKind::Image && features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("image features must lie in [0, 1]".into()));
        }
        Ok(Dataset { features, raw_labels, superclass: vec![None; n], labeled: vec![false; n], n_classes: 0, kind, image_shape: None })
    }

    /// Dataset whose samples all carry a superclass directly (synthetic data).
    pub fn with_classes(features: Array2<f32>, classes: Vec<usize>, n_classes: usize, kind: FeatureKind) -> Result<Self> {
        if let Some(&c) = classes.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Consistency(format!("class {c} out of range for K={n_classes}")));
        }
        let raw = classes.iter().map(|&c| Some(c as u32)).collect();
        let mut ds = Dataset::new(features, raw, kind)?;
        ds.superclass = classes.into_iter().map(Some).collect();
        ds.n_classes = n_classes;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of superclasses `K`; zero until a decomposition has been applied.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn sample(&self, id: usize) -> Sample<'_> {
        Sample { id, features: self.features.row(id), raw_label: self.raw_labels[id], superclass: self.superclass[id] }
    }

    pub fn raw_label(&self, id: usize) -> Option<u32> {
        self.raw_labels[id]
    }

    pub fn superclass(&self, id: usize) -> Option<usize> {
        self.superclass[id]
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.labeled[id]
    }

    pub fn labeled_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled[i]).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled
    }

    /// Superclass of every labeled sample, in `labeled_ids()` order.
    pub fn labeled_classes(&self) -> Vec<usize> {
        self.labeled_ids().into_iter().map(|i| self.superclass[i].expect("labeled sample without superclass")).collect()
    }

    /// Known superclass of every sample, labeled or not (for evaluation).
    pub fn classes(&self) -> Option<Vec<usize>> {
        self.superclass.iter().copied().collect()
    }

    /// Copies the given rows into a `len(ids) × dim` matrix.
    pub fn rows(&self, ids: &[usize]) -> Array2<f32> {
        self.features.select(Axis(0), ids)
    }

    /// Marks a sample labeled with the given class. Fails if it already is labeled.
    pub fn assign_label(&mut self, id: usize, class: usize) -> Result<()> {
        if id >= self.len() {
            return Err(Error::InvalidArgument(format!("sample id {id} out of range")));
        }
        if class >= self.n_classes {
            return Err(Error::InvalidArgument(format!("class {class} out of range for K={}", self.n_classes)));
        }
        if self.labeled[id] {
            return Err(Error::InvalidArgument(format!("sample {id} is already labeled")));
        }
        self.superclass[id] = Some(class);
        self.labeled[id] = true;
        Ok(())
    }

    /// Replaces the labeled partition. Every id must carry a superclass.
    pub fn set_labeled(&mut self, ids: &BTreeSet<usize>) -> Result<()> {
        for &id in ids {
            if id >= self.len() {
                return Err(Error::Split(format!("sample id {id} out of range")));
            }
            if self.superclass[id].is_none() {
                return Err(Error::Split(format!("sample {id} has no superclass")));
            }
        }
        self.labeled = (0..self.len()).map(|i| ids.contains(&i)).collect();
        Ok(())
    }

    pub fn set_image_shape(&mut self, rows: usize, cols: usize) -> Result<()> {
        if rows * cols != self.dim() {
            return Err(Error::Shape(format!("{rows}x{cols} does not match dimension {}", self.dim())));
        }
        self.image_shape = Some((rows, cols));
        Ok(())
    }

    /// A new dataset holding the given samples (re-indexed from zero), labeled flags preserved.
    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            features: self.rows(ids),
            raw_labels: ids.iter().map(|&i| self.raw_labels[i]).collect(),
            superclass: ids.iter().map(|&i| self.superclass[i]).collect(),
            labeled: ids.iter().map(|&i| self.labeled[i]).collect(),
            n_classes: self.n_classes,
            kind: self.kind,
            image_shape: self.image_shape,
        }
    }
}

/// Mapping from raw labels to superclass indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub name: String,
    pub groups: BTreeMap<u32, usize>,
}

impl Decomposition {
    /// `groups[k]` lists the raw labels folded into superclass `k`.
    pub fn from_groups(name: &str, groups: &[Vec<u32>]) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Decomposition("at least one group is required".into()));
        }
        let mut map = BTreeMap::new();
        for (k, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Decomposition(format!("group {k} is empty")));
            }
            for &raw in group {
                if map.insert(raw, k).is_some() {
                    return Err(Error::Decomposition(format!("raw label {raw} appears in two groups")));
                }
            }
        }
        Ok(Decomposition { name: name.to_string(), groups: map })
    }

    pub fn identity(alphabet: &[u32]) -> Self {
        let groups = alphabet.iter().enumerate().map(|(k, &raw)| (raw, k)).collect();
        Decomposition { name: "identity".into(), groups }
    }

    /// Digits split into A=(0,1,9), B=(4,6,8), C=(2,3,5,7).
    pub fn mnist_abc() -> Self {
        Self::from_groups("mnist-abc", &[vec![0, 1, 9], vec![4, 6, 8], vec![2, 3, 5, 7]]).unwrap()
    }

    /// Fashion-MNIST by season: summer (top, sandal, dress, shirt), winter
    /// (pullover, coat, ankle boot), all-year (sneaker, trouser, bag).
    pub fn fashion_season() -> Self {
        Self::from_groups("fashion-season", &[vec![0, 5, 3, 6], vec![2, 4, 9], vec![7, 1, 8]]).unwrap()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.values().max().map_or(0, |&k| k + 1)
    }
}

pub fn apply_decomposition(ds: &Dataset, d: &Decomposition) -> Result<Dataset> {
    let k = d.n_groups();
    let present: BTreeSet<usize> = d.groups.values().copied().collect();
    if k == 0 || present.len() != k {
        return Err(Error::Decomposition(format!("decomposition '{}' must use contiguous group indices", d.name)));
    }
    let mut out = ds.clone();
    for id in 0..ds.len() {
        out.superclass[id] = match ds.raw_labels[id] {
            Some(raw) => {
                Some(*d.groups.get(&raw).ok_or_else(|| Error::Decomposition(format!("raw label {raw} is not mapped by '{}'", d.name)))?)
            }
            None if ds.labeled[id] => {
                return Err(Error::Decomposition(format!("labeled sample {id} has no raw label")));
            }
            None => None,
        };
    }
    out.n_classes = k;
    Ok(out)
}

/// Seeded stratified choice of `n_labeled` samples among those with a known superclass.
///
/// Per-class quotas are the proportional share rounded by largest remainder, so
/// each differs from the exact proportion by less than one.
pub fn split_labeled(ds: &Dataset, n_labeled: usize, seed: u64) -> Result<Dataset> {
    if ds.n_classes == 0 {
        return Err(Error::Split("no decomposition applied".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for id in 0..ds.len() {
        if let Some(c) = ds.superclass[id] {
            by_class[c].push(id);
        }
    }
    let available: usize = by_class.iter().map(Vec::len).sum();
    if n_labeled > available {
        return Err(Error::Split(format!("requested {n_labeled} labels but only {available} samples have a class")));
    }
    let quotas = proportional_quotas(&by_class.iter().map(Vec::len).collect::<Vec<_>>(), n_labeled);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for (ids, &q) in by_class.iter_mut().zip(&quotas) {
        if q > ids.len() {
            return Err(Error::Split(format!("class quota {q} exceeds {} available", ids.len())));
        }
        ids.shuffle(&mut rng);
        chosen.extend(ids.iter().take(q).copied());
    }
    let mut out = ds.clone();
    out.set_labeled(&chosen)?;
    Ok(out)
}

fn proportional_quotas(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut rest = total - quotas.iter().sum::<usize>();
    // largest remainder first, ties to the lower class index
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&k| (std::cmp::Reverse((counts[k] * total) % n), k));
    for k in order {
        if rest == 0 {
            break;
        }
        if quotas[k] < counts[k] {
            quotas[k] += 1;
            rest -= 1;
        }
    }
    quotas
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Parses an IDX3 image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic:#010x}")));
    }
    let n = cur.read_u32::<BigEndian>()? as usize;
    let rows = cur.read_u32::<BigEndian>()? as usize;
    let cols = cur.read_u32::<BigEndian>()? as usize;
    let body = &bytes[16..];
    if body.len() < n * rows * cols {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated IDX image data").into());
    }
    Ok((n, rows, cols, &body[..n * rows * cols]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic:#010x}")));
    }
    let n = cur.read_u32::<BigEndian>()? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated IDX label data").into());
    }
    Ok(&body[..n])
}

/// Loads an IDX image/label pair, scaling pixels by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = read_file(images_path.as_ref())?;
    let label_bytes = read_file(labels_path.as_ref())?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!("{n} images but {} labels", labels.len())));
    }
    let features = Array2::from_shape_vec((n, rows * cols), pixels.iter().map(|&p| f32::from(p) / 255.0).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut ds = Dataset::new(features, labels.iter().map(|&l| Some(u32::from(l))).collect(), FeatureKind::Image)?;
    ds.set_image_shape(rows, cols)?;
    Ok(ds)
}

/// Loads a rectangular numeric CSV, optionally with an integer label in the last column.
/// A first row consisting only of non-numeric cells is treated as a header.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path.as_ref())?;
    let mut width = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if line == 0 && record.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Format(format!("row {} has {} columns, expected {w}", line + 1, record.len())));
        }
        let n_feat = if has_labels { w.saturating_sub(1) } else { w };
        for cell in record.iter().take(n_feat) {
            let v: f32 = cell.parse().map_err(|_| Error::Parse(format!("row {}: '{cell}' is not a number", line + 1)))?;
            values.push(v);
        }
        if has_labels {
            let cell = &record[w - 1];
            let label: u32 = cell.parse().map_err(|_| Error::Parse(format!("row {}: label '{cell}' is not an integer", line + 1)))?;
            labels.push(Some(label));
        } else {
            labels.push(None);
        }
    }
    let w = width.ok_or_else(|| Error::Format("empty CSV".into()))?;
    let dim = if has_labels { w - 1 } else { w };
    let n = labels.len();
    let features = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, labels, FeatureKind::Vector)
}

/// Writes features (and raw labels, when every sample has one) with a header row.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let with_labels = ds.raw_labels.iter().all(Option::is_some);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    if with_labels {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for id in 0..ds.len() {
        let mut row: Vec<String> = ds.features.row(id).iter().map(|v| v.to_string()).collect();
        if let (true, Some(l)) = (with_labels, ds.raw_labels[id]) {
            row.push(l.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
