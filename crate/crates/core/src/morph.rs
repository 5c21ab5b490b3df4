//! Decoding latent codes shifted along class-center directions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::sae::SaeModel;
use crate::svm::SvmModel;

/// Per-class means of the columns of `latents` (`m × n`), as a `K × m` matrix.
pub fn class_centers(latents: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    let (centers, counts) = crate::mds::class_means(latents, labels, n_classes)?;
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no samples")));
    }
    Ok(centers)
}

/// `c_to − c_from`.
pub fn deformation_vector(c_from: ArrayView1<'_, f64>, c_to: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if c_from.len() != c_to.len() {
        return Err(Error::Shape(format!("centers of length {} and {}", c_from.len(), c_to.len())));
    }
    Ok(&c_to - &c_from)
}

/// The latent code `encode(x) + α·v`, shifted in f64.
pub fn shifted_latent(sae: &SaeModel<f32>, x: ArrayView1<'_, f32>, v: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f64>> {
    if v.len() != sae.latent_dim() {
        return Err(Error::Shape(format!("deformation has length {}, latent has {}", v.len(), sae.latent_dim())));
    }
    let z = sae.encode(x.insert_axis(Axis(1)))?;
    Ok(z.index_axis_move(Axis(1), 0).mapv(f64::from) + alpha * &v)
}

fn decode_latent(sae: &SaeModel<f32>, z: &Array1<f64>) -> Result<Array1<f32>> {
    let z = z.mapv(|v| v as f32).insert_axis(Axis(1));
    Ok(sae.decode(z.view())?.index_axis_move(Axis(1), 0))
}

/// `decode(encode(x) + α·v)`. At α = 0 this is exactly the reconstruction of `x`.
pub fn morph(sae: &SaeModel<f32>, x: ArrayView1<'_, f32>, v: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f32>> {
    decode_latent(sae, &shifted_latent(sae, x, v, alpha)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphTrack {
    pub source_id: usize,
    /// Moves from class `pair.0` toward class `pair.1`.
    pub pair: (usize, usize),
    pub alphas: Vec<f64>,
    pub outputs: Vec<Array1<f32>>,
    /// Normalized pair score toward `pair.1` of each shifted latent.
    pub scores: Vec<f64>,
    /// Raw pair decision value of each shifted latent.
    pub decision_values: Vec<f64>,
}

/// Evaluates [`morph`] at `n_steps` equally spaced α in `[0, 1]` along the
/// center direction of `pair` stored in the SVM.
pub fn morph_track(
    sae: &SaeModel<f32>,
    svm: &SvmModel,
    x: ArrayView1<'_, f32>,
    source_id: usize,
    pair: (usize, usize),
    n_steps: usize,
) -> Result<MorphTrack> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument("a morph track needs at least two steps".into()));
    }
    let (a, b) = pair;
    svm.pair(a, b)?;
    let v = deformation_vector(svm.centers.row(a), svm.centers.row(b))?;
    let alphas: Vec<f64> = (0..n_steps).map(|i| i as f64 / (n_steps - 1) as f64).collect();
    let mut track = MorphTrack {
        source_id,
        pair,
        alphas: alphas.clone(),
        outputs: Vec::with_capacity(n_steps),
        scores: Vec::with_capacity(n_steps),
        decision_values: Vec::with_capacity(n_steps),
    };
    for &alpha in &alphas {
        let z = shifted_latent(sae, x, v.view(), alpha)?;
        track.decision_values.push(svm.decision_value(a, b, z.view())?);
        track.scores.push(svm.normalized_score(a, b, z.view())?);
        track.outputs.push(decode_latent(sae, &z)?);
    }
    Ok(track)
}
