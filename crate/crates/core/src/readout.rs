//! Shape reconstruction from converged networks and the linear digit classifier.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::SparseDictionary;
use crate::image::{GrayImage, RgbImage};
use crate::linalg;
use crate::mnist::{PIXELS, SIDE};
use crate::resonator::{decoded_position, Resonator, ResonatorState};
use crate::scalar::{Real, C};
use crate::scene::paint_digit;
use crate::vfa::{Canvas, Codebooks, Palette};

pub const CLASSIFIER_MAGIC: &[u8; 7] = b"RSCLF01";
pub const CLASSES: usize = 10;

/// Which shape coefficients a readout uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutSource {
    /// Decode with color and position snapped to their argmax atoms, scaled
    /// by the color energy so coefficients match pixel amplitudes.
    SnappedDecode,
    /// The LCA output vector as held by the network.
    LcaOutput,
}

/// Categorical factors and shape coefficients of one object.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FactorEstimate {
    pub color: usize,
    /// Decoded object center.
    pub x: usize,
    pub y: usize,
    pub shape_argmax: usize,
    /// Coefficients over every shape atom, auxiliary ones included.
    pub shape: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Reads the factor estimate out of a network state.
pub fn estimate<T: Real>(res: &Resonator<'_, T>, state: &ResonatorState<T>, s: &[C<T>], source: ReadoutSource) -> Option<FactorEstimate> {
    let a = state.argmax()?;
    let shape: Vec<T> = match (source, &state.lca) {
        // The LCA sees the scene unbound by a unit-modulus color, so its output
        // carries the color's mean amplitude.
        (ReadoutSource::LcaOutput, Some(l)) => {
            let amp = res.color_amplitude(a.color);
            l.x.iter().map(|&x| x / amp).collect()
        }
        (ReadoutSource::LcaOutput, None) => state.shape_coefficients()?.to_vec(),
        (ReadoutSource::SnappedDecode, _) => res.snapped_coefficients(&a, s),
    };
    let (x, y) = decoded_position(res.cbs, &a);
    Some(FactorEstimate {
        color: a.color,
        x,
        y,
        shape_argmax: a.shape,
        shape: shape.iter().map(|v| v.to_f()).collect(),
        converged: state.converged,
        iterations: state.iteration,
    })
}

/// Centered, decolored object image.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// 28x28, row-major, in `[0, 1]`.
    pub centered_image: Vec<f64>,
    /// Feature coefficients of the mean-subtracted digit.
    pub coefficients: Vec<f64>,
}

impl Reconstruction {
    pub fn to_gray(&self) -> GrayImage<f64> {
        GrayImage {
            width: SIDE,
            height: SIDE,
            data: self.centered_image.clone(),
        }
    }
}

/// `clamp(mean + F c)` for feature coefficients `c` of a centered digit.
pub fn reconstruct_from_coefficients<T: Real>(dict: &SparseDictionary<T>, coefficients: &[f64]) -> Reconstruction {
    let c: Vec<T> = coefficients.iter().map(|&v| T::of(v)).collect();
    let img = dict
        .synthesize(&c)
        .iter()
        .zip(dict.mean())
        .map(|(&f, &m)| (f + m).to_f().clamp(0.0, 1.0))
        .collect();
    Reconstruction {
        centered_image: img,
        coefficients: coefficients.to_vec(),
    }
}

/// Maps shape-atom coefficients back to a centered digit.
///
/// The training mean's share is removed from the learned-feature coefficients
/// and re-added in pixel space; auxiliary atoms only carry mean energy and are dropped.
pub fn reconstruct_shape<T: Real>(est: &FactorEstimate, cbs: &Codebooks<T>, dict: &SparseDictionary<T>) -> Reconstruction {
    let k = cbs.n_features;
    let coeffs: Vec<f64> = (0..k)
        .map(|j| est.shape.get(j).copied().unwrap_or(0.0) - cbs.mean_coeffs[j].to_f())
        .collect();
    reconstruct_from_coefficients(dict, &coeffs)
}

/// Exact feature coefficients of a centered digit, `pinv(F) (d - mean)`.
pub fn digit_coefficients<T: Real>(dict: &SparseDictionary<T>, digit: &[T]) -> Vec<f64> {
    let centered: Vec<T> = digit.iter().zip(dict.mean()).map(|(&d, &m)| d - m).collect();
    dict.coefficients(&centered).iter().map(|v| v.to_f()).collect()
}

/// Paints every object's reconstruction at its decoded color and position.
pub fn reconstruct_scene<T: Real>(
    estimates: &[FactorEstimate],
    cbs: &Codebooks<T>,
    dict: &SparseDictionary<T>,
    palette: &Palette,
    canvas: Canvas,
) -> RgbImage<f64> {
    let mut img = RgbImage::blank(canvas);
    for est in estimates {
        let rec = reconstruct_shape(est, cbs, dict);
        paint_digit(&mut img, &rec.centered_image, palette.color(est.color), est.x as i64, est.y as i64);
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingType {
    /// Raw centered digits.
    Original,
    /// Pipeline reconstructions of training scenes.
    Reconstructed,
}

/// Affine one-vs-all scores from ridge regression onto one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `10 x 785` row-major; the last column is the bias.
    pub weights: Vec<f64>,
    pub training_type: TrainingType,
    pub ridge: f64,
}

/// Default ridge: `1e-2` per training sample.
pub fn default_ridge(n_samples: usize) -> f64 {
    1e-2 * n_samples as f64
}

/// Closed-form ridge fit; the bias column is not penalized.
///
/// `images` is `n x 784` row-major.
pub fn train_classifier(images: &[f64], labels: &[u8], ridge: f64, training_type: TrainingType) -> Result<LinearClassifier> {
    if images.len() != labels.len() * PIXELS || labels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} pixel values for {} labels",
            images.len(),
            labels.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Invalid(format!("ridge {ridge} is negative")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Invalid(format!("label {l} outside 0..9")));
    }
    let d = PIXELS + 1;
    let mut ata = DMatrix::<f64>::zeros(d, d);
    let mut aty = DMatrix::<f64>::zeros(d, CLASSES);
    const CHUNK: usize = 4096;
    for (block, labs) in images.chunks(CHUNK * PIXELS).zip(labels.chunks(CHUNK)) {
        let m = labs.len();
        let a = DMatrix::from_fn(m, d, |i, j| if j < PIXELS { block[i * PIXELS + j] } else { 1.0 });
        let y = DMatrix::from_fn(m, CLASSES, |i, j| if labs[i] as usize == j { 1.0 } else { 0.0 });
        ata.gemm_tr(1.0, &a, &a, 1.0);
        aty.gemm_tr(1.0, &a, &y, 1.0);
    }
    for i in 0..PIXELS {
        ata[(i, i)] += ridge;
    }
    let w = linalg::solve_spd(ata, &aty).map_err(|e| match ridge {
        r if r == 0.0 => Error::Singular(format!("{e}; use a ridge > 0")),
        _ => e,
    })?;
    let mut weights = vec![0.0; CLASSES * d];
    for cls in 0..CLASSES {
        for j in 0..d {
            weights[cls * d + j] = w[(j, cls)];
        }
    }
    Ok(LinearClassifier {
        weights,
        training_type,
        ridge,
    })
}

impl LinearClassifier {
    pub fn scores(&self, image: &[f64]) -> [f64; CLASSES] {
        let d = PIXELS + 1;
        let mut out = [0.0; CLASSES];
        for (cls, o) in out.iter_mut().enumerate() {
            let row = &self.weights[cls * d..(cls + 1) * d];
            *o = row[..PIXELS].iter().zip(image).map(|(w, x)| w * x).sum::<f64>() + row[PIXELS];
        }
        out
    }

    /// Argmax label; ties go to the lowest label.
    pub fn predict(&self, image: &[f64]) -> (u8, [f64; CLASSES]) {
        let s = self.scores(image);
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        (best as u8, s)
    }

    pub fn classify(&self, rec: &Reconstruction) -> (u8, [f64; CLASSES]) {
        self.predict(&rec.centered_image)
    }

    pub fn accuracy(&self, images: &[f64], labels: &[u8]) -> f64 {
        let hits = images
            .chunks_exact(PIXELS)
            .zip(labels)
            .filter(|(img, &l)| self.predict(img).0 == l)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CLASSIFIER_MAGIC.to_vec();
        out.extend_from_slice(&(CLASSES as u32).to_le_bytes());
        out.extend_from_slice(&((PIXELS + 1) as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// The file holds weights only; training type and ridge are supplied by the caller.
    pub fn from_bytes(bytes: &[u8], training_type: TrainingType, ridge: f64) -> Result<Self> {
        if bytes.len() < 15 || &bytes[..7] != CLASSIFIER_MAGIC {
            return Err(Error::Format("not an RSCLF01 classifier".into()));
        }
        let rows = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        if rows != CLASSES || cols != PIXELS + 1 {
            return Err(Error::Format(format!("classifier shape {rows}x{cols}, expected 10x785")));
        }
        let payload = &bytes[15..];
        if payload.len() != 8 * rows * cols {
            return Err(Error::Length {
                expected: 8 * rows * cols,
                found: payload.len(),
            });
        }
        Ok(Self {
            weights: payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            training_type,
            ridge,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, training_type: TrainingType, ridge: f64) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, training_type, ridge)
    }
}

/// One evaluated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub true_label: u8,
    pub predicted: u8,
    pub converged: bool,
}

pub fn write_eval_csv<W: Write>(out: &mut W, records: &[EvalRecord]) -> std::io::Result<()> {
    writeln!(out, "seed,true_label,predicted,converged")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.seed, r.true_label, r.predicted, r.converged)?;
    }
    Ok(())
}
