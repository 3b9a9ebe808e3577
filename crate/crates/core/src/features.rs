//! Shape basis learning: PCA truncation and whitening followed by FastICA.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mnist::{DigitSet, Split, PIXELS};
use crate::scalar::Real;

pub const DICT_MAGIC: &[u8; 8] = b"RSDICT01";

/// Feature count used throughout the experiments.
pub const DEFAULT_FEATURES: usize = 154;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PcaIca,
    External,
}

/// Principal components of a set of row vectors.
#[derive(Debug, Clone)]
pub struct PcaModel {
    dim: usize,
    k: usize,
    mean: Vec<f64>,
    /// `dim x k`, row-major; columns are eigenvectors.
    eigenvectors: Vec<f64>,
    /// Square roots of the covariance eigenvalues, descending.
    singular_values: Vec<f64>,
    /// Full spectrum of the covariance, descending.
    spectrum: Vec<f64>,
}

impl PcaModel {
    /// Fits on `rows` (`n x dim`, row-major), keeping the top `k` components.
    pub fn fit_rows<T: Real>(rows: &[T], dim: usize, k: usize) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) || rows.is_empty() {
            return Err(Error::Dimension(format!(
                "{} values cannot be split into rows of {dim}",
                rows.len()
            )));
        }
        if k == 0 || k > dim {
            return Err(Error::Invalid(format!("k = {k} outside 1..={dim}")));
        }
        let n = rows.len() / dim;
        let mut mean = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v.to_f();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        const CHUNK: usize = 4096;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for block in rows.chunks(CHUNK * dim) {
            let m = block.len() / dim;
            let centered = DMatrix::from_fn(m, dim, |i, j| block[i * dim + j].to_f() - mean[j]);
            cov.gemm_tr(1.0, &centered, &centered, 1.0);
        }
        cov /= n as f64;
        // gemm_tr fills the whole matrix but rounding can break exact symmetry
        for i in 0..dim {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }

        let (values, vectors) = linalg::symmetric_eigen_desc(cov);
        let spectrum: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
        let singular_values = spectrum[..k].iter().map(|v| v.sqrt()).collect();
        let mut eigenvectors = vec![0.0; dim * k];
        for r in 0..dim {
            for c in 0..k {
                eigenvectors[r * k + c] = vectors[(r, c)];
            }
        }
        Ok(Self {
            dim,
            k,
            mean,
            eigenvectors,
            singular_values,
            spectrum,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `dim x k` row-major.
    pub fn eigenvectors(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, c: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.eigenvectors[r * self.k + c]).collect()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Indicator of the kept eigenvectors among all `dim` of them.
    pub fn truncation_mask(&self) -> Vec<bool> {
        (0..self.dim).map(|i| i < self.k).collect()
    }

    /// Coefficients `U_k^T (x - mean)`.
    pub fn project<T: Real>(&self, x: &[T]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (r, &v) in x.iter().enumerate() {
            let d = v.to_f() - self.mean[r];
            if d == 0.0 {
                continue;
            }
            let row = &self.eigenvectors[r * self.k..(r + 1) * self.k];
            for (o, &u) in out.iter_mut().zip(row) {
                *o += d * u;
            }
        }
        out
    }

    /// `U_k z` (no mean added).
    pub fn back_project(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                let row = &self.eigenvectors[r * self.k..(r + 1) * self.k];
                row.iter().zip(z).map(|(u, c)| u * c).sum()
            })
            .collect()
    }
}

/// PCA of the training digits.
pub fn fit_pca<T: Real>(digits: &DigitSet<T>, k: usize) -> Result<PcaModel> {
    digits.require(Split::Train)?;
    PcaModel::fit_rows(digits.images(), PIXELS, k)
}

/// Whitened, truncated data: unit-variance components and their pixel-space basis.
#[derive(Debug, Clone)]
pub struct WhitenedData {
    n: usize,
    k: usize,
    dim: usize,
    /// `n x k` row-major whitened coefficients.
    components: Vec<f64>,
    /// `dim x k` row-major kept eigenvectors.
    basis: Vec<f64>,
}

impl WhitenedData {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component_row(&self, i: usize) -> &[f64] {
        &self.components[i * self.k..(i + 1) * self.k]
    }

    /// Pixel-space view of sample `i`: `U_k z_i`.
    pub fn pixel(&self, i: usize) -> Vec<f64> {
        let z = self.component_row(i);
        (0..self.dim)
            .map(|r| {
                self.basis[r * self.k..(r + 1) * self.k]
                    .iter()
                    .zip(z)
                    .map(|(u, c)| u * c)
                    .sum()
            })
            .collect()
    }

    /// Sample variance of each whitened component.
    pub fn component_variances(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.k];
        let mut sq = vec![0.0; self.k];
        for row in self.components.chunks_exact(self.k) {
            for j in 0..self.k {
                mean[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        let n = self.n as f64;
        (0..self.k).map(|j| sq[j] / n - (mean[j] / n).powi(2)).collect()
    }
}

/// Projects each sample on the kept eigenvectors with unit variance per component.
///
/// Components whose variance is zero are left at zero.
pub fn whiten_truncate<T: Real>(pca: &PcaModel, digits: &DigitSet<T>) -> Result<WhitenedData> {
    whiten_rows(pca, digits.images())
}

pub fn whiten_rows<T: Real>(pca: &PcaModel, rows: &[T]) -> Result<WhitenedData> {
    if !rows.len().is_multiple_of(pca.dim) {
        return Err(Error::Dimension(format!(
            "rows of {} values expected by the model",
            pca.dim
        )));
    }
    let n = rows.len() / pca.dim;
    let inv: Vec<f64> = pca
        .singular_values
        .iter()
        .map(|&s| if s > 1e-12 { 1.0 / s } else { 0.0 })
        .collect();
    let mut components = Vec::with_capacity(n * pca.k);
    for r in rows.chunks_exact(pca.dim) {
        let z = pca.project(r);
        components.extend(z.iter().zip(&inv).map(|(a, b)| a * b));
    }
    Ok(WhitenedData {
        n,
        k: pca.k,
        dim: pca.dim,
        components,
        basis: pca.eigenvectors.clone(),
    })
}

/// FastICA hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IcaParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IcaParams {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

/// Output of the component-space FastICA iteration.
#[derive(Debug, Clone)]
pub struct Unmixing {
    /// `k x k` orthogonal unmixing matrix, row-major; rows are unmixing vectors.
    pub w: Vec<f64>,
    pub k: usize,
    pub iterations: usize,
}

/// Symmetric FastICA with cubic nonlinearity on whitened `n x k` rows.
pub fn fast_ica_components(z: &[f64], k: usize, seed: u64, params: IcaParams) -> Result<Unmixing> {
    if k == 0 || !z.len().is_multiple_of(k) || z.is_empty() {
        return Err(Error::Dimension("whitened data does not split into rows".into()));
    }
    let n = z.len() / k;
    let zm = DMatrix::from_row_slice(n, k, z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let mut w = linalg::symmetric_decorrelation(&w0);
    for it in 1..=params.max_iter {
        // y = z W^T, one column per source
        let y = &zm * w.transpose();
        let g = y.map(|v| v * v * v);
        let gp_mean: Vec<f64> = (0..k)
            .map(|j| 3.0 * y.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        let mut w_new = g.transpose() * &zm / n as f64;
        for i in 0..k {
            for j in 0..k {
                w_new[(i, j)] -= gp_mean[i] * w[(i, j)];
            }
        }
        let w_new = linalg::symmetric_decorrelation(&w_new);
        let mut change = 0.0f64;
        for i in 0..k {
            let dot: f64 = w_new.row(i).iter().zip(w.row(i).iter()).map(|(a, b)| a * b).sum();
            change = change.max(1.0 - dot.abs());
        }
        w = w_new;
        if change < params.tol {
            return Ok(Unmixing {
                w: linalg::from_dmatrix(&w),
                k,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: params.max_iter,
    })
}

/// FastICA on whitened digits; features are `U_k W^T`, orthonormal columns.
pub fn fit_fast_ica(
    whitened: &WhitenedData,
    k: usize,
    seed: u64,
    mean: &[f64],
    params: IcaParams,
) -> Result<SparseDictionary<f64>> {
    if k != whitened.k {
        return Err(Error::Invalid(format!(
            "requested {k} components from data whitened to {}",
            whitened.k
        )));
    }
    if mean.len() != whitened.dim {
        return Err(Error::Dimension("mean length differs from pixel count".into()));
    }
    let un = fast_ica_components(&whitened.components, k, seed, params)?;
    let dim = whitened.dim;
    let mut features = vec![0.0; dim * k];
    let mut col = vec![0.0; dim];
    for c in 0..k {
        for (r, v) in col.iter_mut().enumerate() {
            let u = &whitened.basis[r * k..(r + 1) * k];
            let wr = &un.w[c * k..(c + 1) * k];
            *v = u.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
        linalg::fix_sign(&mut col);
        for r in 0..dim {
            features[r * k + c] = col[r];
        }
    }
    SparseDictionary::from_parts(dim, k, features, mean.to_vec(), true, Provenance::PcaIca)
}

/// Learns the shape basis from the training digits.
pub fn learn_dictionary<T: Real>(
    digits: &DigitSet<T>,
    k: usize,
    seed: u64,
    params: IcaParams,
) -> Result<SparseDictionary<f64>> {
    let pca = fit_pca(digits, k)?;
    let white = whiten_truncate(&pca, digits)?;
    fit_fast_ica(&white, k, seed, pca.mean(), params)
}

/// Pixel-space basis functions (columns) plus the training mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDictionary<T> {
    rows: usize,
    k: usize,
    /// `rows x k` row-major.
    features: Vec<T>,
    mean: Vec<T>,
    orthogonal: bool,
    provenance: Provenance,
}

impl<T: Real> SparseDictionary<T> {
    pub fn from_parts(
        rows: usize,
        k: usize,
        features: Vec<T>,
        mean: Vec<T>,
        orthogonal: bool,
        provenance: Provenance,
    ) -> Result<Self> {
        if k == 0 || k > rows {
            return Err(Error::Format(format!("feature count {k} outside 1..={rows}")));
        }
        if features.len() != rows * k || mean.len() != rows {
            return Err(Error::Dimension(format!(
                "features {} / mean {} for a {rows} x {k} dictionary",
                features.len(),
                mean.len()
            )));
        }
        Ok(Self {
            rows,
            k,
            features,
            mean,
            orthogonal,
            provenance,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn feature(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.features[r * self.k + c]).collect()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn cast<U: Real>(&self) -> SparseDictionary<U> {
        SparseDictionary {
            rows: self.rows,
            k: self.k,
            features: self.features.iter().map(|v| U::of(v.to_f())).collect(),
            mean: self.mean.iter().map(|v| U::of(v.to_f())).collect(),
            orthogonal: self.orthogonal,
            provenance: self.provenance,
        }
    }

    /// `F^T x`.
    pub fn analyze(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.k];
        for (r, &v) in x.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            for (o, &f) in out.iter_mut().zip(&self.features[r * self.k..(r + 1) * self.k]) {
                *o = *o + v * f;
            }
        }
        out
    }

    /// Least-squares coefficients of `x`: `F^T x` when orthonormal, `pinv(F) x` otherwise.
    pub fn coefficients(&self, x: &[T]) -> Vec<T> {
        if self.is_orthogonal() {
            return self.analyze(x);
        }
        let f: Vec<f64> = self.features.iter().map(|v| v.to_f()).collect();
        let p = linalg::pinv(self.rows, self.k, &f);
        p.chunks_exact(self.rows)
            .map(|row| T::of(row.iter().zip(x).map(|(a, b)| a * b.to_f()).sum()))
            .collect()
    }

    /// `F c`.
    pub fn synthesize(&self, coeffs: &[T]) -> Vec<T> {
        self.features
            .chunks_exact(self.k)
            .map(|row| row.iter().zip(coeffs).map(|(&f, &c)| f * c).sum())
            .collect()
    }

    /// Largest deviation of `F^T F` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let f = DMatrix::from_fn(self.rows, self.k, |r, c| self.features[r * self.k + c].to_f());
        let g = f.transpose() * f;
        let mut worst = 0.0f64;
        for i in 0..self.k {
            for j in 0..self.k {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - e).abs());
            }
        }
        worst
    }

    /// Writes the little-endian binary format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 8 * (self.rows + self.features.len()));
        out.extend_from_slice(DICT_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.push(self.orthogonal as u8);
        for v in self.mean.iter().chain(&self.features) {
            out.extend_from_slice(&v.to_f().to_le_bytes());
        }
        out
    }

    /// Parses the binary format. The file carries no provenance field: an
    /// orthogonal dictionary is reported as PCA+ICA output, anything else as external.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 17 || &bytes[..8] != DICT_MAGIC {
            return Err(Error::Format("not an RSDICT01 dictionary".into()));
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let orthogonal = match bytes[16] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("orthogonal flag {b} is not 0 or 1"))),
        };
        if rows != PIXELS {
            return Err(Error::Format(format!("dictionary has {rows} rows, expected {PIXELS}")));
        }
        if k == 0 || k > rows {
            return Err(Error::Format(format!("feature count {k} outside 1..={rows}")));
        }
        let payload = &bytes[17..];
        let expected = 8 * (rows + rows * k);
        if payload.len() != expected {
            return Err(Error::Length {
                expected,
                found: payload.len(),
            });
        }
        let vals: Vec<T> = payload
            .chunks_exact(8)
            .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let (mean, features) = vals.split_at(rows);
        let provenance = if orthogonal {
            Provenance::PcaIca
        } else {
            Provenance::External
        };
        Self::from_parts(rows, k, features.to_vec(), mean.to_vec(), orthogonal, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_dictionary<T: Real>(dict: &SparseDictionary<T>, path: impl AsRef<Path>) -> Result<()> {
    dict.save(path)
}

pub fn load_dictionary<T: Real>(path: impl AsRef<Path>) -> Result<SparseDictionary<T>> {
    SparseDictionary::load(path)
}

/// Excess kurtosis of each column of an `n x k` row-major matrix.
pub fn column_kurtosis(rows: &[f64], k: usize) -> Vec<f64> {
    let n = (rows.len() / k) as f64;
    (0..k)
        .map(|j| {
            let col = rows.iter().skip(j).step_by(k);
            let mean = col.clone().sum::<f64>() / n;
            let (m2, m4) = col.fold((0.0, 0.0), |(a, b), &v| {
                let d = (v - mean) * (v - mean);
                (a + d, b + d * d)
            });
            let (m2, m4) = (m2 / n, m4 / n);
            if m2 > 0.0 {
                m4 / (m2 * m2) - 3.0
            } else {
                0.0
            }
        })
        .collect()
}
