//! Phasor vector encodings of images and the codebooks built on them.
//!
//! Base vector phases are integer powers of the W-th / H-th roots of unity, so
//! `h^x` only depends on `kh[i] * x mod W`. Every position or image-shaped atom
//! is therefore a function of the lattice point `(kh[i], kv[i])`, which lets
//! decode and encode go through a `W x H` spectral grid instead of dense
//! `N x M` products.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::SparseDictionary;
use crate::mnist::SIDE;
use crate::scalar::{c, cis, czero, Real, C};

pub const BASIS_MAGIC: &[u8; 7] = b"RSVFA01";

/// Canvas size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Top-left corner of the centered 28x28 digit window.
    pub fn digit_origin(&self) -> (usize, usize) {
        (
            self.width.saturating_sub(SIDE) / 2,
            self.height.saturating_sub(SIDE) / 2,
        )
    }

    /// Canvas coordinates of the center of a centered digit.
    pub fn center(&self) -> (usize, usize) {
        let (x0, y0) = self.digit_origin();
        (x0 + SIDE / 2, y0 + SIDE / 2)
    }

    pub fn digit_window(&self) -> Window {
        let (x0, y0) = self.digit_origin();
        Window {
            x0,
            y0,
            w: SIDE,
            h: SIDE,
        }
    }

    pub fn full_window(&self) -> Window {
        Window {
            x0: 0,
            y0: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn wrap_x(&self, x: i64) -> usize {
        x.rem_euclid(self.width as i64) as usize
    }

    pub fn wrap_y(&self, y: i64) -> usize {
        y.rem_euclid(self.height as i64) as usize
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self::square(56)
    }
}

/// Rectangular pixel region of the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Phase exponents of the base vectors plus root-of-unity tables.
#[derive(Debug, Clone)]
pub struct Lattice<T> {
    n: usize,
    canvas: Canvas,
    kh: Vec<u32>,
    kv: Vec<u32>,
    roots_w: Vec<C<T>>,
    roots_h: Vec<C<T>>,
}

fn roots<T: Real>(m: usize) -> Vec<C<T>> {
    (0..m)
        .map(|k| {
            let z = cis(2.0 * std::f64::consts::PI * k as f64 / m as f64);
            c(T::of(z.re), T::of(z.im))
        })
        .collect()
}

impl<T: Real> Lattice<T> {
    fn new(canvas: Canvas, kh: Vec<u32>, kv: Vec<u32>) -> Self {
        Self {
            n: kh.len(),
            canvas,
            roots_w: roots(canvas.width),
            roots_h: roots(canvas.height),
            kh,
            kv,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn kh(&self) -> &[u32] {
        &self.kh
    }

    pub fn kv(&self) -> &[u32] {
        &self.kv
    }

    /// Sums `r` into the `W x H` grid indexed `[a * H + b]` by `(kh, kv)`.
    fn bin_2d(&self, r: &[C<T>]) -> Vec<C<T>> {
        let hh = self.canvas.height;
        let mut grid = vec![czero(); self.canvas.pixels()];
        for ((&a, &b), &z) in self.kh.iter().zip(&self.kv).zip(r) {
            let g = &mut grid[a as usize * hh + b as usize];
            *g = *g + z;
        }
        grid
    }

    fn bin_axis(&self, r: &[C<T>], axis: Axis) -> Vec<C<T>> {
        let (k, m) = match axis {
            Axis::Horizontal => (&self.kh, self.canvas.width),
            Axis::Vertical => (&self.kv, self.canvas.height),
        };
        let mut bins = vec![czero(); m];
        for (&a, &z) in k.iter().zip(r) {
            bins[a as usize] = bins[a as usize] + z;
        }
        bins
    }

    /// `sum_i r_i conj(h_i^x v_i^y)` for every pixel of `win` (row-major within the window).
    pub fn to_pixels(&self, r: &[C<T>], win: Window) -> Vec<C<T>> {
        let (ww, hh) = (self.canvas.width, self.canvas.height);
        let grid = self.bin_2d(r);
        // partial[a * win.h + yy] = sum_b grid[a, b] conj(w_H^{b y})
        let mut partial = vec![czero::<T>(); ww * win.h];
        for a in 0..ww {
            let row = &grid[a * hh..(a + 1) * hh];
            for yy in 0..win.h {
                let y = (win.y0 + yy) % hh;
                let mut acc: C<T> = czero();
                let mut idx = 0usize;
                for &g in row {
                    acc = acc + g * self.roots_h[idx].conj();
                    idx += y;
                    if idx >= hh {
                        idx %= hh;
                    }
                }
                partial[a * win.h + yy] = acc;
            }
        }
        let mut out = vec![czero(); win.len()];
        for xx in 0..win.w {
            let x = (win.x0 + xx) % ww;
            let mut idx = 0usize;
            for a in 0..ww {
                let tw = self.roots_w[idx].conj();
                let col = &partial[a * win.h..(a + 1) * win.h];
                for yy in 0..win.h {
                    out[yy * win.w + xx] = out[yy * win.w + xx] + col[yy] * tw;
                }
                idx += x;
                if idx >= ww {
                    idx %= ww;
                }
            }
        }
        out
    }

    /// `sum_{x,y in win} img(x, y) h^x v^y`.
    pub fn from_pixels(&self, img: &[C<T>], win: Window) -> Vec<C<T>> {
        let (ww, hh) = (self.canvas.width, self.canvas.height);
        // partial[a * win.h + yy] = sum_xx img(xx, yy) w_W^{a x}
        let mut partial = vec![czero::<T>(); ww * win.h];
        for yy in 0..win.h {
            let row = &img[yy * win.w..(yy + 1) * win.w];
            if row.iter().all(|z| z.re == T::zero() && z.im == T::zero()) {
                continue;
            }
            for a in 0..ww {
                let mut acc: C<T> = czero();
                let mut idx = (a * (win.x0 % ww)) % ww;
                for &p in row {
                    acc = acc + p * self.roots_w[idx];
                    idx += a;
                    if idx >= ww {
                        idx -= ww;
                    }
                }
                partial[a * win.h + yy] = acc;
            }
        }
        let mut grid = vec![czero(); ww * hh];
        for a in 0..ww {
            let col = &partial[a * win.h..(a + 1) * win.h];
            for b in 0..hh {
                let mut acc: C<T> = czero();
                let mut idx = (b * (win.y0 % hh)) % hh;
                for &p in col {
                    acc = acc + p * self.roots_h[idx];
                    idx += b;
                    if idx >= hh {
                        idx -= hh;
                    }
                }
                grid[a * hh + b] = acc;
            }
        }
        self.kh
            .iter()
            .zip(&self.kv)
            .map(|(&a, &b)| grid[a as usize * hh + b as usize])
            .collect()
    }

    /// `sum_i r_i conj(axis_i^m)` for every `m` along the axis.
    fn axis_adjoint(&self, r: &[C<T>], axis: Axis) -> Vec<C<T>> {
        let bins = self.bin_axis(r, axis);
        let roots = self.axis_roots(axis);
        let m = roots.len();
        (0..m)
            .map(|x| {
                let mut acc: C<T> = czero();
                let mut idx = 0usize;
                for &b in &bins {
                    acc = acc + b * roots[idx].conj();
                    idx += x;
                    if idx >= m {
                        idx -= m;
                    }
                }
                acc
            })
            .collect()
    }

    /// `sum_m coeffs[m] axis^m`.
    fn axis_synth(&self, coeffs: &[C<T>], axis: Axis) -> Vec<C<T>> {
        let roots = self.axis_roots(axis);
        let m = roots.len();
        let table: Vec<C<T>> = (0..m)
            .map(|a| {
                let mut acc: C<T> = czero();
                let mut idx = 0usize;
                for &cf in coeffs {
                    acc = acc + cf * roots[idx];
                    idx += a;
                    if idx >= m {
                        idx -= m;
                    }
                }
                acc
            })
            .collect();
        let k = match axis {
            Axis::Horizontal => &self.kh,
            Axis::Vertical => &self.kv,
        };
        k.iter().map(|&a| table[a as usize]).collect()
    }

    fn axis_roots(&self, axis: Axis) -> &[C<T>] {
        match axis {
            Axis::Horizontal => &self.roots_w,
            Axis::Vertical => &self.roots_h,
        }
    }

    /// `h^x`, computed from the exponent table (exact root lookup).
    pub fn h_pow(&self, x: i64) -> Vec<C<T>> {
        let w = self.canvas.width as i64;
        let x = x.rem_euclid(w) as usize;
        self.kh
            .iter()
            .map(|&k| self.roots_w[(k as usize * x) % w as usize])
            .collect()
    }

    /// `v^y`.
    pub fn v_pow(&self, y: i64) -> Vec<C<T>> {
        let h = self.canvas.height as i64;
        let y = y.rem_euclid(h) as usize;
        self.kv
            .iter()
            .map(|&k| self.roots_h[(k as usize * y) % h as usize])
            .collect()
    }

    /// `h^x ⊙ v^y`.
    pub fn index_vector(&self, x: i64, y: i64) -> Vec<C<T>> {
        let (w, h) = (self.canvas.width, self.canvas.height);
        let x = x.rem_euclid(w as i64) as usize;
        let y = y.rem_euclid(h as i64) as usize;
        self.kh
            .iter()
            .zip(&self.kv)
            .map(|(&a, &b)| self.roots_w[(a as usize * x) % w] * self.roots_h[(b as usize * y) % h])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Random phasor base vectors plus the three color vectors.
#[derive(Debug, Clone)]
pub struct VfaBasis<T> {
    seed: u64,
    lattice: Arc<Lattice<T>>,
    h: Vec<C<T>>,
    v: Vec<C<T>>,
    colors: [Vec<C<T>>; 3],
}

impl<T: Real> VfaBasis<T> {
    pub fn n(&self) -> usize {
        self.lattice.n
    }

    pub fn canvas(&self) -> Canvas {
        self.lattice.canvas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lattice(&self) -> &Arc<Lattice<T>> {
        &self.lattice
    }

    pub fn h_base(&self) -> &[C<T>] {
        &self.h
    }

    pub fn v_base(&self) -> &[C<T>] {
        &self.v
    }

    /// Color vector `G_c`, `c` in `0..3`.
    pub fn color_vector(&self, channel: usize) -> &[C<T>] {
        &self.colors[channel]
    }

    pub fn index_vector(&self, x: i64, y: i64) -> Vec<C<T>> {
        self.lattice.index_vector(x, y)
    }

    /// Encodes a `W x H` grayscale image (row-major, `y` rows).
    pub fn encode_gray(&self, image: &[T]) -> Result<Vec<C<T>>> {
        let canvas = self.canvas();
        if image.len() != canvas.pixels() {
            return Err(Error::Dimension(format!(
                "image of {} pixels on a {}x{} canvas",
                image.len(),
                canvas.width,
                canvas.height
            )));
        }
        let img: Vec<C<T>> = image.iter().map(|&p| c(p, T::zero())).collect();
        Ok(self.lattice.from_pixels(&img, canvas.full_window()))
    }

    /// Encodes a `W x H x 3` image, channel-interleaved (`[r, g, b]` per pixel).
    pub fn encode_rgb(&self, image: &[T]) -> Result<Vec<C<T>>> {
        let canvas = self.canvas();
        if image.len() != 3 * canvas.pixels() {
            return Err(Error::Dimension(format!(
                "rgb image of {} values on a {}x{} canvas",
                image.len(),
                canvas.width,
                canvas.height
            )));
        }
        let mut out = vec![czero(); self.n()];
        for ch in 0..3 {
            let plane: Vec<T> = image.iter().skip(ch).step_by(3).copied().collect();
            if plane.iter().all(|&p| p == T::zero()) {
                continue;
            }
            let enc = self.encode_gray(&plane)?;
            for ((o, e), g) in out.iter_mut().zip(&enc).zip(&self.colors[ch]) {
                *o = *o + *e * *g;
            }
        }
        Ok(out)
    }

    /// Binary header: magic, n, W, H, seed. Vectors are regenerated from the seed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let canvas = self.canvas();
        let mut out = BASIS_MAGIC.to_vec();
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(canvas.width as u32).to_le_bytes());
        out.extend_from_slice(&(canvas.height as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 7 + 12 + 8 || &bytes[..7] != BASIS_MAGIC {
            return Err(Error::Format("not an RSVFA01 basis file".into()));
        }
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[19..27].try_into().unwrap());
        make_basis(u(7), Canvas::new(u(11), u(15)), seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Draws base phases from the roots of unity and random color phasors.
pub fn make_basis<T: Real>(n: usize, canvas: Canvas, seed: u64) -> Result<VfaBasis<T>> {
    if n == 0 || canvas.width == 0 || canvas.height == 0 {
        return Err(Error::Invalid(format!(
            "basis needs n >= 1 and a non-empty canvas, got n = {n}, {}x{}",
            canvas.width, canvas.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kh: Vec<u32> = (0..n).map(|_| rng.random_range(0..canvas.width as u32)).collect();
    let kv: Vec<u32> = (0..n).map(|_| rng.random_range(0..canvas.height as u32)).collect();
    let mut color = || -> Vec<C<T>> {
        (0..n)
            .map(|_| {
                let z = cis(2.0 * std::f64::consts::PI * rng.random::<f64>());
                c(T::of(z.re), T::of(z.im))
            })
            .collect()
    };
    let colors = [color(), color(), color()];
    let lattice = Arc::new(Lattice::new(canvas, kh, kv));
    let h = lattice.h_pow(1);
    let v = lattice.v_pow(1);
    Ok(VfaBasis {
        seed,
        lattice,
        h,
        v,
        colors,
    })
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())))
    }
}

/// Elementwise product.
pub fn bind<T: Real>(a: &[C<T>], b: &[C<T>]) -> Result<Vec<C<T>>> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// `a ⊙ conj(b)`.
pub fn unbind<T: Real>(a: &[C<T>], b: &[C<T>]) -> Result<Vec<C<T>>> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y.conj()).collect())
}

/// Normalized inner product `<a, b> / n = sum conj(a) b / n`.
pub fn similarity<T: Real>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    let s: C<T> = a.iter().zip(b).fold(czero(), |acc, (x, y)| acc + x.conj() * y);
    s / T::of_usize(a.len().max(1))
}

/// RGB colors as columns of a `3 x M` matrix.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[f64; 3]>,
}

impl Palette {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        self.colors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for Palette {
    /// The seven nonzero corners of the RGB cube.
    fn default() -> Self {
        let entries: [(&str, [f64; 3]); 7] = [
            ("red", [1.0, 0.0, 0.0]),
            ("green", [0.0, 1.0, 0.0]),
            ("blue", [0.0, 0.0, 1.0]),
            ("yellow", [1.0, 1.0, 0.0]),
            ("magenta", [1.0, 0.0, 1.0]),
            ("cyan", [0.0, 1.0, 1.0]),
            ("white", [1.0, 1.0, 1.0]),
        ];
        Self {
            names: entries.iter().map(|(n, _)| n.to_string()).collect(),
            colors: entries.iter().map(|(_, c)| *c).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    PositionH,
    PositionV,
    Shape,
    Color,
}

/// How coefficients are read out of a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// `A^H r / N`.
    Adjoint,
    /// Moore-Penrose pseudoinverse.
    Pseudoinverse,
}

#[derive(Debug, Clone)]
enum Atoms<T> {
    Axis(Axis),
    /// Atom `m` encodes the real image `pixels[m]` restricted to `win`.
    Images { win: Window, pixels: Vec<T> },
    /// Atom-major `M x N`.
    Dense(Vec<C<T>>),
}

/// A factor's atoms with a decode companion.
#[derive(Debug, Clone)]
pub struct Codebook<T> {
    kind: CodebookKind,
    m: usize,
    lattice: Arc<Lattice<T>>,
    atoms: Atoms<T>,
    rule: DecodeRule,
    whitened: bool,
    /// `M x M` map applied after the adjoint for the pseudoinverse rule.
    mix: Option<Vec<C<T>>>,
    /// `M x M` real atom overlaps (`Re(A^H A) / N`, or the feature-space equivalent).
    gram: Vec<T>,
}

impl<T: Real> Codebook<T> {
    /// Position codebook along one axis: atom `m` is `h^m` (or `v^m`).
    pub fn position(basis: &VfaBasis<T>, axis: Axis) -> Self {
        let lattice = basis.lattice.clone();
        let (m, kind) = match axis {
            Axis::Horizontal => (lattice.canvas.width, CodebookKind::PositionH),
            Axis::Vertical => (lattice.canvas.height, CodebookKind::PositionV),
        };
        // <axis^p, axis^q> / N depends on q - p only
        let counts = {
            let k = match axis {
                Axis::Horizontal => &lattice.kh,
                Axis::Vertical => &lattice.kv,
            };
            let mut cnt = vec![0usize; m];
            k.iter().for_each(|&a| cnt[a as usize] += 1);
            cnt
        };
        let roots = lattice.axis_roots(axis);
        let n = T::of_usize(lattice.n);
        let lag: Vec<T> = (0..m)
            .map(|d| {
                counts
                    .iter()
                    .enumerate()
                    .map(|(a, &cnt)| roots[(a * d) % m].re * T::of_usize(cnt))
                    .sum::<T>()
                    / n
            })
            .collect();
        let gram = (0..m * m).map(|i| lag[(i % m + m - i / m) % m]).collect();
        Self {
            kind,
            m,
            lattice,
            atoms: Atoms::Axis(axis),
            rule: DecodeRule::Adjoint,
            whitened: true,
            mix: None,
            gram,
        }
    }

    /// Image codebook: atom `m` is the encoding of image `m` over `win`.
    ///
    /// `pixels` holds `M` images of `win.len()` values each. Atom overlaps are
    /// taken from pixel-space inner products.
    pub fn from_images(
        basis: &VfaBasis<T>,
        kind: CodebookKind,
        win: Window,
        pixels: Vec<T>,
        rule: DecodeRule,
    ) -> Result<Self> {
        if win.is_empty() || !pixels.len().is_multiple_of(win.len()) || pixels.is_empty() {
            return Err(Error::Dimension("image atoms do not fit the window".into()));
        }
        let m = pixels.len() / win.len();
        let mut gram = vec![T::zero(); m * m];
        for i in 0..m {
            let a = &pixels[i * win.len()..(i + 1) * win.len()];
            for j in i..m {
                let b = &pixels[j * win.len()..(j + 1) * win.len()];
                let g: T = a.iter().zip(b).map(|(&p, &q)| p * q).sum();
                gram[i * m + j] = g;
                gram[j * m + i] = g;
            }
        }
        let whitened = is_identity(&gram, m, 1e-8);
        let mix = match rule {
            DecodeRule::Adjoint => None,
            DecodeRule::Pseudoinverse => Some(real_pinv(&gram, m)),
        };
        Ok(Self {
            kind,
            m,
            lattice: basis.lattice.clone(),
            atoms: Atoms::Images { win, pixels },
            rule,
            whitened,
            mix,
            gram,
        })
    }

    /// Codebook from explicit atoms (atom-major, `M x N`).
    pub fn from_dense(
        basis: &VfaBasis<T>,
        kind: CodebookKind,
        atoms: Vec<C<T>>,
        rule: DecodeRule,
    ) -> Result<Self> {
        let n = basis.n();
        if atoms.is_empty() || !atoms.len().is_multiple_of(n) {
            return Err(Error::Dimension(format!("{} values are not whole atoms of length {n}", atoms.len())));
        }
        let m = atoms.len() / n;
        let mut cgram = vec![czero::<T>(); m * m];
        for i in 0..m {
            for j in i..m {
                let s = similarity(&atoms[i * n..(i + 1) * n], &atoms[j * n..(j + 1) * n]);
                cgram[i * m + j] = s;
                cgram[j * m + i] = s.conj();
            }
        }
        let gram: Vec<T> = cgram.iter().map(|z| z.re).collect();
        let mix = match rule {
            DecodeRule::Adjoint => None,
            DecodeRule::Pseudoinverse => Some(complex_pinv(&cgram, m)),
        };
        Ok(Self {
            kind,
            m,
            lattice: basis.lattice.clone(),
            atoms: Atoms::Dense(atoms),
            rule,
            whitened: is_identity(&gram, m, 1e-8),
            mix,
            gram,
        })
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn n(&self) -> usize {
        self.lattice.n
    }

    pub fn rule(&self) -> DecodeRule {
        self.rule
    }

    pub fn is_whitened(&self) -> bool {
        self.whitened
    }

    /// `M x M` real overlaps, row-major.
    pub fn gram(&self) -> &[T] {
        &self.gram
    }

    /// Overlaps minus the identity, the lateral inhibition of sparse inference.
    pub fn gram_minus_identity(&self) -> Vec<T> {
        let mut g = self.gram.clone();
        for i in 0..self.m {
            g[i * self.m + i] = g[i * self.m + i] - T::one();
        }
        g
    }

    /// Real image behind atom `m`, for image codebooks.
    pub fn atom_image(&self, m: usize) -> Option<(Window, &[T])> {
        match &self.atoms {
            Atoms::Images { win, pixels } => Some((*win, &pixels[m * win.len()..(m + 1) * win.len()])),
            _ => None,
        }
    }

    pub fn atom(&self, m: usize) -> Vec<C<T>> {
        match &self.atoms {
            Atoms::Axis(Axis::Horizontal) => self.lattice.h_pow(m as i64),
            Atoms::Axis(Axis::Vertical) => self.lattice.v_pow(m as i64),
            Atoms::Images { win, pixels } => {
                let img: Vec<C<T>> = pixels[m * win.len()..(m + 1) * win.len()]
                    .iter()
                    .map(|&p| c(p, T::zero()))
                    .collect();
                self.lattice.from_pixels(&img, *win)
            }
            Atoms::Dense(a) => a[m * self.n()..(m + 1) * self.n()].to_vec(),
        }
    }

    /// `N x M` atom matrix, row-major.
    pub fn atoms_matrix(&self) -> Vec<C<T>> {
        let n = self.n();
        let mut out = vec![czero(); n * self.m];
        for m in 0..self.m {
            for (i, z) in self.atom(m).into_iter().enumerate() {
                out[i * self.m + m] = z;
            }
        }
        out
    }

    /// `M x N` decode matrix, row-major.
    pub fn decode_matrix(&self) -> Vec<C<T>> {
        let n = self.n();
        let inv_n = T::one() / T::of_usize(n);
        let mut adj = vec![czero(); self.m * n];
        for m in 0..self.m {
            for (i, z) in self.atom(m).into_iter().enumerate() {
                adj[m * n + i] = z.conj() * inv_n;
            }
        }
        match &self.mix {
            None => adj,
            Some(mix) => {
                let mut out = vec![czero(); self.m * n];
                for r in 0..self.m {
                    for k in 0..self.m {
                        let w = mix[r * self.m + k];
                        for i in 0..n {
                            out[r * n + i] = out[r * n + i] + w * adj[k * n + i];
                        }
                    }
                }
                out
            }
        }
    }

    /// `A^H r / N`.
    pub fn adjoint(&self, r: &[C<T>]) -> Vec<C<T>> {
        let inv_n = T::one() / T::of_usize(self.n());
        let raw = match &self.atoms {
            Atoms::Axis(axis) => self.lattice.axis_adjoint(r, *axis),
            Atoms::Images { win, pixels } => {
                let field = self.lattice.to_pixels(r, *win);
                pixels
                    .chunks_exact(win.len())
                    .map(|img| {
                        img.iter()
                            .zip(&field)
                            .fold(czero(), |acc, (&p, &f)| acc + f * p)
                    })
                    .collect()
            }
            Atoms::Dense(a) => a
                .chunks_exact(self.n())
                .map(|atom| atom.iter().zip(r).fold(czero(), |acc, (x, y)| acc + x.conj() * y))
                .collect(),
        };
        raw.into_iter().map(|z| z * inv_n).collect()
    }

    /// Coefficients under the codebook's decode rule.
    pub fn decode(&self, r: &[C<T>]) -> Vec<C<T>> {
        let adj = self.adjoint(r);
        match &self.mix {
            None => adj,
            Some(mix) => mat_vec(mix, &adj, self.m),
        }
    }

    /// `A coeffs`.
    pub fn encode(&self, coeffs: &[C<T>]) -> Vec<C<T>> {
        match &self.atoms {
            Atoms::Axis(axis) => self.lattice.axis_synth(coeffs, *axis),
            Atoms::Images { win, pixels } => {
                let mut img = vec![czero(); win.len()];
                for (atom, &cf) in pixels.chunks_exact(win.len()).zip(coeffs) {
                    if cf.re == T::zero() && cf.im == T::zero() {
                        continue;
                    }
                    for (o, &p) in img.iter_mut().zip(atom) {
                        *o = *o + cf * p;
                    }
                }
                self.lattice.from_pixels(&img, *win)
            }
            Atoms::Dense(a) => {
                let n = self.n();
                let mut out = vec![czero(); n];
                for (atom, &cf) in a.chunks_exact(n).zip(coeffs) {
                    for (o, &z) in out.iter_mut().zip(atom) {
                        *o = *o + cf * z;
                    }
                }
                out
            }
        }
    }

    /// `A x` for real coefficients.
    pub fn encode_real(&self, coeffs: &[T]) -> Vec<C<T>> {
        let cx: Vec<C<T>> = coeffs.iter().map(|&x| c(x, T::zero())).collect();
        self.encode(&cx)
    }
}

fn is_identity<T: Real>(g: &[T], m: usize, tol: f64) -> bool {
    (0..m).all(|i| {
        (0..m).all(|j| {
            let e = if i == j { 1.0 } else { 0.0 };
            (g[i * m + j].to_f() - e).abs() < tol
        })
    })
}

fn mat_vec<T: Real>(a: &[C<T>], x: &[C<T>], m: usize) -> Vec<C<T>> {
    a.chunks_exact(m)
        .map(|row| row.iter().zip(x).fold(czero(), |acc, (p, q)| acc + p * q))
        .collect()
}

fn real_pinv<T: Real>(g: &[T], m: usize) -> Vec<C<T>> {
    let gf: Vec<f64> = g.iter().map(|v| v.to_f()).collect();
    crate::linalg::pinv(m, m, &gf)
        .into_iter()
        .map(|v| c(T::of(v), T::zero()))
        .collect()
}

fn complex_pinv<T: Real>(g: &[C<T>], m: usize) -> Vec<C<T>> {
    let mat = DMatrix::from_fn(m, m, |i, j| {
        let z = g[i * m + j];
        Complex::new(z.re.to_f(), z.im.to_f())
    });
    let p = mat
        .pseudo_inverse(1e-10)
        .unwrap_or_else(|_| DMatrix::zeros(m, m));
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            out.push(c(T::of(p[(i, j)].re), T::of(p[(i, j)].im)));
        }
    }
    out
}

/// Options for [`build_codebooks`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CodebookOptions {
    /// Unit-norm palette columns with adjoint decode; otherwise raw columns
    /// with pseudoinverse decode.
    pub whiten_colors: bool,
    /// Adds one shape atom for the part of the training mean the features miss.
    pub mean_atom: bool,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        Self {
            whiten_colors: true,
            mean_atom: true,
        }
    }
}

/// The four factor codebooks of the generative model.
#[derive(Debug, Clone)]
pub struct Codebooks<T> {
    pub shape: Codebook<T>,
    pub color: Codebook<T>,
    pub pos_h: Codebook<T>,
    pub pos_v: Codebook<T>,
    pub palette: Palette,
    /// Number of learned features; shape atoms beyond this are auxiliary.
    pub n_features: usize,
    /// Index of the mean-residual shape atom, if present.
    pub mean_atom: Option<usize>,
    /// Training mean expressed in shape coefficients.
    pub mean_coeffs: Vec<T>,
    /// Unnormalized color vectors `G b_m` of the generative model.
    pub generative_colors: Vec<Vec<C<T>>>,
}

impl<T: Real> Codebooks<T> {
    pub fn canvas(&self) -> Canvas {
        self.shape.lattice.canvas
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }
}

/// Builds shape, color, and position codebooks.
///
/// The 784-pixel features are placed at the canvas center before encoding.
pub fn build_codebooks<T: Real>(
    basis: &VfaBasis<T>,
    dict: &SparseDictionary<T>,
    palette: &Palette,
    opts: CodebookOptions,
) -> Result<Codebooks<T>> {
    let canvas = basis.canvas();
    if dict.rows() != SIDE * SIDE {
        return Err(Error::Dimension(format!("dictionary rows {} != 784", dict.rows())));
    }
    if canvas.width < SIDE || canvas.height < SIDE {
        return Err(Error::Dimension(format!(
            "canvas {}x{} smaller than a digit",
            canvas.width, canvas.height
        )));
    }
    if palette.is_empty() {
        return Err(Error::Invalid("empty palette".into()));
    }
    let k = dict.k();
    let win = canvas.digit_window();
    let mut pixels = Vec::with_capacity((k + 1) * win.len());
    for j in 0..k {
        pixels.extend(dict.feature(j));
    }
    let mut mean_coeffs = dict.coefficients(dict.mean());
    let mut mean_atom = None;
    if opts.mean_atom {
        let approx = dict.synthesize(&mean_coeffs);
        let resid: Vec<T> = dict.mean().iter().zip(&approx).map(|(&m, &a)| m - a).collect();
        let norm = resid.iter().map(|&r| r * r).sum::<T>().sqrt();
        if norm.to_f() > 1e-9 {
            mean_atom = Some(k);
            pixels.extend(resid.iter().map(|&r| r / norm));
            mean_coeffs.push(norm);
        }
    }
    let shape_rule = if dict.is_orthogonal() {
        DecodeRule::Adjoint
    } else {
        DecodeRule::Pseudoinverse
    };
    let shape = Codebook::from_images(basis, CodebookKind::Shape, win, pixels, shape_rule)?;

    let mut color_atoms = Vec::with_capacity(palette.len() * basis.n());
    let mut generative_colors = Vec::with_capacity(palette.len());
    for col in &palette.colors {
        generative_colors.push(
            (0..basis.n())
                .map(|i| {
                    (0..3).fold(czero::<T>(), |acc, ch| acc + basis.colors[ch][i] * T::of(col[ch]))
                })
                .collect(),
        );
        let norm = if opts.whiten_colors {
            col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
        } else {
            1.0
        };
        let w: Vec<T> = col.iter().map(|&v| T::of(v / norm)).collect();
        for i in 0..basis.n() {
            let z = basis.colors[0][i] * w[0] + basis.colors[1][i] * w[1] + basis.colors[2][i] * w[2];
            color_atoms.push(z);
        }
    }
    let color_rule = if opts.whiten_colors {
        DecodeRule::Adjoint
    } else {
        DecodeRule::Pseudoinverse
    };
    let color = Codebook::from_dense(basis, CodebookKind::Color, color_atoms, color_rule)?;

    Ok(Codebooks {
        shape,
        color,
        pos_h: Codebook::position(basis, Axis::Horizontal),
        pos_v: Codebook::position(basis, Axis::Vertical),
        palette: palette.clone(),
        n_features: k,
        mean_atom,
        mean_coeffs,
        generative_colors,
    })
}

/// Real part of the decoded coefficients.
pub fn decode_similarities<T: Real>(cb: &Codebook<T>, r: &[C<T>]) -> Result<Vec<T>> {
    if r.len() != cb.n() {
        return Err(Error::Dimension(format!("vector of length {} for codebook of dimension {}", r.len(), cb.n())));
    }
    Ok(cb.decode(r).into_iter().map(|z| z.re).collect())
}

/// Toroidal shift of a `W x H` image (row-major) by `(dx, dy)`.
pub fn shift_image<T: Copy>(img: &[T], canvas: Canvas, dx: i64, dy: i64) -> Vec<T> {
    let (w, h) = (canvas.width, canvas.height);
    let mut out = img.to_vec();
    for y in 0..h {
        for x in 0..w {
            let nx = canvas.wrap_x(x as i64 + dx);
            let ny = canvas.wrap_y(y as i64 + dy);
            out[ny * w + nx] = img[y * w + x];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[C<f64>], b: &[C<f64>], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn roots_of_unity() {
        let b = make_basis::<f64>(500, Canvas::new(13, 9), 1).unwrap();
        assert!(b.index_vector(13, 9).iter().all(|z| *z == c(1.0, 0.0)));
        for (h, v) in b.h_base().iter().zip(b.v_base()) {
            assert!((h.norm() - 1.0).abs() < 1e-14 && (v.norm() - 1.0).abs() < 1e-14);
            assert!((h.powi(13) - c(1.0, 0.0)).norm() < 1e-12);
            assert!((v.powi(9) - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn index_vector_algebra() {
        let b = make_basis::<f64>(300, Canvas::new(10, 7), 2).unwrap();
        assert!(b.index_vector(0, 0).iter().all(|z| *z == c(1.0, 0.0)));
        assert_eq!(b.index_vector(3 + 10, 2), b.index_vector(3, 2));
        let prod = bind(&b.index_vector(3, 5), &b.index_vector(4, 6)).unwrap();
        assert!(close(&prod, &b.index_vector(7, 11), 1e-12));
    }

    #[test]
    fn encode_single_pixels() {
        let canvas = Canvas::new(8, 6);
        let b = make_basis::<f64>(200, canvas, 3).unwrap();
        let mut img = vec![0.0; canvas.pixels()];
        img[0] = 1.0;
        assert!(close(&b.encode_gray(&img).unwrap(), &vec![c(1.0, 0.0); 200], 1e-12));
        let mut img = vec![0.0; canvas.pixels()];
        img[4 * 8 + 3] = 0.5;
        let want: Vec<C<f64>> = b.index_vector(3, 4).iter().map(|z| z * 0.5).collect();
        assert!(close(&b.encode_gray(&img).unwrap(), &want, 1e-12));
        assert!(b.encode_gray(&[0.0; 5]).is_err());
    }

    #[test]
    fn encode_rgb_white_origin() {
        let canvas = Canvas::new(5, 5);
        let b = make_basis::<f64>(100, canvas, 4).unwrap();
        let mut img = vec![0.0; 3 * canvas.pixels()];
        img[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let want: Vec<C<f64>> = (0..100)
            .map(|i| b.color_vector(0)[i] + b.color_vector(1)[i] + b.color_vector(2)[i])
            .collect();
        assert!(close(&b.encode_rgb(&img).unwrap(), &want, 1e-12));
    }

    #[test]
    fn adjoint_matches_dense() {
        let canvas = Canvas::new(30, 29);
        let b = make_basis::<f64>(400, canvas, 5).unwrap();
        let win = canvas.digit_window();
        let pixels: Vec<f64> = (0..3 * win.len()).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let cb = Codebook::from_images(&b, CodebookKind::Shape, win, pixels, DecodeRule::Adjoint).unwrap();
        let r: Vec<C<f64>> = (0..400).map(|i| cis(i as f64 * 0.37) * (1.0 + (i % 3) as f64)).collect();
        let fast = cb.adjoint(&r);
        for m in 0..3 {
            let dense = similarity(&cb.atom(m), &r);
            assert!((fast[m] - dense).norm() < 1e-9);
        }
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let pc = Codebook::position(&b, axis);
            let fast = pc.adjoint(&r);
            for m in 0..pc.len() {
                assert!((fast[m] - similarity(&pc.atom(m), &r)).norm() < 1e-9);
            }
            let coeffs: Vec<C<f64>> = (0..pc.len()).map(|i| c(i as f64, 1.0)).collect();
            let enc = pc.encode(&coeffs);
            let mut want = vec![czero(); 400];
            for m in 0..pc.len() {
                for (w, a) in want.iter_mut().zip(pc.atom(m)) {
                    *w += a * coeffs[m];
                }
            }
            assert!(close(&enc, &want, 1e-9));
        }
    }

    #[test]
    fn basis_persistence() {
        let b = make_basis::<f64>(64, Canvas::new(12, 14), 99).unwrap();
        let back = VfaBasis::<f64>::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back.h_base(), b.h_base());
        assert_eq!(back.color_vector(2), b.color_vector(2));
        assert!(VfaBasis::<f64>::from_bytes(b"RSVFA02").is_err());
    }

    #[test]
    fn cyan_is_green_plus_blue() {
        let p = Palette::default();
        assert_eq!(p.color(p.index_of("cyan").unwrap()), [0.0, 1.0, 1.0]);
        assert_eq!(p.len(), 7);
    }
}
