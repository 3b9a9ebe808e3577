#![allow(dead_code)]

pub mod oracles;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scene_factor::features::{Provenance, SparseDictionary};
use scene_factor::mnist::{DigitSet, Split, PIXELS, SIDE};

/// Gaussian blob stroke on the 28x28 grid.
fn blob(cx: f64, cy: f64, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; PIXELS];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            out[y * SIDE + x] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    out
}

/// Orthonormal dictionary of `k` smooth random features plus a ring-shaped mean.
pub fn synthetic_dictionary(k: usize, seed: u64) -> SparseDictionary<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::<f64>::zeros(PIXELS, k);
    for c in 0..k {
        let mut col = vec![0.0; PIXELS];
        for _ in 0..3 {
            let b = blob(rng.random_range(7.0..21.0), rng.random_range(7.0..21.0), rng.random_range(1.5..3.0));
            let w: f64 = rng.random_range(-1.0..1.0);
            for (o, v) in col.iter_mut().zip(b) {
                *o += w * v;
            }
        }
        m.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let q = m.qr().q();
    let mut features = vec![0.0; PIXELS * k];
    for r in 0..PIXELS {
        for c in 0..k {
            features[r * k + c] = q[(r, c)];
        }
    }
    let mean: Vec<f64> = (0..PIXELS)
        .map(|i| {
            let (x, y) = ((i % SIDE) as f64 - 13.5, (i / SIDE) as f64 - 13.5);
            let r = (x * x + y * y).sqrt();
            0.3 * (-(r - 7.0).powi(2) / 8.0).exp()
        })
        .collect();
    SparseDictionary::from_parts(PIXELS, k, features, mean, true, Provenance::PcaIca).unwrap()
}

/// Digits `clamp(mean + F c)` with sparse random coefficients.
pub fn synthetic_digits(dict: &SparseDictionary<f64>, n: usize, seed: u64) -> DigitSet<f64> {
    synthetic_split(dict, n, seed, Split::Test)
}

pub fn synthetic_split(dict: &SparseDictionary<f64>, n: usize, seed: u64, split: Split) -> DigitSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = dict.k();
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = vec![0.0; k];
        for _ in 0..3 {
            c[rng.random_range(0..k)] = rng.random_range(2.0..4.0);
        }
        images.extend(dict.synthesize(&c).iter().zip(dict.mean()).map(|(f, m)| (f + m).clamp(0.0, 1.0)));
        labels.push((i % 10) as u8);
    }
    DigitSet::new(images, labels, split).unwrap()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
