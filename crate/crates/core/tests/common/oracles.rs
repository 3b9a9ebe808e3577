//! Reference solvers shared by the oracle tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use scene_factor::features::{fast_ica_components, whiten_rows, IcaParams, PcaModel};
use scene_factor::lca::{LcaParams, LcaState};

pub const ROWS: usize = 24;
pub const ATOMS: usize = 10;

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Unit-norm, correlated atoms: random columns pulled toward a shared direction.
/// Row-major `ROWS x ATOMS`.
pub fn dictionary(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let common: Vec<f64> = (0..ROWS).map(|_| gauss(rng)).collect();
    let mut phi = vec![0.0; ROWS * ATOMS];
    for c in 0..ATOMS {
        let mix: f64 = rng.random_range(0.1..0.4);
        let col: Vec<f64> = (0..ROWS)
            .map(|r| gauss(rng) * (1.0 - mix) + mix * common[r])
            .collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for r in 0..ROWS {
            phi[r * ATOMS + c] = col[r] / norm;
        }
    }
    phi
}

fn column_dot(phi: &[f64], i: usize, v: &[f64]) -> f64 {
    (0..ROWS).map(|r| phi[r * ATOMS + i] * v[r]).sum()
}

/// Cyclic coordinate descent on `0.5 ||y - Phi a||^2 + lambda ||a||_1`.
pub fn lasso_cd(phi: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
    let mut a = vec![0.0; ATOMS];
    let mut resid = y.to_vec();
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for i in 0..ATOMS {
            let rho = column_dot(phi, i, &resid) + a[i];
            let new = if rho.abs() <= lambda { 0.0 } else { rho - lambda * rho.signum() };
            let d = new - a[i];
            if d != 0.0 {
                for r in 0..ROWS {
                    resid[r] -= d * phi[r * ATOMS + i];
                }
                a[i] = new;
            }
            change = change.max(d.abs());
        }
        if change < 1e-15 {
            break;
        }
    }
    a
}

fn gram_minus_identity(phi: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; ATOMS * ATOMS];
    for i in 0..ATOMS {
        for j in 0..ATOMS {
            if i != j {
                g[i * ATOMS + j] = (0..ROWS).map(|r| phi[r * ATOMS + i] * phi[r * ATOMS + j]).sum();
            }
        }
    }
    g
}

/// Runs the LCA until its fixed-point residual vanishes.
pub fn lca_fixed_point(phi: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
    let drive: Vec<f64> = (0..ATOMS).map(|i| column_dot(phi, i, y)).collect();
    let gram = gram_minus_identity(phi);
    let params = LcaParams {
        lambda,
        delta: 0.1,
        nonnegative: false,
    };
    let mut st = LcaState::<f64>::zeros(ATOMS, params);
    for _ in 0..200_000 {
        st.update(&drive, &gram);
        if st.fixed_point_residual(&drive, &gram) < 1e-13 {
            break;
        }
    }
    st.x
}

/// Largest per-coefficient gap between the LCA and the lasso on one random problem.
pub fn lca_lasso_gap(trial: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
    let phi = dictionary(&mut rng);
    let truth: Vec<f64> = (0..ATOMS)
        .map(|_| if rng.random::<f64>() < 0.4 { rng.random_range(-2.0..2.0) } else { 0.0 })
        .collect();
    let y: Vec<f64> = (0..ROWS)
        .map(|r| {
            let clean: f64 = (0..ATOMS).map(|c| phi[r * ATOMS + c] * truth[c]).sum();
            clean + 0.05 * gauss(&mut rng)
        })
        .collect();
    let lambda = rng.random_range(0.05..0.3);
    let want = lasso_cd(&phi, &y, lambda);
    let got = lca_fixed_point(&phi, &y, lambda);
    got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
}

/// Mixes a uniform and a Laplace source, unmixes them, and returns the
/// smaller |correlation| of the best source matching.
pub fn ica_two_source_recovery(seed: u64) -> f64 {
    const SAMPLES: usize = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s1: Vec<f64> = (0..SAMPLES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let exp = Exp::new(1.0).unwrap();
    let s2: Vec<f64> = (0..SAMPLES)
        .map(|_| {
            let v: f64 = exp.sample(&mut rng);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    let a: [[f64; 2]; 2] = [
        [rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0)],
        [rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5)],
    ];
    let rows: Vec<f64> = (0..SAMPLES)
        .flat_map(|t| [a[0][0] * s1[t] + a[0][1] * s2[t], a[1][0] * s1[t] + a[1][1] * s2[t]])
        .collect();
    let pca = PcaModel::fit_rows(&rows, 2, 2).unwrap();
    let white = whiten_rows(&pca, &rows).unwrap();
    let un = fast_ica_components(white.components(), 2, seed, IcaParams::default()).unwrap();
    let est: Vec<Vec<f64>> = (0..2)
        .map(|i| {
            (0..SAMPLES)
                .map(|t| {
                    let z = white.component_row(t);
                    un.w[i * 2] * z[0] + un.w[i * 2 + 1] * z[1]
                })
                .collect()
        })
        .collect();
    let direct = correlation(&est[0], &s1).abs().min(correlation(&est[1], &s2).abs());
    let swapped = correlation(&est[0], &s2).abs().min(correlation(&est[1], &s1).abs());
    direct.max(swapped)
}
