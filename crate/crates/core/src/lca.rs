//! Locally competitive sparse inference inside a resonator module.

use crate::error::{Error, Result};
use crate::resonator::FMode;
use crate::scalar::{Real, C};
use crate::vfa::Codebook;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LcaParams {
    pub lambda: f64,
    pub delta: f64,
    /// One-sided threshold for nonnegative dictionaries.
    pub nonnegative: bool,
}

impl Default for LcaParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            delta: 0.05,
            nonnegative: false,
        }
    }
}

impl LcaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Invalid(format!("LCA timestep {} outside (0, 1)", self.delta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid(format!("LCA threshold {} is negative", self.lambda)));
        }
        Ok(())
    }
}

/// Internal potentials `u` and thresholded outputs `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcaState<T> {
    pub u: Vec<T>,
    pub x: Vec<T>,
    pub lambda: T,
    pub delta: T,
    pub nonnegative: bool,
}

impl<T: Real> LcaState<T> {
    pub fn zeros(k: usize, params: LcaParams) -> Self {
        Self {
            u: vec![T::zero(); k],
            x: vec![T::zero(); k],
            lambda: T::of(params.lambda),
            delta: T::of(params.delta),
            nonnegative: params.nonnegative,
        }
    }

    /// State whose output is exactly `x0` (potentials placed just past threshold).
    pub fn from_output(x0: &[T], params: LcaParams) -> Self {
        let mut s = Self::zeros(x0.len(), params);
        for (u, &x) in s.u.iter_mut().zip(x0) {
            *u = if x == T::zero() { T::zero() } else { x + s.lambda * x.signum() };
        }
        s.x = soft_threshold(&s.u, s.lambda, s.nonnegative);
        s
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// One leaky-integration step toward `drive - gram x`, then threshold.
    ///
    /// `gram` is the `K x K` overlap matrix with the identity removed.
    pub fn update(&mut self, drive: &[T], gram: &[T]) {
        let k = self.u.len();
        let inhib = competition(gram, &self.x, k);
        let keep = T::one() - self.delta;
        for i in 0..k {
            self.u[i] = keep * self.u[i] + self.delta * (drive[i] - inhib[i]);
        }
        self.x = soft_threshold(&self.u, self.lambda, self.nonnegative);
    }

    /// `||u - (drive - gram x)||_inf`; zero at a fixed point.
    pub fn fixed_point_residual(&self, drive: &[T], gram: &[T]) -> T {
        let inhib = competition(gram, &self.x, self.u.len());
        self.u
            .iter()
            .zip(drive)
            .zip(&inhib)
            .map(|((&u, &b), &g)| (u - (b - g)).abs())
            .fold(T::zero(), T::max)
    }
}

fn competition<T: Real>(gram: &[T], x: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k];
    for (j, &xj) in x.iter().enumerate() {
        if xj == T::zero() {
            continue;
        }
        for (o, &g) in out.iter_mut().zip(&gram[j * k..(j + 1) * k]) {
            *o = *o + g * xj;
        }
    }
    out
}

/// `x = sign(u) max(|u| - lambda, 0)`; the one-sided form zeroes negative potentials.
pub fn soft_threshold<T: Real>(u: &[T], lambda: T, nonnegative: bool) -> Vec<T> {
    u.iter()
        .map(|&v| {
            if nonnegative {
                (v - lambda).max(T::zero())
            } else if v.abs() <= lambda {
                T::zero()
            } else {
                v - lambda * v.signum()
            }
        })
        .collect()
}

/// Free-standing form of [`LcaState::fixed_point_residual`].
pub fn lca_fixed_point_residual<T: Real>(state: &LcaState<T>, drive: &[T], gram: &[T]) -> T {
    state.fixed_point_residual(drive, gram)
}

/// One LCA module update: drive from the unbound scene, threshold, re-encode.
///
/// `others` is the bound product of the other modules' estimates. Returns the
/// new shape estimate `f(D x)`.
pub fn lca_step<T: Real>(
    state: &mut LcaState<T>,
    s: &[C<T>],
    others: &[C<T>],
    codebook: &Codebook<T>,
    gram: &[T],
    f: FMode,
) -> Result<Vec<C<T>>> {
    let n = codebook.n();
    if s.len() != n || others.len() != n {
        return Err(Error::Dimension(format!(
            "scene {} / others {} for codebook dimension {n}",
            s.len(),
            others.len()
        )));
    }
    if state.len() != codebook.len() || gram.len() != state.len() * state.len() {
        return Err(Error::Dimension("LCA state does not match the codebook".into()));
    }
    let unbound: Vec<C<T>> = s.iter().zip(others).map(|(a, b)| a * b.conj()).collect();
    let drive = lca_drive(codebook, &unbound);
    state.update(&drive, gram);
    Ok(f.apply(codebook.encode_real(&state.x)))
}

/// Real part of the adjoint decode.
pub fn lca_drive<T: Real>(codebook: &Codebook<T>, unbound: &[C<T>]) -> Vec<T> {
    codebook.adjoint(unbound).into_iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_two_sided_and_one_sided() {
        let u = [0.5, -0.05, -0.3, 0.1];
        assert_eq!(soft_threshold(&u, 0.1, false), vec![0.4, 0.0, -0.19999999999999998, 0.0]);
        assert_eq!(soft_threshold(&u, 0.1, true), vec![0.4, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn orthonormal_converges_to_thresholded_drive() {
        let drive = [0.8, -0.4, 0.05, 0.0, -1.3];
        let gram = vec![0.0; 25];
        let mut st = LcaState::<f64>::zeros(5, LcaParams::default());
        let mut last = f64::INFINITY;
        let mut rises = 0;
        for _ in 0..500 {
            st.update(&drive, &gram);
            let r = st.fixed_point_residual(&drive, &gram);
            if r > last {
                rises += 1;
            }
            last = r;
        }
        assert_eq!(rises, 0);
        let want = soft_threshold(&drive, 0.1, false);
        for i in 0..5 {
            assert!((st.u[i] - drive[i]).abs() < 1e-6);
            assert!((st.x[i] - want[i]).abs() < 1e-6);
        }
        assert!(st.fixed_point_residual(&drive, &gram) < 1e-8);
    }

    #[test]
    fn fresh_state_residual_is_drive_norm() {
        let st = LcaState::<f64>::zeros(3, LcaParams::default());
        assert_eq!(st.fixed_point_residual(&[0.2, -0.7, 0.1], &[0.0; 9]), 0.7);
    }

    #[test]
    fn zero_lambda_is_leaky_decode() {
        let p = LcaParams { lambda: 0.0, ..LcaParams::default() };
        let mut st = LcaState::<f64>::zeros(2, p);
        st.update(&[1.0, -2.0], &[0.0; 4]);
        assert_eq!(st.x, st.u);
        assert!((st.u[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn one_step_change_bounded_by_delta() {
        let p = LcaParams::default();
        let mut st = LcaState::<f64>::from_output(&[0.3, 0.0, -0.2], p);
        let gram = [0.0, 0.2, -0.1, 0.2, 0.0, 0.3, -0.1, 0.3, 0.0];
        let drive = [1.0, -0.5, 0.25];
        let before = st.clone();
        let inhib = competition(&gram, &st.x, 3);
        let bound = (0..3)
            .map(|i| (drive[i] - inhib[i] - st.u[i]).abs())
            .fold(0.0, f64::max)
            * p.delta;
        st.update(&drive, &gram);
        for i in 0..3 {
            assert!((st.u[i] - before.u[i]).abs() <= bound + 1e-15);
        }
    }
}
