//! Four-module resonator network: color, shape, vertical and horizontal position.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lca::{lca_drive, LcaParams, LcaState};
use crate::scalar::{c, cis, czero, Real, C};
use crate::vfa::{Codebook, Codebooks};

/// Output nonlinearity `f` applied after re-encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FMode {
    /// `z / |z|`, with `|z| < 1e-12` mapped to `1`.
    Phasor,
    /// Whole-vector rescale to norm `sqrt(N)`; a zero vector maps to all ones.
    L2norm,
}

impl FMode {
    pub fn apply<T: Real>(self, mut v: Vec<C<T>>) -> Vec<C<T>> {
        let eps = T::of(1e-12);
        match self {
            FMode::Phasor => {
                for z in v.iter_mut() {
                    let m = z.norm();
                    *z = if m < eps { c(T::one(), T::zero()) } else { *z / m };
                }
            }
            FMode::L2norm => {
                let norm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
                if norm < eps {
                    v.iter_mut().for_each(|z| *z = c(T::one(), T::zero()));
                } else {
                    let scale = T::of_usize(v.len()).sqrt() / norm;
                    v.iter_mut().for_each(|z| *z = *z * scale);
                }
            }
        }
        v
    }
}

/// Coefficient nonlinearity `g` applied between decode and re-encode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GMode {
    Identity,
    /// `a -> |a|^p e^{i arg a}`.
    SignedPower { p: f64 },
}

impl GMode {
    pub fn apply<T: Real>(self, a: &mut [C<T>]) {
        if let GMode::SignedPower { p } = self {
            let p1 = T::of(p - 1.0);
            for z in a.iter_mut() {
                let m = z.norm();
                if m > T::zero() {
                    *z = *z * m.powf(p1);
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            GMode::SignedPower { p } if !(p >= 1.0) => {
                Err(Error::Invalid(format!("signed power {p} must be >= 1")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeModule {
    /// Decode, `g`, re-encode, `f`.
    Conventional,
    /// Sparse inference with lateral inhibition.
    Lca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeInit {
    /// Shape coefficients start at the training mean.
    MeanPrior,
    /// Same perturbed superposition as the other modules.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Every module reads the time-t estimates.
    Simultaneous,
    /// Horizontal, vertical, color, shape, each reading the newest values.
    Sequential,
}

/// Which explanations a parallel network subtracts from its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainOrder {
    /// Every other network's.
    Symmetric,
    /// Only those of lower-numbered networks, so ties between networks cannot persist.
    Ordered,
    /// Every other network's newest: this frame's for lower-numbered networks,
    /// the previous frame's for the rest.
    GaussSeidel,
}

/// Where the shape coefficients of an explanation come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSource {
    /// LCA outputs rescaled by the mean magnitude of the snapped color vector.
    LcaOutput,
    /// Decode of the scene unbound by the snapped position and color atoms.
    SnappedDecode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Color,
    Shape,
    Vertical,
    Horizontal,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Color, Module::Shape, Module::Vertical, Module::Horizontal];

    pub fn name(self) -> &'static str {
        match self {
            Module::Color => "color",
            Module::Shape => "shape",
            Module::Vertical => "vertical",
            Module::Horizontal => "horizontal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ResonatorConfig {
    /// `f` of the position and color modules.
    pub f_mode: FMode,
    /// `f` of the shape module.
    pub shape_f_mode: FMode,
    /// `g` of the position modules.
    pub g_mode: GMode,
    pub color_g_mode: GMode,
    /// `g` of a conventional shape module.
    pub shape_g_mode: GMode,
    pub shape_module: ShapeModule,
    pub shape_init: ShapeInit,
    pub lca: LcaParams,
    pub max_iters: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub n_parallel: usize,
    /// Fraction of an explanation subtracted; `None` picks 1.0 serial, 0.5 parallel.
    pub explain_gain: Option<f64>,
    pub parallel_explain: ExplainOrder,
    pub update: UpdateOrder,
    /// Rotate position and color coefficients so the largest one is real positive.
    pub canonical_phase: bool,
    pub explanation: ShapeSource,
    /// Keep every iteration's coefficients for waterfall output.
    pub record_history: bool,
}

impl Default for ResonatorConfig {
    fn default() -> Self {
        Self {
            f_mode: FMode::Phasor,
            shape_f_mode: FMode::L2norm,
            g_mode: GMode::SignedPower { p: 3.0 },
            color_g_mode: GMode::Identity,
            shape_g_mode: GMode::Identity,
            shape_module: ShapeModule::Lca,
            shape_init: ShapeInit::MeanPrior,
            lca: LcaParams::default(),
            max_iters: 100,
            convergence_window: 5,
            convergence_tol: 1e-3,
            n_parallel: 3,
            explain_gain: None,
            parallel_explain: ExplainOrder::Symmetric,
            update: UpdateOrder::Simultaneous,
            canonical_phase: true,
            explanation: ShapeSource::SnappedDecode,
            record_history: false,
        }
    }
}

impl ResonatorConfig {
    /// Settings for one iteration per video frame: a slower shape module,
    /// linear position similarities, cubic color sharpening, and explanations
    /// exchanged as soon as each network has stepped.
    pub fn tracking() -> Self {
        Self {
            g_mode: GMode::Identity,
            color_g_mode: GMode::SignedPower { p: 3.0 },
            lca: LcaParams {
                delta: 0.02,
                ..LcaParams::default()
            },
            explain_gain: Some(0.75),
            parallel_explain: ExplainOrder::GaussSeidel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if self.convergence_window == 0 {
            return Err(Error::Invalid("convergence window must be at least 1".into()));
        }
        if let Some(g) = self.explain_gain {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Invalid(format!("explain gain {g} outside [0, 1]")));
            }
        }
        self.g_mode.validate()?;
        self.color_g_mode.validate()?;
        self.shape_g_mode.validate()?;
        self.lca.validate()
    }

    pub fn serial_gain(&self) -> f64 {
        self.explain_gain.unwrap_or(1.0)
    }

    pub fn parallel_gain(&self) -> f64 {
        self.explain_gain.unwrap_or(0.5)
    }
}

/// Real similarities of every module at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T> {
    pub color: Vec<T>,
    pub shape: Vec<T>,
    pub vertical: Vec<T>,
    pub horizontal: Vec<T>,
}

impl<T: Real> Coefficients<T> {
    pub fn get(&self, m: Module) -> &[T] {
        match m {
            Module::Color => &self.color,
            Module::Shape => &self.shape,
            Module::Vertical => &self.vertical,
            Module::Horizontal => &self.horizontal,
        }
    }
}

/// Argmaxes after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Argmaxes {
    pub color: usize,
    /// Largest-magnitude learned feature (auxiliary atoms excluded).
    pub shape: usize,
    pub vertical: usize,
    pub horizontal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepTrace {
    pub argmax: Argmaxes,
    /// Cosine between this and the previous shape coefficient vector.
    pub shape_cosine: f64,
}

/// Per-module estimates plus bookkeeping.
#[derive(Debug, Clone)]
pub struct ResonatorState<T> {
    pub c_hat: Vec<C<T>>,
    pub d_hat: Vec<C<T>>,
    pub v_hat: Vec<C<T>>,
    pub h_hat: Vec<C<T>>,
    pub lca: Option<LcaState<T>>,
    pub iteration: usize,
    pub converged: bool,
    /// Iteration at which convergence was first detected.
    pub converged_at: Option<usize>,
    pub trace: Vec<StepTrace>,
    pub last: Option<Coefficients<T>>,
    pub history: Vec<Coefficients<T>>,
}

impl<T: Real> ResonatorState<T> {
    pub fn argmax(&self) -> Option<Argmaxes> {
        self.trace.last().map(|t| t.argmax)
    }

    /// Real shape coefficients the network currently holds.
    pub fn shape_coefficients(&self) -> Option<&[T]> {
        match &self.lca {
            Some(l) => Some(&l.x),
            None => self.last.as_ref().map(|c| c.shape.as_slice()),
        }
    }
}

/// Position of the decoded object center, from the position argmaxes.
pub fn decoded_position<T: Real>(cbs: &Codebooks<T>, a: &Argmaxes) -> (usize, usize) {
    let canvas = cbs.canvas();
    let (cx, cy) = canvas.center();
    (
        (a.horizontal + cx) % canvas.width,
        (a.vertical + cy) % canvas.height,
    )
}

fn argmax_abs<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    let mut val = T::neg_infinity();
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > val {
            val = x.abs();
            best = i;
        }
    }
    best
}

fn canonicalize<T: Real>(a: &mut [C<T>]) {
    let mut best = czero::<T>();
    for z in a.iter() {
        if z.norm_sqr() > best.norm_sqr() {
            best = *z;
        }
    }
    let m = best.norm();
    if m > T::zero() {
        let rot = best.conj() / m;
        a.iter_mut().for_each(|z| *z = *z * rot);
    }
}

fn cosine<T: Real>(a: &[T], b: &[T]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.to_f() * y.to_f()).sum();
    let na: f64 = a.iter().map(|x| x.to_f().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.to_f().powi(2)).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mul3<T: Real>(a: &[C<T>], b: &[C<T>], d: &[C<T>]) -> Vec<C<T>> {
    a.iter().zip(b).zip(d).map(|((x, y), z)| x * y * z).collect()
}

fn unbind_from<T: Real>(s: &[C<T>], o: &[C<T>]) -> Vec<C<T>> {
    s.iter().zip(o).map(|(a, b)| a * b.conj()).collect()
}

/// True iff every argmax is unchanged over the last `window` iterations and
/// successive shape coefficient vectors have cosine at least `1 - tol`.
pub fn detect_convergence<T: Real>(state: &ResonatorState<T>, window: usize, tol: f64) -> Result<bool> {
    if window == 0 || state.trace.len() < window {
        return Err(Error::Invalid(format!(
            "need {window} iterations of history, have {}",
            state.trace.len()
        )));
    }
    let tail = &state.trace[state.trace.len() - window..];
    let first = tail[0].argmax;
    Ok(tail.iter().all(|t| t.argmax == first)
        && tail[1..].iter().all(|t| t.shape_cosine >= 1.0 - tol))
}

/// Codebooks plus derived quantities shared by every network.
#[derive(Debug, Clone)]
pub struct Resonator<'a, T> {
    pub cbs: &'a Codebooks<T>,
    pub cfg: ResonatorConfig,
    shape_gram: Vec<T>,
    /// Mean magnitude of each generative color vector.
    color_amp: Vec<T>,
    /// Squared norm of each palette column.
    color_energy: Vec<T>,
}

impl<'a, T: Real> Resonator<'a, T> {
    pub fn new(cbs: &'a Codebooks<T>, cfg: ResonatorConfig) -> Result<Self> {
        cfg.validate()?;
        let color_amp = cbs
            .generative_colors
            .iter()
            .map(|g| g.iter().map(|z| z.norm()).sum::<T>() / T::of_usize(g.len()))
            .collect();
        let color_energy = cbs
            .palette
            .colors
            .iter()
            .map(|b| T::of(b.iter().map(|v| v * v).sum::<f64>()))
            .collect();
        Ok(Self {
            cbs,
            cfg,
            shape_gram: cbs.shape.gram_minus_identity(),
            color_amp,
            color_energy,
        })
    }

    /// Mean magnitude of color `m`'s generative vector.
    pub fn color_amplitude(&self, m: usize) -> T {
        self.color_amp[m]
    }

    fn superposition_init(&self, cb: &Codebook<T>, rng: &mut ChaCha8Rng) -> Vec<C<T>> {
        let m = cb.len();
        let ones = vec![c(T::one() / T::of_usize(m).sqrt(), T::zero()); m];
        let sup = cb.encode(&ones);
        let v = sup
            .into_iter()
            .map(|z| {
                let noise = cis(2.0 * std::f64::consts::PI * rng.random::<f64>());
                z + c(T::of(noise.re), T::of(noise.im))
            })
            .collect();
        FMode::Phasor.apply(v)
    }

    /// Fresh state: perturbed superpositions, shape at the mean prior by default.
    pub fn init_state(&self, seed: u64) -> ResonatorState<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c_hat = self.superposition_init(&self.cbs.color, &mut rng);
        let v_hat = self.superposition_init(&self.cbs.pos_v, &mut rng);
        let h_hat = self.superposition_init(&self.cbs.pos_h, &mut rng);
        let (d_hat, lca) = match (self.cfg.shape_module, self.cfg.shape_init) {
            (ShapeModule::Lca, ShapeInit::MeanPrior) => {
                let st = LcaState::from_output(&self.cbs.mean_coeffs, self.cfg.lca);
                let d = self.cfg.shape_f_mode.apply(self.cbs.shape.encode_real(&self.cbs.mean_coeffs));
                (d, Some(st))
            }
            (ShapeModule::Lca, ShapeInit::Random) => (
                self.superposition_init(&self.cbs.shape, &mut rng),
                Some(LcaState::zeros(self.cbs.shape.len(), self.cfg.lca)),
            ),
            (ShapeModule::Conventional, ShapeInit::MeanPrior) => (
                self.cfg.shape_f_mode.apply(self.cbs.shape.encode_real(&self.cbs.mean_coeffs)),
                None,
            ),
            (ShapeModule::Conventional, ShapeInit::Random) => {
                (self.superposition_init(&self.cbs.shape, &mut rng), None)
            }
        };
        ResonatorState {
            c_hat,
            d_hat,
            v_hat,
            h_hat,
            lca,
            iteration: 0,
            converged: false,
            converged_at: None,
            trace: Vec::new(),
            last: None,
            history: Vec::new(),
        }
    }

    fn factor_update(&self, cb: &Codebook<T>, unbound: &[C<T>], g: GMode) -> (Vec<C<T>>, Vec<T>) {
        let mut a = cb.decode(unbound);
        if self.cfg.canonical_phase {
            canonicalize(&mut a);
        }
        let sims = a.iter().map(|z| z.re).collect();
        g.apply(&mut a);
        (self.cfg.f_mode.apply(cb.encode(&a)), sims)
    }

    fn shape_update(&self, lca: &mut Option<LcaState<T>>, unbound: &[C<T>]) -> (Vec<C<T>>, Vec<T>) {
        let cb = &self.cbs.shape;
        match lca {
            Some(st) => {
                let drive = lca_drive(cb, unbound);
                st.update(&drive, &self.shape_gram);
                let d = self.cfg.shape_f_mode.apply(cb.encode_real(&st.x));
                (d, st.x.clone())
            }
            None => {
                let mut a = cb.decode(unbound);
                let sims = a.iter().map(|z| z.re).collect();
                self.cfg.shape_g_mode.apply(&mut a);
                (self.cfg.shape_f_mode.apply(cb.encode(&a)), sims)
            }
        }
    }

    /// One iteration against scene vector `s`.
    pub fn step(&self, state: &mut ResonatorState<T>, s: &[C<T>]) {
        let cbs = self.cbs;
        let coeffs = match self.cfg.update {
            UpdateOrder::Simultaneous => {
                let hv: Vec<C<T>> = state.h_hat.iter().zip(&state.v_hat).map(|(a, b)| a * b).collect();
                let o_c = unbind_from(s, &hv.iter().zip(&state.d_hat).map(|(a, b)| a * b).collect::<Vec<_>>());
                let o_d = unbind_from(s, &hv.iter().zip(&state.c_hat).map(|(a, b)| a * b).collect::<Vec<_>>());
                let o_h = unbind_from(s, &mul3(&state.c_hat, &state.d_hat, &state.v_hat));
                let o_v = unbind_from(s, &mul3(&state.c_hat, &state.d_hat, &state.h_hat));
                let (c_new, color) = self.factor_update(&cbs.color, &o_c, self.cfg.color_g_mode);
                let (h_new, horizontal) = self.factor_update(&cbs.pos_h, &o_h, self.cfg.g_mode);
                let (v_new, vertical) = self.factor_update(&cbs.pos_v, &o_v, self.cfg.g_mode);
                let (d_new, shape) = self.shape_update(&mut state.lca, &o_d);
                state.c_hat = c_new;
                state.d_hat = d_new;
                state.h_hat = h_new;
                state.v_hat = v_new;
                Coefficients { color, shape, vertical, horizontal }
            }
            UpdateOrder::Sequential => {
                let o_h = unbind_from(s, &mul3(&state.c_hat, &state.d_hat, &state.v_hat));
                let (h_new, horizontal) = self.factor_update(&cbs.pos_h, &o_h, self.cfg.g_mode);
                state.h_hat = h_new;
                let o_v = unbind_from(s, &mul3(&state.c_hat, &state.d_hat, &state.h_hat));
                let (v_new, vertical) = self.factor_update(&cbs.pos_v, &o_v, self.cfg.g_mode);
                state.v_hat = v_new;
                let o_c = unbind_from(s, &mul3(&state.d_hat, &state.h_hat, &state.v_hat));
                let (c_new, color) = self.factor_update(&cbs.color, &o_c, self.cfg.color_g_mode);
                state.c_hat = c_new;
                let o_d = unbind_from(s, &mul3(&state.c_hat, &state.h_hat, &state.v_hat));
                let (d_new, shape) = self.shape_update(&mut state.lca, &o_d);
                state.d_hat = d_new;
                Coefficients { color, shape, vertical, horizontal }
            }
        };
        let nf = cbs.n_features.min(coeffs.shape.len());
        let argmax = Argmaxes {
            color: argmax_abs(&coeffs.color),
            shape: argmax_abs(&coeffs.shape[..nf]),
            vertical: argmax_abs(&coeffs.vertical),
            horizontal: argmax_abs(&coeffs.horizontal),
        };
        let shape_cosine = state
            .last
            .as_ref()
            .map(|prev| cosine(&prev.shape, &coeffs.shape))
            .unwrap_or(0.0);
        state.trace.push(StepTrace { argmax, shape_cosine });
        if self.cfg.record_history {
            state.history.push(coeffs.clone());
        }
        state.last = Some(coeffs);
        state.iteration += 1;
        let conv = detect_convergence(state, self.cfg.convergence_window, self.cfg.convergence_tol).unwrap_or(false);
        if conv && state.converged_at.is_none() {
            state.converged_at = Some(state.iteration);
        }
        state.converged = conv;
    }

    /// Iterates until convergence or `max_iters`.
    pub fn run(&self, state: &mut ResonatorState<T>, s: &[C<T>]) {
        while state.iteration < self.cfg.max_iters && !state.converged {
            self.step(state, s);
        }
    }

    /// Shape coefficients scaled to the generative amplitude, read from the
    /// scene unbound by the snapped color and position atoms.
    pub fn snapped_coefficients(&self, a: &Argmaxes, s: &[C<T>]) -> Vec<T> {
        let (p, catom) = self.snapped_atoms(a);
        let key: Vec<C<T>> = p.iter().zip(catom).map(|(x, y)| x * y).collect();
        let energy = self.color_energy[a.color];
        self.cbs
            .shape
            .decode(&unbind_from(s, &key))
            .into_iter()
            .map(|z| z.re / energy)
            .collect()
    }

    fn snapped_atoms(&self, a: &Argmaxes) -> (Vec<C<T>>, &[C<T>]) {
        let lat = &self.cbs.pos_h;
        let h = lat.atom(a.horizontal);
        let v = self.cbs.pos_v.atom(a.vertical);
        let p = h.iter().zip(&v).map(|(x, y)| x * y).collect();
        (p, &self.cbs.generative_colors[a.color])
    }

    /// Shape coefficients used for this network's explanation.
    pub fn explanation_coefficients(&self, state: &ResonatorState<T>, s: &[C<T>]) -> Option<Vec<T>> {
        let a = state.argmax()?;
        Some(match (self.cfg.explanation, &state.lca) {
            (ShapeSource::LcaOutput, Some(l)) => {
                let amp = self.color_amp[a.color];
                l.x.iter().map(|&x| x / amp).collect()
            }
            _ => self.snapped_coefficients(&a, s),
        })
    }

    /// `(D x) ⊙ c ⊙ h ⊙ v` with color and position snapped to their argmax atoms.
    pub fn explanation(&self, state: &ResonatorState<T>, s: &[C<T>]) -> Vec<C<T>> {
        let Some(a) = state.argmax() else {
            return vec![czero(); self.cbs.n()];
        };
        let x = self.explanation_coefficients(state, s).unwrap_or_default();
        let (p, catom) = self.snapped_atoms(&a);
        mul3(&self.cbs.shape.encode_real(&x), catom, &p)
    }

    /// Factorizes `n_objects` one at a time, explaining each away before the next.
    pub fn run_serial(&self, s: &[C<T>], n_objects: usize, seed: u64) -> Result<SerialOutcome<T>> {
        if n_objects == 0 {
            return Err(Error::Invalid("n_objects must be at least 1".into()));
        }
        let gain = T::of(self.cfg.serial_gain());
        let mut residual = s.to_vec();
        let mut states = Vec::with_capacity(n_objects);
        for k in 0..n_objects {
            let mut st = self.init_state(crate::derive_seed(seed, k as u64));
            self.run(&mut st, &residual);
            let e = self.explanation(&st, &residual);
            for (r, x) in residual.iter_mut().zip(&e) {
                *r = *r - *x * gain;
            }
            states.push(st);
        }
        let all_converged = states.iter().all(|s| s.converged);
        Ok(SerialOutcome {
            states,
            all_converged,
            residual,
        })
    }

    /// Networks advanced in lock-step, each seeing the scene minus the
    /// others' current explanations.
    pub fn parallel(&self, n_networks: usize, seed: u64) -> Result<ParallelNetworks<'_, 'a, T>> {
        if n_networks == 0 {
            return Err(Error::Invalid("n_networks must be at least 1".into()));
        }
        let states = (0..n_networks)
            .map(|k| self.init_state(crate::derive_seed(seed, k as u64)))
            .collect();
        Ok(ParallelNetworks {
            res: self,
            states,
            explanations: vec![vec![czero(); self.cbs.n()]; n_networks],
            gain: T::of(self.cfg.parallel_gain()),
        })
    }

    /// Runs parallel networks on a static scene until all converge or `max_iters`.
    pub fn run_parallel(&self, s: &[C<T>], n_networks: usize, seed: u64) -> Result<Vec<ResonatorState<T>>> {
        let mut nets = self.parallel(n_networks, seed)?;
        for _ in 0..self.cfg.max_iters {
            nets.step(s);
            if nets.states.iter().all(|st| st.converged) {
                break;
            }
        }
        Ok(nets.states)
    }
}

/// Result of serial factorization.
#[derive(Debug, Clone)]
pub struct SerialOutcome<T> {
    pub states: Vec<ResonatorState<T>>,
    /// False if any object hit `max_iters` without converging.
    pub all_converged: bool,
    /// Scene vector left after all explanations.
    pub residual: Vec<C<T>>,
}

/// Lock-step networks sharing one scene.
#[derive(Debug)]
pub struct ParallelNetworks<'r, 'a, T> {
    res: &'r Resonator<'a, T>,
    pub states: Vec<ResonatorState<T>>,
    explanations: Vec<Vec<C<T>>>,
    gain: T,
}

impl<T: Real> ParallelNetworks<'_, '_, T> {
    /// One synchronized iteration on scene `s`.
    pub fn step(&mut self, s: &[C<T>]) {
        match self.res.cfg.parallel_explain {
            ExplainOrder::Symmetric => self.step_symmetric(s),
            ExplainOrder::Ordered => self.step_ordered(s),
            ExplainOrder::GaussSeidel => self.step_gauss_seidel(s),
        }
    }

    fn step_symmetric(&mut self, s: &[C<T>]) {
        let mut total = vec![czero::<T>(); s.len()];
        for e in &self.explanations {
            for (t, x) in total.iter_mut().zip(e) {
                *t = *t + x;
            }
        }
        let inputs: Vec<Vec<C<T>>> = self
            .explanations
            .iter()
            .map(|own| {
                s.iter()
                    .zip(&total)
                    .zip(own)
                    .map(|((&x, &t), &o)| x - (t - o) * self.gain)
                    .collect()
            })
            .collect();
        for (st, input) in self.states.iter_mut().zip(&inputs) {
            self.res.step(st, input);
        }
        self.explanations = self
            .states
            .iter()
            .zip(&inputs)
            .map(|(st, input)| self.res.explanation(st, input))
            .collect();
    }

    /// Network `k` sees the scene minus the explanations networks `0..k` just produced.
    fn step_ordered(&mut self, s: &[C<T>]) {
        let mut input = s.to_vec();
        for (st, expl) in self.states.iter_mut().zip(self.explanations.iter_mut()) {
            self.res.step(st, &input);
            *expl = self.res.explanation(st, &input);
            for (x, e) in input.iter_mut().zip(expl.iter()) {
                *x = *x - *e * self.gain;
            }
        }
    }

    fn step_gauss_seidel(&mut self, s: &[C<T>]) {
        let mut total = vec![czero::<T>(); s.len()];
        for e in &self.explanations {
            for (t, x) in total.iter_mut().zip(e) {
                *t = *t + x;
            }
        }
        for (st, expl) in self.states.iter_mut().zip(self.explanations.iter_mut()) {
            let input: Vec<C<T>> = s
                .iter()
                .zip(&total)
                .zip(expl.iter())
                .map(|((&x, &t), &o)| x - (t - o) * self.gain)
                .collect();
            self.res.step(st, &input);
            let fresh = self.res.explanation(st, &input);
            for ((t, o), f) in total.iter_mut().zip(expl.iter()).zip(&fresh) {
                *t = *t - o + f;
            }
            *expl = fresh;
        }
    }

    pub fn explanations(&self) -> &[Vec<C<T>>] {
        &self.explanations
    }
}

/// Free-function form of [`Resonator::init_state`].
pub fn init_state<T: Real>(cbs: &Codebooks<T>, cfg: &ResonatorConfig, seed: u64) -> Result<ResonatorState<T>> {
    Ok(Resonator::new(cbs, *cfg)?.init_state(seed))
}

/// Free-function form of [`Resonator::step`].
pub fn step<T: Real>(state: &mut ResonatorState<T>, s: &[C<T>], cbs: &Codebooks<T>, cfg: &ResonatorConfig) -> Result<()> {
    if s.len() != cbs.n() {
        return Err(Error::Dimension(format!("scene of length {} for dimension {}", s.len(), cbs.n())));
    }
    Resonator::new(cbs, *cfg)?.step(state, s);
    Ok(())
}

/// Writes one CSV row per iteration, module, and coefficient.
pub fn write_waterfall<T: Real, W: Write>(out: &mut W, state: &ResonatorState<T>) -> std::io::Result<()> {
    writeln!(out, "iteration,module,index,value")?;
    for (it, coeffs) in state.history.iter().enumerate() {
        for m in Module::ALL {
            for (i, v) in coeffs.get(m).iter().enumerate() {
                writeln!(out, "{},{},{},{:.6}", it + 1, m.name(), i, v.to_f())?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phasor_guard_and_l2() {
        let v = FMode::Phasor.apply(vec![c(0.0, 0.0), c(3.0, 4.0)]);
        assert_eq!(v[0], c(1.0, 0.0));
        assert!((v[1] - c(0.6, 0.8)).norm() < 1e-15);
        let w = FMode::L2norm.apply(vec![c(3.0, 0.0), c(0.0, 4.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let norm: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 2.0).abs() < 1e-12);
        assert!(FMode::L2norm.apply(vec![c(0.0f64, 0.0); 3]).iter().all(|z| *z == c(1.0, 0.0)));
    }

    #[test]
    fn signed_power_keeps_phase() {
        let mut a = [c(0.0, -2.0), c(0.5, 0.0)];
        GMode::SignedPower { p: 3.0 }.apply(&mut a);
        assert!((a[0] - c(0.0, -8.0)).norm() < 1e-12);
        assert!((a[1] - c(0.125, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn canonical_rotation() {
        let mut a = [c(0.0, 2.0), c(1.0, 0.0)];
        canonicalize(&mut a);
        assert!((a[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - c(0.0, -1.0)).norm() < 1e-12);
    }

    fn state_with(trace: &[(usize, f64)]) -> ResonatorState<f64> {
        ResonatorState {
            c_hat: vec![],
            d_hat: vec![],
            v_hat: vec![],
            h_hat: vec![],
            lca: None,
            iteration: trace.len(),
            converged: false,
            converged_at: None,
            trace: trace
                .iter()
                .map(|&(a, cos)| StepTrace {
                    argmax: Argmaxes { color: a, shape: 0, vertical: 1, horizontal: 2 },
                    shape_cosine: cos,
                })
                .collect(),
            last: None,
            history: vec![],
        }
    }

    #[test]
    fn convergence_window() {
        assert!(detect_convergence(&state_with(&[(1, 0.0); 5]), 5, 1e-3).is_ok());
        let steady: Vec<_> = std::iter::once((1, 0.0)).chain(std::iter::repeat_n((1, 1.0), 4)).collect();
        assert!(detect_convergence(&state_with(&steady), 5, 1e-3).unwrap());
        let flip: Vec<_> = (0..6).map(|i| (i % 2, 1.0)).collect();
        assert!(!detect_convergence(&state_with(&flip), 5, 1e-3).unwrap());
        assert!(detect_convergence(&state_with(&steady[..3]), 5, 1e-3).is_err());
    }
}
