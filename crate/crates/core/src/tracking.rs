//! Tracking moving objects with parallel networks, one iteration per frame.
//!
//! Ground truth is only touched by matching and calibration; lock-on uses the
//! networks' own argmax stability.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mnist::DigitSet;
use crate::resonator::{decoded_position, Resonator};
use crate::scalar::{Real, C};
use crate::scene::{ground_truth, render_frame, SceneSpec};
use crate::vfa::{Canvas, Palette, VfaBasis};

pub const DEFAULT_LOCK_FRAMES: usize = 5;

/// What a network reports on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameReadout {
    pub est_x: usize,
    pub est_y: usize,
    pub color: usize,
    pub shape: usize,
}

/// One network's outputs over a video, before any ground truth is used.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkTrace {
    pub network_id: usize,
    pub frames: Vec<FrameReadout>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackFrame {
    pub est_x: usize,
    pub est_y: usize,
    /// Matched object position, if the network was matched.
    pub truth: Option<(f64, f64)>,
    pub raw_error: Option<f64>,
    pub locked: bool,
    pub calibrated_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackRecord {
    pub network_id: usize,
    pub lock_frame: Option<usize>,
    pub matched_object: Option<usize>,
    /// Mean post-lock `est - truth`; evaluation only.
    pub offset: Option<(f64, f64)>,
    pub frames: Vec<TrackFrame>,
}

impl TrackRecord {
    pub fn calibrated_errors(&self) -> Vec<f64> {
        self.frames.iter().filter_map(|f| f.calibrated_error).collect()
    }

    /// Raw errors on locked frames.
    pub fn raw_errors(&self) -> Vec<f64> {
        self.frames.iter().filter(|f| f.locked).filter_map(|f| f.raw_error).collect()
    }
}

/// Shortest signed displacement `a - b` on a ring of length `len`, in `(-len/2, len/2]`.
pub fn toroidal_delta(a: f64, b: f64, len: usize) -> f64 {
    let l = len as f64;
    let d = (a - b).rem_euclid(l);
    if d > l / 2.0 {
        d - l
    } else {
        d
    }
}

pub fn toroidal_displacement(a: (f64, f64), b: (f64, f64), canvas: Canvas) -> (f64, f64) {
    (
        toroidal_delta(a.0, b.0, canvas.width),
        toroidal_delta(a.1, b.1, canvas.height),
    )
}

pub fn toroidal_distance(a: (f64, f64), b: (f64, f64), canvas: Canvas) -> f64 {
    let (dx, dy) = toroidal_displacement(a, b, canvas);
    dx.hypot(dy)
}

/// First frame closing a run of `k` frames with unchanged color and shape argmax.
pub fn detect_lock_on(frames: &[FrameReadout], k: usize) -> Option<usize> {
    let k = k.max(2);
    let mut run = 0;
    for t in 0..frames.len() {
        let same = t > 0 && frames[t].color == frames[t - 1].color && frames[t].shape == frames[t - 1].shape;
        run = if same { run + 1 } else { 1 };
        if run >= k {
            return Some(t);
        }
    }
    None
}

/// Mean toroidal displacement `est - truth` over the given pairs.
pub fn calibrate_offset(pairs: &[((f64, f64), (f64, f64))], canvas: Canvas) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Invalid("offset calibration needs at least one locked frame".into()));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(est, truth) in pairs {
        let (dx, dy) = toroidal_displacement(est, truth, canvas);
        sx += dx;
        sy += dy;
    }
    let n = pairs.len() as f64;
    Ok((sx / n, sy / n))
}

/// Runs parallel networks over the frames, one iteration each, with no re-initialization.
pub fn run_networks<T: Real, I>(res: &Resonator<'_, T>, frames: I, n_networks: usize, seed: u64) -> Result<Vec<NetworkTrace>>
where
    I: IntoIterator<Item = Vec<C<T>>>,
{
    let mut nets = res.parallel(n_networks, seed)?;
    let mut traces: Vec<NetworkTrace> = (0..n_networks)
        .map(|k| NetworkTrace {
            network_id: k,
            frames: Vec::new(),
        })
        .collect();
    for s in frames {
        if s.len() != res.cbs.n() {
            return Err(Error::Dimension(format!("frame vector {} vs dimension {}", s.len(), res.cbs.n())));
        }
        nets.step(&s);
        for (tr, st) in traces.iter_mut().zip(&nets.states) {
            let a = st.argmax().expect("stepped state has an argmax");
            let (est_x, est_y) = decoded_position(res.cbs, &a);
            tr.frames.push(FrameReadout {
                est_x,
                est_y,
                color: a.color,
                shape: a.shape,
            });
        }
    }
    Ok(traces)
}

/// Matches traces to objects and computes raw and calibrated errors.
///
/// `truths[t][j]` is object `j`'s position at frame `t`.
pub fn evaluate_traces(traces: &[NetworkTrace], truths: &[Vec<(f64, f64)>], canvas: Canvas, lock_k: usize) -> Vec<TrackRecord> {
    let n_obj = truths.first().map_or(0, |t| t.len());
    let locks: Vec<Option<usize>> = traces.iter().map(|t| detect_lock_on(&t.frames, lock_k)).collect();
    let est = |tr: &NetworkTrace, t: usize| (tr.frames[t].est_x as f64, tr.frames[t].est_y as f64);
    let mut costs = Vec::new();
    for (k, tr) in traces.iter().enumerate() {
        let Some(lock) = locks[k] else { continue };
        let span = lock..tr.frames.len().min(truths.len());
        if span.is_empty() {
            continue;
        }
        for j in 0..n_obj {
            let total: f64 = span.clone().map(|t| toroidal_distance(est(tr, t), truths[t][j], canvas)).sum();
            costs.push((total / span.len() as f64, k, j));
        }
    }
    costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut net_obj: Vec<Option<usize>> = vec![None; traces.len()];
    let mut taken = vec![false; n_obj];
    for &(_, k, j) in &costs {
        if net_obj[k].is_none() && !taken[j] {
            net_obj[k] = Some(j);
            taken[j] = true;
        }
    }
    traces
        .iter()
        .enumerate()
        .map(|(k, tr)| {
            let lock = locks[k];
            let obj = net_obj[k];
            let n = tr.frames.len().min(truths.len());
            let locked_at = |t: usize| lock.is_some_and(|l| t >= l);
            let offset = obj.and_then(|j| {
                let pairs: Vec<_> = (0..n).filter(|&t| locked_at(t)).map(|t| (est(tr, t), truths[t][j])).collect();
                calibrate_offset(&pairs, canvas).ok()
            });
            let frames = (0..tr.frames.len())
                .map(|t| {
                    let truth = obj.filter(|_| t < n).map(|j| truths[t][j]);
                    let raw = truth.map(|g| toroidal_distance(est(tr, t), g, canvas));
                    let cal = match (truth, offset) {
                        (Some(g), Some((ox, oy))) if locked_at(t) => {
                            let (dx, dy) = toroidal_displacement(est(tr, t), g, canvas);
                            Some((dx - ox).hypot(dy - oy))
                        }
                        _ => None,
                    };
                    TrackFrame {
                        est_x: tr.frames[t].est_x,
                        est_y: tr.frames[t].est_y,
                        truth,
                        raw_error: raw,
                        locked: locked_at(t),
                        calibrated_error: cal,
                    }
                })
                .collect();
            TrackRecord {
                network_id: tr.network_id,
                lock_frame: lock,
                matched_object: obj,
                offset,
                frames,
            }
        })
        .collect()
}

/// Renders, encodes and tracks a moving scene for `frames` frames.
pub fn track<T: Real>(
    res: &Resonator<'_, T>,
    basis: &VfaBasis<T>,
    spec: &SceneSpec,
    digits: &DigitSet<T>,
    palette: &Palette,
    frames: usize,
    n_networks: usize,
    seed: u64,
    lock_k: usize,
) -> Result<Vec<TrackRecord>> {
    let mut vectors = Vec::with_capacity(frames);
    let mut truths = Vec::with_capacity(frames);
    for t in 0..frames {
        let img = render_frame(spec, digits, palette, t)?;
        vectors.push(basis.encode_rgb(&img.data)?);
        truths.push(ground_truth(spec, t).iter().map(|g| (g.x, g.y)).collect());
    }
    let traces = run_networks(res, vectors, n_networks, seed)?;
    Ok(evaluate_traces(&traces, &truths, spec.canvas, lock_k))
}

/// Mean, median and 95th percentile of a sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub frac_under_5: f64,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            p95: quantile(&v, 0.95),
            frac_under_5: v.iter().filter(|&&e| e < 5.0).count() as f64 / v.len() as f64,
        })
    }
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackSummary {
    pub experiments: usize,
    pub networks: usize,
    pub locked_networks: usize,
    pub lock_rate: f64,
    /// Statistics over every post-lock frame.
    pub calibrated: Option<ErrorStats>,
    pub raw: Option<ErrorStats>,
    /// Statistics over per-network mean post-lock errors.
    pub per_object_calibrated: Option<ErrorStats>,
    pub per_object_raw: Option<ErrorStats>,
    pub calibration_uses_ground_truth: bool,
}

/// Aggregates records from any number of experiments.
pub fn summarize(experiments: &[Vec<TrackRecord>]) -> TrackSummary {
    let records: Vec<&TrackRecord> = experiments.iter().flatten().collect();
    let locked = records.iter().filter(|r| r.lock_frame.is_some()).count();
    let mut cal = Vec::new();
    let mut raw = Vec::new();
    let mut obj_cal = Vec::new();
    let mut obj_raw = Vec::new();
    for r in &records {
        let c = r.calibrated_errors();
        let w = r.raw_errors();
        if !c.is_empty() {
            obj_cal.push(c.iter().sum::<f64>() / c.len() as f64);
        }
        if !w.is_empty() {
            obj_raw.push(w.iter().sum::<f64>() / w.len() as f64);
        }
        cal.extend(c);
        raw.extend(w);
    }
    TrackSummary {
        experiments: experiments.len(),
        networks: records.len(),
        locked_networks: locked,
        lock_rate: if records.is_empty() { 0.0 } else { locked as f64 / records.len() as f64 },
        calibrated: ErrorStats::of(&cal),
        raw: ErrorStats::of(&raw),
        per_object_calibrated: ErrorStats::of(&obj_cal),
        per_object_raw: ErrorStats::of(&obj_raw),
        calibration_uses_ground_truth: true,
    }
}

/// CSV: experiment, frame, network, est_x, est_y, truth_x, truth_y, locked, raw_err, cal_err.
pub fn write_track_log<W: Write>(out: &mut W, experiment: usize, records: &[TrackRecord]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for r in records {
        for (t, f) in r.frames.iter().enumerate() {
            writeln!(
                out,
                "{experiment},{t},{},{},{},{},{},{},{},{}",
                r.network_id,
                f.est_x,
                f.est_y,
                opt(f.truth.map(|g| g.0)),
                opt(f.truth.map(|g| g.1)),
                f.locked,
                opt(f.raw_error),
                opt(f.calibrated_error),
            )?;
        }
    }
    Ok(())
}

pub const TRACK_LOG_HEADER: &str = "experiment,frame,network,est_x,est_y,truth_x,truth_y,locked,raw_err,cal_err";

#[cfg(test)]
mod tests {
    use super::*;

    fn readouts(cs: &[(usize, usize)]) -> Vec<FrameReadout> {
        cs.iter()
            .map(|&(color, shape)| FrameReadout {
                est_x: 0,
                est_y: 0,
                color,
                shape,
            })
            .collect()
    }

    #[test]
    fn wrap_distance() {
        let c = Canvas::square(56);
        assert_eq!(toroidal_distance((0.0, 0.0), (55.0, 0.0), c), 1.0);
        assert_eq!(toroidal_delta(1.0, 55.0, 56), 2.0);
        assert_eq!(toroidal_delta(28.0, 0.0, 56), 28.0);
    }

    #[test]
    fn lock_on_cases() {
        assert_eq!(detect_lock_on(&readouts(&[(1, 2); 8]), 5), Some(4));
        let flicker: Vec<_> = (0..20).map(|t| (t % 2, 0)).collect();
        assert_eq!(detect_lock_on(&readouts(&flicker), 5), None);
        let late = [(0, 0), (1, 0), (1, 3), (1, 3), (1, 3), (1, 3), (1, 3)];
        assert_eq!(detect_lock_on(&readouts(&late), 5), Some(6));
    }

    #[test]
    fn constant_offset_calibrates_away() {
        let c = Canvas::square(56);
        let pairs: Vec<_> = (0..10).map(|t| ((t as f64 + 2.0, 5.0), (t as f64, 5.0))).collect();
        assert_eq!(calibrate_offset(&pairs, c).unwrap(), (2.0, 0.0));
        let wrapped = [((1.0, 0.0), (55.0, 0.0))];
        assert_eq!(calibrate_offset(&wrapped, c).unwrap(), (2.0, 0.0));
        assert!(calibrate_offset(&[], c).is_err());
    }

    #[test]
    fn summary_aggregation() {
        let empty = summarize(&[]);
        assert_eq!(empty.networks, 0);
        assert!(empty.calibrated.is_none());
        let rec = TrackRecord {
            network_id: 0,
            lock_frame: Some(0),
            matched_object: Some(0),
            offset: Some((0.0, 0.0)),
            frames: [1.0, 2.0, 6.0]
                .iter()
                .map(|&e| TrackFrame {
                    est_x: 0,
                    est_y: 0,
                    truth: Some((0.0, 0.0)),
                    raw_error: Some(e),
                    locked: true,
                    calibrated_error: Some(e),
                })
                .collect(),
        };
        let one = summarize(&[vec![rec.clone()]]);
        let cal = one.calibrated.unwrap();
        assert_eq!((cal.count, cal.mean, cal.median), (3, 3.0, 2.0));
        assert!((cal.frac_under_5 - 2.0 / 3.0).abs() < 1e-15);
        let two = summarize(&[vec![rec.clone()], vec![rec]]);
        assert_eq!(two.calibrated.unwrap().mean, cal.mean);
        assert_eq!(two.calibrated.unwrap().median, cal.median);
    }
}
