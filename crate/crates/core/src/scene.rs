//! Random digit scenes and moving-object videos with ground truth.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mnist::{DigitSet, Split, SIDE};
use crate::scalar::Real;
use crate::vfa::{Canvas, Palette};

pub const DEFAULT_FRAMES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Straight,
    Arc,
    Circular,
}

/// Motion of one object; the object sits at its static position at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Pixels per frame along x and y (straight).
    pub velocity: (f64, f64),
    /// Circle center (arc, circular).
    pub center: (f64, f64),
    pub radius: f64,
    /// Radians per frame, signed.
    pub angular_rate: f64,
    /// Start angle on the circle.
    pub phase: f64,
}

impl TrajectorySpec {
    pub fn straight(vx: f64, vy: f64) -> Self {
        Self {
            kind: TrajectoryKind::Straight,
            velocity: (vx, vy),
            center: (0.0, 0.0),
            radius: 0.0,
            angular_rate: 0.0,
            phase: 0.0,
        }
    }

    /// Circular motion through `start` at `t = 0`.
    pub fn around(kind: TrajectoryKind, start: (f64, f64), radius: f64, angular_rate: f64, phase: f64) -> Self {
        Self {
            kind,
            velocity: (0.0, 0.0),
            center: (start.0 - radius * phase.cos(), start.1 - radius * phase.sin()),
            radius,
            angular_rate,
            phase,
        }
    }

    /// Unwrapped position at frame `t`, given the start position.
    pub fn position(&self, start: (f64, f64), t: f64) -> (f64, f64) {
        match self.kind {
            TrajectoryKind::Straight => (start.0 + self.velocity.0 * t, start.1 + self.velocity.1 * t),
            TrajectoryKind::Arc | TrajectoryKind::Circular => {
                let a = self.phase + self.angular_rate * t;
                (self.center.0 + self.radius * a.cos(), self.center.1 + self.radius * a.sin())
            }
        }
    }

    /// Pixel displacement per frame.
    pub fn speed(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Straight => self.velocity.0.hypot(self.velocity.1),
            _ => self.radius * self.angular_rate.abs(),
        }
    }
}

/// Draws a straight, arc, or circular trajectory with speed in `speeds`.
///
/// Circles are small enough to close within `frames`; arcs use a wider
/// radius so the video covers only part of the circle.
pub fn random_trajectory<R: Rng>(rng: &mut R, start: (f64, f64), speeds: (f64, f64), frames: usize) -> TrajectorySpec {
    let kind = match rng.random_range(0..3) {
        0 => TrajectoryKind::Straight,
        1 => TrajectoryKind::Arc,
        _ => TrajectoryKind::Circular,
    };
    let speed = rng.random_range(speeds.0..=speeds.1);
    let heading = rng.random_range(0.0..2.0 * PI);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    match kind {
        TrajectoryKind::Straight => TrajectorySpec::straight(speed * heading.cos(), speed * heading.sin()),
        TrajectoryKind::Arc => {
            let radius = rng.random_range(15.0..30.0);
            TrajectorySpec::around(kind, start, radius, sign * speed / radius, heading)
        }
        TrajectoryKind::Circular => {
            let closing = frames.max(1) as f64 * speed / (2.0 * PI);
            let radius = rng.random_range(3.0..=closing.clamp(3.0, 10.0) + 1e-9);
            TrajectorySpec::around(kind, start, radius, sign * speed / radius, heading)
        }
    }
}

/// One digit in a scene. `(x, y)` is the canvas position of the digit center.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectSpec {
    pub digit_index: usize,
    pub label: u8,
    pub color_index: usize,
    pub x: usize,
    pub y: usize,
    pub trajectory: Option<TrajectorySpec>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub canvas: Canvas,
    pub seed: u64,
    /// Split the digit indices refer to.
    pub split: Split,
}

/// Ground truth of one object at one frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectTruth {
    pub label: u8,
    pub color_index: usize,
    /// Float position wrapped into the canvas.
    pub x: f64,
    pub y: f64,
    /// Rounded, wrapped position actually rendered.
    pub render_x: usize,
    pub render_y: usize,
}

/// Scene generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneParams {
    pub n_objects: usize,
    pub canvas: Canvas,
    /// Sample colors without replacement while the palette allows it.
    pub distinct_colors: bool,
    /// Attach random trajectories.
    pub moving: bool,
    pub speed_range: (f64, f64),
    pub frames: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_objects: 3,
            canvas: Canvas::default(),
            distinct_colors: true,
            moving: false,
            speed_range: (0.5, 2.0),
            frames: DEFAULT_FRAMES,
        }
    }
}

/// Draws a scene spec from `digits`. Deterministic per seed.
pub fn sample_scene<T: Real>(digits: &DigitSet<T>, palette: &Palette, params: &SceneParams, seed: u64) -> Result<SceneSpec> {
    if params.n_objects == 0 {
        return Err(Error::Invalid("a scene needs at least one object".into()));
    }
    if digits.is_empty() || palette.is_empty() {
        return Err(Error::Invalid("no digits or colors to draw from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<usize> = if params.distinct_colors && params.n_objects <= palette.len() {
        sample(&mut rng, palette.len(), params.n_objects).into_vec()
    } else {
        (0..params.n_objects).map(|_| rng.random_range(0..palette.len())).collect()
    };
    let canvas = params.canvas;
    let objects = colors
        .into_iter()
        .map(|color_index| {
            let digit_index = rng.random_range(0..digits.len());
            let x = rng.random_range(0..canvas.width);
            let y = rng.random_range(0..canvas.height);
            let trajectory = params
                .moving
                .then(|| random_trajectory(&mut rng, (x as f64, y as f64), params.speed_range, params.frames));
            ObjectSpec {
                digit_index,
                label: digits.label(digit_index),
                color_index,
                x,
                y,
                trajectory,
            }
        })
        .collect();
    Ok(SceneSpec {
        objects,
        canvas,
        seed,
        split: digits.split(),
    })
}

/// Random static scene of test digits plus its rendering.
pub fn random_scene<T: Real>(
    test_digits: &DigitSet<T>,
    palette: &Palette,
    n_objects: usize,
    canvas: Canvas,
    seed: u64,
) -> Result<(SceneSpec, RgbImage<T>)> {
    test_digits.require(Split::Test)?;
    let params = SceneParams {
        n_objects,
        canvas,
        ..SceneParams::default()
    };
    let spec = sample_scene(test_digits, palette, &params, seed)?;
    let img = render_static(&spec, test_digits, palette)?;
    Ok((spec, img))
}

/// Paints a colored 28x28 digit centered at `(cx, cy)` with toroidal wrap,
/// combining with existing content by per-channel max.
pub fn paint_digit<T: Real>(img: &mut RgbImage<T>, digit: &[T], color: [f64; 3], cx: i64, cy: i64) {
    let canvas = img.canvas();
    let half = (SIDE / 2) as i64;
    let col = color.map(T::of);
    for j in 0..SIDE {
        for i in 0..SIDE {
            let p = digit[j * SIDE + i];
            if p == T::zero() {
                continue;
            }
            let x = canvas.wrap_x(cx - half + i as i64);
            let y = canvas.wrap_y(cy - half + j as i64);
            let at = 3 * (y * canvas.width + x);
            for ch in 0..3 {
                let v = p * col[ch];
                if v > img.data[at + ch] {
                    img.data[at + ch] = v;
                }
            }
        }
    }
}

fn check_split<T: Real>(spec: &SceneSpec, digits: &DigitSet<T>) -> Result<()> {
    digits.require(spec.split)?;
    if let Some(o) = spec.objects.iter().find(|o| o.digit_index >= digits.len()) {
        return Err(Error::Invalid(format!("digit index {} out of range", o.digit_index)));
    }
    Ok(())
}

/// Renders objects at their static positions.
pub fn render_static<T: Real>(spec: &SceneSpec, digits: &DigitSet<T>, palette: &Palette) -> Result<RgbImage<T>> {
    check_split(spec, digits)?;
    let mut img = RgbImage::blank(spec.canvas);
    for o in &spec.objects {
        paint_digit(&mut img, digits.image(o.digit_index), palette.color(o.color_index), o.x as i64, o.y as i64);
    }
    Ok(img)
}

/// Positions of every object at frame `t`.
pub fn ground_truth(spec: &SceneSpec, t: usize) -> Vec<ObjectTruth> {
    let canvas = spec.canvas;
    let (w, h) = (canvas.width as f64, canvas.height as f64);
    spec.objects
        .iter()
        .map(|o| {
            let (fx, fy) = match &o.trajectory {
                Some(tr) => tr.position((o.x as f64, o.y as f64), t as f64),
                None => (o.x as f64, o.y as f64),
            };
            let x = fx.rem_euclid(w);
            let y = fy.rem_euclid(h);
            ObjectTruth {
                label: o.label,
                color_index: o.color_index,
                x,
                y,
                render_x: canvas.wrap_x(fx.round() as i64),
                render_y: canvas.wrap_y(fy.round() as i64),
            }
        })
        .collect()
}

/// Renders frame `t`; every object needs a trajectory.
pub fn render_frame<T: Real>(spec: &SceneSpec, digits: &DigitSet<T>, palette: &Palette, t: usize) -> Result<RgbImage<T>> {
    if spec.objects.iter().any(|o| o.trajectory.is_none()) {
        return Err(Error::Invalid("render_frame needs a trajectory for every object".into()));
    }
    check_split(spec, digits)?;
    let mut img = RgbImage::blank(spec.canvas);
    for (o, g) in spec.objects.iter().zip(ground_truth(spec, t)) {
        paint_digit(&mut img, digits.image(o.digit_index), palette.color(o.color_index), g.render_x as i64, g.render_y as i64);
    }
    Ok(img)
}

#[derive(serde::Serialize)]
struct TruthRecord<'a> {
    frame: usize,
    object: usize,
    #[serde(flatten)]
    truth: &'a ObjectTruth,
}

/// Writes `frame_XXXX.ppm` files plus `truth.jsonl` into `dir`.
pub fn export_video<T: Real>(
    dir: impl AsRef<Path>,
    spec: &SceneSpec,
    digits: &DigitSet<T>,
    palette: &Palette,
    frames: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let truth_path = dir.join("truth.jsonl");
    let file = fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
    let mut out = BufWriter::new(file);
    let moving = spec.objects.iter().all(|o| o.trajectory.is_some());
    for t in 0..frames {
        let img = if moving {
            render_frame(spec, digits, palette, t)?
        } else {
            render_static(spec, digits, palette)?
        };
        img.save_ppm(dir.join(format!("frame_{t:04}.ppm")))?;
        for (k, g) in ground_truth(spec, if moving { t } else { 0 }).iter().enumerate() {
            let line = serde_json::to_string(&TruthRecord {
                frame: t,
                object: k,
                truth: g,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(&truth_path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&truth_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::PIXELS;

    fn digits(split: Split) -> DigitSet<f64> {
        let mut imgs = vec![0.0; 2 * PIXELS];
        for j in 10..18 {
            for i in 12..16 {
                imgs[j * SIDE + i] = 1.0;
                imgs[PIXELS + j * SIDE + i + 2] = 0.5;
            }
        }
        DigitSet::new(imgs, vec![1, 7], split).unwrap()
    }

    #[test]
    fn three_objects() {
        let d = digits(Split::Test);
        let (spec, img) = random_scene(&d, &Palette::default(), 3, Canvas::square(56), 4).unwrap();
        assert_eq!(spec.objects.len(), 3);
        assert_eq!(img.data.len(), 3 * 56 * 56);
        assert!(random_scene(&digits(Split::Train), &Palette::default(), 3, Canvas::square(56), 4).is_err());
    }

    #[test]
    fn centered_white_digit() {
        let d = digits(Split::Test);
        let canvas = Canvas::square(56);
        let (cx, cy) = canvas.center();
        let spec = SceneSpec {
            objects: vec![ObjectSpec { digit_index: 0, label: 1, color_index: 6, x: cx, y: cy, trajectory: None }],
            canvas,
            seed: 0,
            split: Split::Test,
        };
        let img = render_static(&spec, &d, &Palette::default()).unwrap();
        let (x0, y0) = canvas.digit_origin();
        for y in 0..56 {
            for x in 0..56 {
                let inside = (x0..x0 + SIDE).contains(&x) && (y0..y0 + SIDE).contains(&y);
                let want = if inside { d.image(0)[(y - y0) * SIDE + x - x0] } else { 0.0 };
                assert_eq!(img.pixel(x, y), [want; 3]);
            }
        }
    }

    #[test]
    fn straight_and_circular_motion() {
        let s = TrajectorySpec::straight(1.0, 0.0);
        assert_eq!(s.position((5.0, 6.0), 10.0), (15.0, 6.0));
        let c = TrajectorySpec::around(TrajectoryKind::Circular, (20.0, 20.0), 5.0, 2.0 * PI / 30.0, 0.3);
        let p = c.position((20.0, 20.0), 30.0);
        assert!((p.0 - 20.0).abs() < 1e-9 && (p.1 - 20.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_speeds_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = random_trajectory(&mut rng, (3.0, 4.0), (0.5, 2.0), 60);
            assert!((0.5 - 1e-9..=2.0 + 1e-9).contains(&t.speed()));
            let p = t.position((3.0, 4.0), 0.0);
            assert!((p.0 - 3.0).abs() < 1e-9 && (p.1 - 4.0).abs() < 1e-9);
        }
    }
}
