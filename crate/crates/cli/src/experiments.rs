//! Experiment harnesses shared by the subcommands and the acceptance tests.

use std::fs;
use std::io::BufWriter;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use scene_factor::features::{learn_dictionary, Provenance, SparseDictionary};
use scene_factor::mnist::{DigitSet, Split, PIXELS};
use scene_factor::readout::{
    estimate, reconstruct_scene, reconstruct_shape, train_classifier, write_eval_csv, EvalRecord,
    FactorEstimate, LinearClassifier, TrainingType,
};
use scene_factor::resonator::{decoded_position, write_waterfall, Resonator, ResonatorConfig};
use scene_factor::scene::{export_video, render_static, sample_scene, SceneParams, SceneSpec};
use scene_factor::tracking::{summarize, toroidal_distance, track, write_track_log, TrackRecord, TrackSummary, TRACK_LOG_HEADER};
use scene_factor::vfa::{build_codebooks, make_basis, Codebooks, VfaBasis};
use scene_factor::{derive_seed, C};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Seed streams, one per kind of random draw.
pub mod streams {
    pub const TRAIN_SCENES: u64 = 1;
    pub const TEST_SCENES: u64 = 2;
    pub const TRACKING: u64 = 3;
    pub const FACTORIZE: u64 = 4;
    pub const GEN_SCENES: u64 = 5;
    pub const CONVERGENCE: u64 = 6;
    pub const NETWORKS: u64 = 100;
}

/// Seed of item `i` in stream `stream`.
pub fn item_seed(base: u64, stream: u64, i: usize) -> u64 {
    derive_seed(derive_seed(base, stream), i as u64)
}

pub fn load_digits(cfg: &ExperimentConfig, split: Split) -> anyhow::Result<DigitSet<f64>> {
    DigitSet::load(&cfg.mnist_dir, split).with_context(|| {
        format!(
            "loading MNIST {:?} split from {} (run scripts/fetch-mnist.sh or set mnist_dir)",
            split,
            cfg.mnist_dir.display()
        )
    })
}

pub fn load_dictionary(cfg: &ExperimentConfig) -> anyhow::Result<SparseDictionary<f64>> {
    let path = cfg.dictionary_path();
    if !path.exists() {
        bail!(
            "no dictionary at {}; run `scene-factor learn-features` first or set dictionary.path",
            path.display()
        );
    }
    SparseDictionary::load(&path).with_context(|| format!("loading dictionary {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryReport {
    pub path: PathBuf,
    pub features: usize,
    pub provenance: Provenance,
    pub orthonormality_error: f64,
}

/// Learns the dictionary from the training split, or validates an external one,
/// and writes it to the configured dictionary path.
pub fn learn_features(cfg: &ExperimentConfig, external: Option<&Path>) -> anyhow::Result<DictionaryReport> {
    let dict = match external {
        Some(p) => SparseDictionary::<f64>::load(p).with_context(|| format!("loading external dictionary {}", p.display()))?,
        None => {
            let train = load_digits(cfg, Split::Train)?;
            learn_dictionary(&train, cfg.dictionary.features, cfg.dictionary.seed, cfg.dictionary.ica)?
        }
    };
    let path = cfg.dictionary_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    dict.save(&path)?;
    Ok(DictionaryReport {
        path,
        features: dict.k(),
        provenance: dict.provenance(),
        orthonormality_error: dict.orthonormality_error(),
    })
}

/// Basis, dictionary and codebooks for one configuration.
pub struct Pipeline {
    pub dict: SparseDictionary<f64>,
    pub basis: VfaBasis<f64>,
    pub cbs: Codebooks<f64>,
}

impl Pipeline {
    pub fn new(cfg: &ExperimentConfig, dict: SparseDictionary<f64>) -> anyhow::Result<Self> {
        let basis = make_basis(cfg.dim, cfg.canvas, cfg.basis_seed)?;
        let cbs = build_codebooks(&basis, &dict, &cfg.palette, cfg.codebooks)?;
        Ok(Self { dict, basis, cbs })
    }

    pub fn resonator(&self, rc: ResonatorConfig) -> anyhow::Result<Resonator<'_, f64>> {
        Ok(Resonator::new(&self.cbs, rc)?)
    }
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?)
}

fn scene_params(cfg: &ExperimentConfig, n_objects: usize) -> SceneParams {
    SceneParams {
        n_objects,
        canvas: cfg.canvas,
        ..SceneParams::default()
    }
}

/// Factor estimates of every object found by serial explaining-away.
#[derive(Debug, Clone)]
pub struct SceneResult {
    pub spec: SceneSpec,
    pub estimates: Vec<FactorEstimate>,
}

fn factorize_spec(
    cfg: &ExperimentConfig,
    pipe: &Pipeline,
    res: &Resonator<'_, f64>,
    digits: &DigitSet<f64>,
    spec: SceneSpec,
    n_objects: usize,
) -> anyhow::Result<(SceneResult, Vec<scene_factor::ResonatorState>, Vec<C<f64>>)> {
    let img = render_static(&spec, digits, &cfg.palette)?;
    let s = pipe.basis.encode_rgb(&img.data)?;
    let out = res.run_serial(&s, n_objects, derive_seed(spec.seed, streams::NETWORKS))?;
    let estimates = out
        .states
        .iter()
        .map(|st| estimate(res, st, &s, cfg.classify.readout).expect("ran at least one iteration"))
        .collect();
    Ok((SceneResult { spec, estimates }, out.states, s))
}

/// One single-object convergence trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrial {
    pub seed: u64,
    pub converged_at: Option<usize>,
    pub color_ok: bool,
    /// Toroidal distance between decoded and true center, per axis.
    pub dx: f64,
    pub dy: f64,
}

impl ConvergenceTrial {
    pub fn success(&self, max_iters: usize, max_px: f64) -> bool {
        self.converged_at.is_some_and(|t| t <= max_iters) && self.color_ok && self.dx <= max_px && self.dy <= max_px
    }
}

/// Single-object test scenes run to convergence.
pub fn convergence_trials(cfg: &ExperimentConfig, pipe: &Pipeline, test: &DigitSet<f64>, n: usize) -> anyhow::Result<Vec<ConvergenceTrial>> {
    let res = pipe.resonator(cfg.resonator)?;
    let params = scene_params(cfg, 1);
    pool(cfg.workers)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let spec = sample_scene(test, &cfg.palette, &params, item_seed(cfg.seed, streams::CONVERGENCE, i))?;
                let img = render_static(&spec, test, &cfg.palette)?;
                let s = pipe.basis.encode_rgb(&img.data)?;
                let mut st = res.init_state(derive_seed(spec.seed, streams::NETWORKS));
                res.run(&mut st, &s);
                let a = st.argmax().expect("ran at least one iteration");
                let (x, y) = decoded_position(&pipe.cbs, &a);
                let o = &spec.objects[0];
                let (dx, dy) = scene_factor::tracking::toroidal_displacement(
                    (x as f64, y as f64),
                    (o.x as f64, o.y as f64),
                    cfg.canvas,
                );
                Ok(ConvergenceTrial {
                    seed: spec.seed,
                    converged_at: st.converged_at,
                    color_ok: a.color == o.color_index,
                    dx: dx.abs(),
                    dy: dy.abs(),
                })
            })
            .collect()
    })
}

/// Centered reconstructions of single-object scenes, with labels and convergence flags.
pub struct ReconstructionSet {
    pub seeds: Vec<u64>,
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub converged: Vec<bool>,
}

/// Runs `n` scenes from `digits` through the pipeline; with several objects per
/// scene each estimate is matched to the nearest unclaimed ground-truth object.
pub fn reconstruct_scenes(
    cfg: &ExperimentConfig,
    pipe: &Pipeline,
    digits: &DigitSet<f64>,
    n: usize,
    stream: u64,
    objects_per_scene: usize,
) -> anyhow::Result<ReconstructionSet> {
    let res = pipe.resonator(cfg.resonator)?;
    let params = scene_params(cfg, objects_per_scene);
    let per_scene: Vec<Vec<(u64, Vec<f64>, u8, bool)>> = pool(cfg.workers)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| -> anyhow::Result<_> {
                let spec = sample_scene(digits, &cfg.palette, &params, item_seed(cfg.seed, stream, i))?;
                let (out, _, _) = factorize_spec(cfg, pipe, &res, digits, spec, objects_per_scene)?;
                let labels = match_labels(&out, cfg);
                Ok(out
                    .estimates
                    .iter()
                    .zip(labels)
                    .map(|(e, l)| {
                        let rec = reconstruct_shape(e, &pipe.cbs, &pipe.dict);
                        (out.spec.seed, rec.centered_image, l, e.converged)
                    })
                    .collect())
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let mut set = ReconstructionSet {
        seeds: Vec::new(),
        images: Vec::new(),
        labels: Vec::new(),
        converged: Vec::new(),
    };
    for (seed, img, label, conv) in per_scene.into_iter().flatten() {
        set.seeds.push(seed);
        set.images.extend(img);
        set.labels.push(label);
        set.converged.push(conv);
    }
    Ok(set)
}

/// Greedy nearest-position assignment of estimates to ground-truth labels.
fn match_labels(out: &SceneResult, cfg: &ExperimentConfig) -> Vec<u8> {
    let objs = &out.spec.objects;
    if objs.len() == 1 {
        return vec![objs[0].label; out.estimates.len()];
    }
    let mut pairs = Vec::new();
    for (k, e) in out.estimates.iter().enumerate() {
        for (j, o) in objs.iter().enumerate() {
            let d = toroidal_distance((e.x as f64, e.y as f64), (o.x as f64, o.y as f64), cfg.canvas);
            pairs.push((d, k, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned: Vec<Option<usize>> = vec![None; out.estimates.len()];
    let mut taken = vec![false; objs.len()];
    for (_, k, j) in pairs {
        if assigned[k].is_none() && !taken[j] {
            assigned[k] = Some(j);
            taken[j] = true;
        }
    }
    assigned.iter().map(|a| objs[a.unwrap_or(0)].label).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRow {
    pub classifier: String,
    pub training_type: TrainingType,
    pub ridge: f64,
    pub training_samples: usize,
    pub accuracy: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub rows: Vec<ClassifierRow>,
    pub train_scenes: usize,
    pub dropped_unconverged: usize,
    pub test_scenes: usize,
    pub test_converged: usize,
}

pub struct ClassifyOutcome {
    pub report: ClassifyReport,
    pub linear_i: LinearClassifier,
    pub linear_ii: LinearClassifier,
    pub records_i: Vec<EvalRecord>,
    pub records_ii: Vec<EvalRecord>,
}

/// Trains both linear classifiers and scores them on pipeline reconstructions of test scenes.
pub fn classify_eval(
    cfg: &ExperimentConfig,
    pipe: &Pipeline,
    train: &DigitSet<f64>,
    test: &DigitSet<f64>,
) -> anyhow::Result<ClassifyOutcome> {
    let cc = &cfg.classify;
    let ridge_i = cc.ridge_per_sample * train.len() as f64;
    let linear_i = train_classifier(train.images(), train.labels(), ridge_i, TrainingType::Original)?;

    let tr = reconstruct_scenes(cfg, pipe, train, cc.train_scenes, streams::TRAIN_SCENES, 1)?;
    let keep: Vec<usize> = (0..tr.labels.len()).filter(|&i| tr.converged[i]).collect();
    if keep.is_empty() {
        bail!("no training scene converged; nothing to train the reconstructed classifier on");
    }
    let images: Vec<f64> = keep
        .iter()
        .flat_map(|&i| tr.images[i * PIXELS..(i + 1) * PIXELS].iter().copied())
        .collect();
    let labels: Vec<u8> = keep.iter().map(|&i| tr.labels[i]).collect();
    let ridge_ii = cc.ridge_per_sample * labels.len() as f64;
    let linear_ii = train_classifier(&images, &labels, ridge_ii, TrainingType::Reconstructed)?;

    let te = reconstruct_scenes(cfg, pipe, test, cc.test_scenes, streams::TEST_SCENES, cc.objects_per_scene)?;
    let score = |clf: &LinearClassifier| -> Vec<EvalRecord> {
        te.images
            .chunks_exact(PIXELS)
            .enumerate()
            .map(|(i, img)| EvalRecord {
                seed: te.seeds[i],
                true_label: te.labels[i],
                predicted: clf.predict(img).0,
                converged: te.converged[i],
            })
            .collect()
    };
    let records_i = score(&linear_i);
    let records_ii = score(&linear_ii);
    let acc = |r: &[EvalRecord]| r.iter().filter(|e| e.true_label == e.predicted).count() as f64 / r.len().max(1) as f64;
    let report = ClassifyReport {
        rows: vec![
            ClassifierRow {
                classifier: "Linear I".into(),
                training_type: TrainingType::Original,
                ridge: ridge_i,
                training_samples: train.len(),
                accuracy: acc(&records_i),
                evaluated: records_i.len(),
            },
            ClassifierRow {
                classifier: "Linear II".into(),
                training_type: TrainingType::Reconstructed,
                ridge: ridge_ii,
                training_samples: labels.len(),
                accuracy: acc(&records_ii),
                evaluated: records_ii.len(),
            },
        ],
        train_scenes: cc.train_scenes,
        dropped_unconverged: tr.labels.len() - keep.len(),
        test_scenes: cc.test_scenes,
        test_converged: te.converged.iter().filter(|&&c| c).count(),
    };
    Ok(ClassifyOutcome {
        report,
        linear_i,
        linear_ii,
        records_i,
        records_ii,
    })
}

/// Runs the configured tracking experiments on test digits.
pub fn track_experiments(cfg: &ExperimentConfig, pipe: &Pipeline, test: &DigitSet<f64>) -> anyhow::Result<(Vec<Vec<TrackRecord>>, TrackSummary)> {
    let tc = &cfg.tracking;
    let res = pipe.resonator(tc.resonator)?;
    let params = SceneParams {
        n_objects: cfg.n_objects,
        canvas: cfg.canvas,
        moving: true,
        speed_range: tc.speed_range,
        frames: tc.frames,
        ..SceneParams::default()
    };
    let runs: Vec<Vec<TrackRecord>> = pool(cfg.workers)?.install(|| {
        (0..tc.experiments)
            .into_par_iter()
            .map(|e| -> anyhow::Result<_> {
                let spec = sample_scene(test, &cfg.palette, &params, item_seed(cfg.seed, streams::TRACKING, e))?;
                Ok(track(
                    &res,
                    &pipe.basis,
                    &spec,
                    test,
                    &cfg.palette,
                    tc.frames,
                    tc.n_networks,
                    derive_seed(spec.seed, streams::NETWORKS),
                    tc.lock_frames,
                )?)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let summary = summarize(&runs);
    Ok((runs, summary))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_classify_outputs(dir: &Path, outcome: &ClassifyOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    outcome.linear_i.save(dir.join("linear_i.rsclf"))?;
    outcome.linear_ii.save(dir.join("linear_ii.rsclf"))?;
    for (name, recs) in [("eval_linear_i.csv", &outcome.records_i), ("eval_linear_ii.csv", &outcome.records_ii)] {
        let mut out = create(&dir.join(name))?;
        write_eval_csv(&mut out, recs)?;
        out.flush()?;
    }
    write_json(&dir.join("report.json"), &outcome.report)
}

pub fn write_track_outputs(dir: &Path, runs: &[Vec<TrackRecord>], summary: &TrackSummary) -> anyhow::Result<()> {
    let mut out = create(&dir.join("track_log.csv"))?;
    writeln!(out, "{TRACK_LOG_HEADER}")?;
    for (e, recs) in runs.iter().enumerate() {
        write_track_log(&mut out, e, recs)?;
    }
    out.flush()?;
    write_json(&dir.join("summary.json"), summary)
}

#[derive(Debug, Clone, Serialize)]
struct ObjectReport<'a> {
    network: usize,
    color_name: &'a str,
    #[serde(flatten)]
    estimate: &'a FactorEstimate,
}

#[derive(Debug, Clone, Serialize)]
struct FactorReport<'a> {
    seed: u64,
    all_converged: bool,
    truth: &'a SceneSpec,
    objects: Vec<ObjectReport<'a>>,
}

/// Factorizes one test scene and writes the input, reconstructions, waterfalls and a report.
pub fn factorize(cfg: &ExperimentConfig, pipe: &Pipeline, test: &DigitSet<f64>, dir: &Path) -> anyhow::Result<SceneResult> {
    let rc = ResonatorConfig {
        record_history: true,
        ..cfg.resonator
    };
    let res = pipe.resonator(rc)?;
    let params = scene_params(cfg, cfg.n_objects);
    let spec = sample_scene(test, &cfg.palette, &params, item_seed(cfg.seed, streams::FACTORIZE, 0))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    render_static(&spec, test, &cfg.palette)?.save_ppm(dir.join("scene.ppm"))?;
    let (result, states, _) = factorize_spec(cfg, pipe, &res, test, spec, cfg.n_objects)?;
    for (k, (st, e)) in states.iter().zip(&result.estimates).enumerate() {
        let mut out = create(&dir.join(format!("object_{k}_waterfall.csv")))?;
        write_waterfall(&mut out, st)?;
        out.flush()?;
        reconstruct_shape(e, &pipe.cbs, &pipe.dict)
            .to_gray()
            .save_pgm(dir.join(format!("object_{k}_recon.pgm")))?;
    }
    reconstruct_scene(&result.estimates, &pipe.cbs, &pipe.dict, &cfg.palette, cfg.canvas).save_ppm(dir.join("reconstruction.ppm"))?;
    let report = FactorReport {
        seed: result.spec.seed,
        all_converged: result.estimates.iter().all(|e| e.converged),
        truth: &result.spec,
        objects: result
            .estimates
            .iter()
            .enumerate()
            .map(|(k, e)| ObjectReport {
                network: k,
                color_name: &cfg.palette.names[e.color],
                estimate: e,
            })
            .collect(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(result)
}

/// Writes `count` test scenes: PPM images (or frame directories when moving) plus specs.
pub fn gen_scenes(cfg: &ExperimentConfig, test: &DigitSet<f64>, dir: &Path) -> anyhow::Result<Vec<SceneSpec>> {
    let sc = &cfg.scenes;
    let params = SceneParams {
        n_objects: cfg.n_objects,
        canvas: cfg.canvas,
        moving: sc.moving,
        speed_range: sc.speed_range,
        frames: sc.frames,
        ..SceneParams::default()
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let specs: Vec<SceneSpec> = (0..sc.count)
        .map(|i| sample_scene(test, &cfg.palette, &params, item_seed(cfg.seed, streams::GEN_SCENES, i)))
        .collect::<Result<_, _>>()?;
    pool(cfg.workers)?.install(|| {
        specs.par_iter().enumerate().try_for_each(|(i, spec)| -> anyhow::Result<()> {
            if sc.moving {
                export_video(dir.join(format!("scene_{i:04}")), spec, test, &cfg.palette, sc.frames)?;
            } else {
                render_static(spec, test, &cfg.palette)?.save_ppm(dir.join(format!("scene_{i:04}.ppm")))?;
            }
            Ok(())
        })
    })?;
    let mut out = create(&dir.join("scenes.jsonl"))?;
    for spec in &specs {
        writeln!(out, "{}", serde_json::to_string(spec)?)?;
    }
    out.flush()?;
    Ok(specs)
}
