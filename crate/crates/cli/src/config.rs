//! Experiment configuration. Every field has a default, and every run writes
//! the resolved config next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use scene_factor::features::{IcaParams, DEFAULT_FEATURES};
use scene_factor::readout::ReadoutSource;
use scene_factor::resonator::ResonatorConfig;
use scene_factor::scene::DEFAULT_FRAMES;
use scene_factor::tracking::DEFAULT_LOCK_FRAMES;
use scene_factor::vfa::{Canvas, CodebookOptions, Palette};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed; every stochastic step derives its own stream from it.
    pub seed: u64,
    pub dim: usize,
    pub canvas: Canvas,
    pub n_objects: usize,
    pub mnist_dir: PathBuf,
    pub out: PathBuf,
    /// Threads for scene-level parallelism.
    pub workers: usize,
    pub basis_seed: u64,
    pub dictionary: DictionaryConfig,
    pub palette: Palette,
    pub codebooks: CodebookOptions,
    pub resonator: ResonatorConfig,
    pub scenes: SceneConfig,
    pub classify: ClassifyConfig,
    pub tracking: TrackingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub features: usize,
    pub seed: u64,
    pub ica: IcaParams,
    /// Where the dictionary is read from; defaults to `<out>/dictionary.bin`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub count: usize,
    pub moving: bool,
    pub frames: usize,
    pub speed_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Training-digit scenes whose reconstructions train the second classifier.
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Objects per evaluation scene; above one, estimates are matched to the
    /// nearest ground-truth object.
    pub objects_per_scene: usize,
    /// Ridge per training sample.
    pub ridge_per_sample: f64,
    pub readout: ReadoutSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub experiments: usize,
    pub frames: usize,
    pub n_networks: usize,
    pub lock_frames: usize,
    pub speed_range: (f64, f64),
    pub resonator: ResonatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 10_000,
            canvas: Canvas::default(),
            n_objects: 3,
            mnist_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("out"),
            workers: 1,
            basis_seed: 1,
            dictionary: DictionaryConfig::default(),
            palette: Palette::default(),
            codebooks: CodebookOptions::default(),
            resonator: ResonatorConfig::default(),
            scenes: SceneConfig::default(),
            classify: ClassifyConfig::default(),
            tracking: TrackingConfig::default(),
        }
    }
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            features: DEFAULT_FEATURES,
            seed: 7,
            ica: IcaParams::default(),
            path: None,
        }
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            count: 10,
            moving: false,
            frames: DEFAULT_FRAMES,
            speed_range: (0.5, 2.0),
        }
    }
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            train_scenes: 10_000,
            test_scenes: 500,
            objects_per_scene: 1,
            ridge_per_sample: 1e-2,
            readout: ReadoutSource::LcaOutput,
        }
    }
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            experiments: 20,
            frames: DEFAULT_FRAMES,
            n_networks: 3,
            lock_frames: DEFAULT_LOCK_FRAMES,
            speed_range: (0.5, 2.0),
            resonator: ResonatorConfig::tracking(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.dictionary
            .path
            .clone()
            .unwrap_or_else(|| self.out.join("dictionary.bin"))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dim == 0 {
            bail!("dim must be positive");
        }
        if self.canvas.width < 28 || self.canvas.height < 28 {
            bail!("canvas {}x{} cannot hold a 28x28 digit", self.canvas.width, self.canvas.height);
        }
        if self.n_objects == 0 {
            bail!("n_objects must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.palette.is_empty() {
            bail!("palette is empty");
        }
        if self.classify.objects_per_scene == 0 {
            bail!("classify.objects_per_scene must be at least 1");
        }
        if self.tracking.n_networks == 0 {
            bail!("tracking.n_networks must be at least 1");
        }
        self.resonator.validate()?;
        self.tracking.resonator.validate()?;
        Ok(())
    }

    /// Writes the resolved config as `<out>/<command>_config.json`.
    pub fn write_snapshot(&self, command: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(format!("{command}_config.json"));
        fs::write(&path, self.to_json()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `56` or `56x64`.
pub fn parse_canvas(s: &str) -> Result<Canvas, String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad canvas size {s:?}"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok(Canvas::new(parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok(Canvas::new(n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn partial_nested_json() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"dim": 512, "tracking": {"experiments": 2}}"#).unwrap();
        assert_eq!(cfg.dim, 512);
        assert_eq!(cfg.tracking.experiments, 2);
        assert_eq!(cfg.tracking.frames, DEFAULT_FRAMES);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 99;
        cfg.canvas = Canvas::square(64);
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dimm": 3}"#).is_err());
    }

    #[test]
    fn canvas_strings() {
        assert_eq!(parse_canvas("56").unwrap(), Canvas::square(56));
        assert_eq!(parse_canvas("56x64").unwrap(), Canvas::new(56, 64));
        assert!(parse_canvas("big").is_err());
    }
}
