#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use scene_factor::features::SparseDictionary;
use scene_factor::mnist::{DigitSet, Split, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use scene_factor_cli::config::ExperimentConfig;
use scene_factor_cli::experiments::{self, Pipeline};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `MNIST_DIR`, or `<workspace>/data/mnist`, if all four files are there.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"));
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .all(|f| dir.join(f).exists())
        .then_some(dir)
}

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

/// Default config pointed at the test data and the cached dictionary.
pub fn base_config() -> Option<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    cfg.mnist_dir = mnist_dir()?;
    cfg.dictionary.path = Some(dictionary_path()?);
    Some(cfg)
}

/// Learns the default dictionary once and caches it across test runs.
pub fn dictionary_path() -> Option<PathBuf> {
    static PATH: OnceLock<Option<PathBuf>> = OnceLock::new();
    PATH.get_or_init(|| {
        let mut cfg = ExperimentConfig::default();
        cfg.mnist_dir = mnist_dir()?;
        let d = &cfg.dictionary;
        let path = cache_dir().join(format!("dictionary-k{}-s{}.bin", d.features, d.seed));
        if SparseDictionary::<f64>::load(&path).is_err() {
            let tmp = path.with_extension("partial");
            cfg.dictionary.path = Some(tmp.clone());
            experiments::learn_features(&cfg, None).expect("learning the test dictionary");
            std::fs::rename(&tmp, &path).unwrap();
        }
        Some(path)
    })
    .clone()
}

pub struct Data {
    pub train: DigitSet<f64>,
    pub test: DigitSet<f64>,
}

pub fn data() -> Option<&'static Data> {
    static DATA: OnceLock<Option<Data>> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = mnist_dir()?;
        Some(Data {
            train: DigitSet::load(&dir, Split::Train).unwrap(),
            test: DigitSet::load(&dir, Split::Test).unwrap(),
        })
    })
    .as_ref()
}

pub fn pipeline(cfg: &ExperimentConfig) -> Pipeline {
    Pipeline::new(cfg, experiments::load_dictionary(cfg).unwrap()).unwrap()
}

/// Prints a skip notice and returns `None` when MNIST is absent.
pub fn setup(name: &str) -> Option<(ExperimentConfig, &'static Data)> {
    match (base_config(), data()) {
        (Some(cfg), Some(d)) => Some((cfg, d)),
        _ => {
            println!("SKIP {name}: MNIST not found (set MNIST_DIR or run scripts/fetch-mnist.sh)");
            None
        }
    }
}

pub fn scene_factor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scene-factor"))
        .args(args)
        .output()
        .expect("running scene-factor")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` by relative path, skipping those that record the output path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
                continue;
            }
            let name = p.file_name().unwrap().to_string_lossy();
            if name.ends_with("_config.json") || name == "learn_features_report.json" {
                continue;
            }
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs every subcommand on a small config into `out` and returns the output files.
/// The dictionary is copied in with `--external` rather than relearned.
pub fn run_all_commands(mnist: &Path, out: &Path, workers: usize) -> BTreeMap<PathBuf, Vec<u8>> {
    let dict = dictionary_path().unwrap();
    fs::create_dir_all(out).unwrap();
    let config = out.join("small.json");
    fs::write(
        &config,
        r#"{
  "dim": 2048,
  "scenes": {"count": 3, "moving": true, "frames": 4},
  "classify": {"train_scenes": 20, "test_scenes": 10},
  "tracking": {"experiments": 2, "frames": 12}
}"#,
    )
    .unwrap();
    let workers = workers.to_string();
    let common = ["--config", s(&config), "--out", s(out), "--workers", &workers, "--mnist-dir", s(mnist)];
    let o = scene_factor(&[&["learn-features", "--external", s(&dict)], &common[..]].concat());
    assert!(o.status.success(), "learn-features: {}", stderr(&o));
    for cmd in ["gen-scenes", "factorize", "classify-eval", "track"] {
        let o = scene_factor(&[&[cmd], &common[..]].concat());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let mut files = tree(out);
    files.remove(Path::new("small.json"));
    files
}
