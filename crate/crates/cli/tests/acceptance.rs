//! Acceptance run: one PASS/FAIL/SKIP line per criterion.
//!
//! Exits 0 regardless of the verdicts so the workspace test run completes;
//! set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

mod common;
#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scene_factor::vfa::{bind, make_basis, shift_image, Canvas};
use scene_factor_cli::experiments::{classify_eval, convergence_trials, track_experiments};

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Report {
    failed: usize,
    skipped: usize,
    passed: usize,
}

impl Report {
    fn line(&mut self, name: &str, v: Verdict, detail: String) {
        let tag = match v {
            Verdict::Pass => {
                self.passed += 1;
                "PASS"
            }
            Verdict::Fail => {
                self.failed += 1;
                "FAIL"
            }
            Verdict::Skip => {
                self.skipped += 1;
                "SKIP"
            }
        };
        println!("{tag} {name}: {detail}");
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.line(name, if ok { Verdict::Pass } else { Verdict::Fail }, detail);
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn equivariance(r: &mut Report) {
    let t = Instant::now();
    let canvas = Canvas::square(56);
    let basis = make_basis::<f64>(4096, canvas, 2024).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let img: Vec<f64> = (0..canvas.pixels())
            .map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() } else { 0.0 })
            .collect();
        let dx = rng.random_range(-56..56);
        let dy = rng.random_range(-56..56);
        let lhs = basis.encode_gray(&shift_image(&img, canvas, dx, dy)).unwrap();
        let rhs = bind(&basis.index_vector(dx, dy), &basis.encode_gray(&img).unwrap()).unwrap();
        let dev = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    let el = secs(t.elapsed());
    r.check(
        "equivariance",
        worst < 1e-10 && el < 30.0,
        format!("max deviation {worst:.1e} over 100 images and shifts (limit 1e-10), {el:.1} s (limit 30 s)"),
    );
}

fn lca_oracle(r: &mut Report) {
    let t = Instant::now();
    let worst = (0..20).map(oracles::lca_lasso_gap).fold(0.0, f64::max);
    let el = secs(t.elapsed());
    r.check(
        "lca_oracle",
        worst < 1e-4 && el < 60.0,
        format!("largest coefficient gap to the lasso {worst:.1e} over 20 dictionaries (limit 1e-4), {el:.1} s (limit 60 s)"),
    );
}

fn ica(r: &mut Report) {
    let corrs: Vec<f64> = (0..10).map(oracles::ica_two_source_recovery).collect();
    let ok = corrs.iter().filter(|&&c| c > 0.99).count();
    let worst = corrs.iter().copied().fold(1.0, f64::min);
    r.check("fastica_recovery", ok == 10, format!("{ok}/10 seeds above |corr| 0.99, worst {worst:.4}"));
}

const MNIST_SKIP: &str = "MNIST not found (set MNIST_DIR or run scripts/fetch-mnist.sh)";

fn determinism(r: &mut Report) {
    let Some(mnist) = common::mnist_dir() else {
        r.line("determinism", Verdict::Skip, MNIST_SKIP.into());
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let a = common::run_all_commands(&mnist, &tmp.path().join("a"), 1);
    let b = common::run_all_commands(&mnist, &tmp.path().join("b"), 1);
    let differing: Vec<String> = a
        .iter()
        .filter(|(p, bytes)| b.get(*p) != Some(*bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let ok = differing.is_empty() && a.len() == b.len();
    r.check(
        "determinism",
        ok,
        if ok {
            format!("{} output files byte-identical across two runs of every command", a.len())
        } else {
            format!("differing outputs: {differing:?}")
        },
    );
}

fn pipeline_criteria(r: &mut Report) {
    let names = ["resonator_convergence", "invariant_classification", "tracking_precision"];
    let Some((cfg, data)) = common::base_config().zip(common::data()) else {
        for n in names {
            r.line(n, Verdict::Skip, MNIST_SKIP.into());
        }
        return;
    };
    let pipe = common::pipeline(&cfg);

    let t = Instant::now();
    let trials = convergence_trials(&cfg, &pipe, &data.test, 100).unwrap();
    let ok = trials.iter().filter(|t| t.success(50, 2.0)).count();
    let el = secs(t.elapsed());
    r.check(
        names[0],
        ok >= 90 && el < 15.0 * 60.0,
        format!("{ok}/100 single-object scenes converged within 50 iterations with exact color and position within 2 px (need 90), {el:.0} s"),
    );

    let t = Instant::now();
    let out = classify_eval(&cfg, &pipe, &data.train, &data.test).unwrap();
    let acc = |name: &str| 100.0 * out.report.rows.iter().find(|row| row.classifier == name).unwrap().accuracy;
    let (l1, l2) = (acc("Linear I"), acc("Linear II"));
    let in1 = (60.2 - 8.0..=60.2 + 8.0).contains(&l1);
    let in2 = (76.3 - 8.0..=76.3 + 8.0).contains(&l2);
    let gap = l2 - l1;
    r.check(
        names[1],
        in1 && in2 && gap > 15.0,
        format!(
            "Linear I {l1:.1}% (band 52.2-68.2 {}), Linear II {l2:.1}% (band 68.3-84.3 {}), gap {gap:.1} points (need > 15) on {} test scenes, {:.0} s",
            if in1 { "ok" } else { "missed" },
            if in2 { "ok" } else { "missed" },
            out.report.test_scenes,
            secs(t.elapsed())
        ),
    );

    let t = Instant::now();
    let (_, summary) = track_experiments(&cfg, &pipe, &data.test).unwrap();
    let detail = match (&summary.calibrated, &summary.raw) {
        (Some(c), Some(raw)) => {
            let ok = c.median <= 3.0 && c.frac_under_5 >= 0.9 && raw.mean <= 8.0;
            let d = format!(
                "calibrated median {:.2} px (limit 3), {:.1}% under 5 px (need 90), raw mean {:.2} px (limit 8); {}/{} networks locked over {} experiments, {:.0} s",
                c.median,
                100.0 * c.frac_under_5,
                raw.mean,
                summary.locked_networks,
                summary.networks,
                summary.experiments,
                secs(t.elapsed())
            );
            (ok, d)
        }
        _ => (false, "no network locked".into()),
    };
    r.check(names[2], detail.0, detail.1);
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let mut r = Report {
        failed: 0,
        skipped: 0,
        passed: 0,
    };
    equivariance(&mut r);
    pipeline_criteria(&mut r);
    lca_oracle(&mut r);
    ica(&mut r);
    determinism(&mut r);
    println!("acceptance: {} passed, {} failed, {} skipped", r.passed, r.failed, r.skipped);
    if r.failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
