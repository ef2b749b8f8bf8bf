//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use adb_core::boundary::{
    boundary_gradient, compute_centroids, euclidean, finite_difference_loss_gradient,
    train_boundaries, BoundaryParams, BoundaryTrainConfig, Centroids,
};
use adb_core::data_io::{
    generate_synthetic, EmbeddedDataset, EmbeddingRecord, LabelMap, OPEN_LABEL,
};
use adb_core::evaluation::{
    boundary_ratio_sweep, compute_metrics, confusion_matrix, run_experiment, run_once,
    ExperimentConfig, DEFAULT_BOUNDARY_RATIOS,
};
use adb_core::inference::Prediction;
use adb_core::representation::{
    loss_and_gradients, mean_cross_entropy, RepTrainConfig, RepresentationModel,
};
use adb_verify::{benchmark_config, min_centroid_gap, NOISE_SIGMA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name, optional time limit in seconds, check.
type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    o.detail = format!("{} [{:.2}s]", o.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail.push_str(&format!(" exceeds {}s", limit.as_secs()));
        }
    }
    o
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let batches = 60;
    for _ in 0..batches {
        let k = rng.random_range(1..=10);
        let d = rng.random_range(1..=16);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let c = Centroids::new(centers, vec![1; k]).unwrap();
        let p = BoundaryParams::new((0..k).map(|_| rng.random_range(-3.0..3.0)).collect());
        let radii = p.radii();
        let n = rng.random_range(1..=64);
        let mut owned = Vec::with_capacity(n);
        while owned.len() < n {
            let y = rng.random_range(0..k);
            let z: Vec<f64> = c.centers[y]
                .iter()
                .map(|v| v + rng.random_range(-2.0..2.0))
                .collect();
            if (euclidean(&z, &c.centers[y]) - radii[y]).abs() > 1e-4 {
                owned.push((z, y));
            }
        }
        let batch: Vec<(&[f64], usize)> = owned.iter().map(|(z, y)| (z.as_slice(), *y)).collect();
        let a = boundary_gradient(&batch, &c, &p).unwrap();
        let f = finite_difference_loss_gradient(&batch, &c, &p, 1e-6).unwrap();
        for (a, f) in a.iter().zip(&f) {
            match (a, f) {
                (Some(a), Some(f)) => {
                    worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1e-12))
                }
                (None, None) => {}
                _ => return outcome(false, "present/absent classes disagree"),
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!("{batches} batches, max relative error {worst:.3e}"),
    )
}

fn median_fixed_point() -> Outcome {
    let dists = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut records = Vec::new();
    for _ in 0..30 {
        for d in dists {
            records.push(EmbeddingRecord::new("a", vec![d, 0.0]));
            records.push(EmbeddingRecord::new("a", vec![-d, 0.0]));
        }
    }
    let data = EmbeddedDataset::from_records(records).unwrap();
    let c = compute_centroids(&data).unwrap();
    // oracle: grid search over the mean absolute deviation
    let mut oracle = (f64::INFINITY, 0.0);
    for i in 0..=6000 {
        let r = i as f64 * 1e-3;
        let loss = dists.iter().map(|d| (d - r).abs()).sum::<f64>() / 5.0;
        if loss < oracle.0 - 1e-15 {
            oracle = (loss, r);
        }
    }
    let learned = train_boundaries(&data, &c, &BoundaryTrainConfig::default())
        .unwrap()
        .model
        .radii()[0];
    let rel = (learned - oracle.1).abs() / oracle.1;
    outcome(
        rel < 0.05,
        format!(
            "learned {learned:.4}, oracle {:.3}, rel err {rel:.3e}",
            oracle.1
        ),
    )
}

fn tensor_mut(m: &mut RepresentationModel, t: usize) -> &mut [f64] {
    match t {
        0 => &mut m.w_h.data,
        1 => &mut m.b_h,
        2 => &mut m.w_phi.data,
        _ => &mut m.b_phi,
    }
}

fn representation_gradient_check() -> Outcome {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut seeds = 0;
    let mut seed = 0u64;
    while seeds < 20 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d_in, d_out, k) = (
            rng.random_range(2..=6),
            rng.random_range(2..=6),
            rng.random_range(2..=4),
        );
        let labels = LabelMap::new((0..k).map(|i| format!("k{i}")).collect()).unwrap();
        let cfg = RepTrainConfig {
            seed,
            ..Default::default()
        };
        let mut model = RepresentationModel::init(d_in, d_out, labels, cfg).unwrap();
        model
            .b_h
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
        model
            .b_phi
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<usize> = (0..6).map(|_| rng.random_range(0..k)).collect();
        // skip draws with a hidden unit sitting on the ReLU kink
        let near_kink = xs.iter().any(|x| {
            (0..d_out).any(|h| {
                let row = &model.w_h.data[h * d_in..(h + 1) * d_in];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.b_h[h]).abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        seeds += 1;
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .map(Vec::as_slice)
            .zip(ys.iter().copied())
            .collect();
        let (_, g) = loss_and_gradients(&model, &batch).unwrap();
        let analytic = [
            g.w_h.data.clone(),
            g.b_h.clone(),
            g.w_phi.data.clone(),
            g.b_phi.clone(),
        ];
        for (t, grad) in analytic.iter().enumerate() {
            for (i, a) in grad.iter().enumerate() {
                let mut plus = model.clone();
                tensor_mut(&mut plus, t)[i] += step;
                let mut minus = model.clone();
                tensor_mut(&mut minus, t)[i] -= step;
                let f = (mean_cross_entropy(&plus, &batch).unwrap()
                    - mean_cross_entropy(&minus, &batch).unwrap())
                    / (2.0 * step);
                worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1e-8));
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!("{seeds} seeds, 4 tensors, max relative error {worst:.3e}"),
    )
}

fn metric_example() -> Outcome {
    let labels = LabelMap::new(vec!["known".into()]).unwrap();
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for (g, p, n) in [
        ("known", "known", 8),
        ("known", OPEN_LABEL, 2),
        (OPEN_LABEL, "known", 2),
        (OPEN_LABEL, OPEN_LABEL, 8),
    ] {
        for _ in 0..n {
            golds.push(g.to_string());
            preds.push(Prediction {
                label: p.into(),
                nearest_class: "known".into(),
                distance: 0.0,
                margin: 0.0,
            });
        }
    }
    let m = compute_metrics(&confusion_matrix(&preds, &golds, &labels).unwrap()).unwrap();
    let exact = (m.accuracy - 0.8).abs() < 1e-12 && (m.f1_all - 0.8).abs() < 1e-12;
    outcome(
        exact,
        format!("accuracy {}, macro-F1 {}", m.accuracy, m.f1_all),
    )
}

fn benchmark() -> (EmbeddedDataset, f64) {
    let cfg = benchmark_config();
    (
        generate_synthetic(&cfg).unwrap(),
        min_centroid_gap(&cfg).unwrap(),
    )
}

fn benchmark_experiment() -> ExperimentConfig {
    ExperimentConfig {
        known_ratio: 0.5,
        n_runs: 10,
        ..Default::default()
    }
}

fn synthetic_end_to_end() -> Outcome {
    let (data, gap) = benchmark();
    if gap < 10.0 * NOISE_SIGMA {
        return outcome(
            false,
            format!("benchmark centroid gap {gap:.2} below 10 sigma"),
        );
    }
    let report = run_experiment(&data, &benchmark_experiment()).unwrap();
    let (acc, f1o) = (report.mean.accuracy, report.mean.f1_open);
    outcome(
        acc >= 0.95 && f1o >= 0.95,
        format!("gap {gap:.2}, mean accuracy {acc:.4}, mean f1_open {f1o:.4} (need >= 0.95)"),
    )
}

fn sensitivity_sweep() -> Outcome {
    let (data, _) = benchmark();
    let cfg = benchmark_experiment();
    let out = run_once(&data, &cfg, cfg.base_seed).unwrap();
    let model = out.adb.unwrap();
    let rows = boundary_ratio_sweep(&model, &out.test_features, &DEFAULT_BOUNDARY_RATIOS).unwrap();
    let best = rows.iter().enumerate().fold(0, |b, (i, r)| {
        if r.metrics.accuracy > rows[b].metrics.accuracy {
            i
        } else {
            b
        }
    });
    let unit = DEFAULT_BOUNDARY_RATIOS
        .iter()
        .position(|r| *r == 1.0)
        .unwrap();
    let peak_ok = best.abs_diff(unit) <= 1;
    let recalls: Vec<f64> = rows.iter().map(|r| r.metrics.open_recall()).collect();
    let monotone = recalls.windows(2).all(|w| w[1] <= w[0]);
    let accs: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.3}", r.ratio, r.metrics.accuracy))
        .collect();
    outcome(
        peak_ok && monotone,
        format!(
            "peak accuracy at ratio {} ({}), open recall monotone: {monotone}; accuracy {}",
            rows[best].ratio,
            if peak_ok {
                "ok"
            } else {
                "not within one step of 1.0"
            },
            accs.join(" ")
        ),
    )
}

fn learning_dynamics() -> Outcome {
    let (data, _) = benchmark();
    let cfg = benchmark_experiment();
    let curve = run_once(&data, &cfg, cfg.base_seed).unwrap().curve;
    let rising = curve[1].mean_radius >= curve[0].mean_radius;
    let changes: Vec<f64> = curve
        .windows(2)
        .map(|w| (w[1].mean_radius - w[0].mean_radius).abs())
        .collect();
    // first epoch from which every later change stays under 1e-4
    let settled = (0..changes.len())
        .find(|&i| changes[i..].iter().all(|c| *c < 1e-4))
        .map(|i| curve[i + 1].epoch);
    let converged = settled.is_some_and(|e| e < 100);
    let last = changes.last().copied().unwrap_or(0.0);
    outcome(
        rising && converged,
        format!(
            "first epoch non-decreasing: {rising} ({:.4} -> {:.4}); settled at epoch {}; final change {last:.2e} after {} epochs",
            curve[0].mean_radius,
            curve[1].mean_radius,
            settled.map_or("never".to_string(), |e| e.to_string()),
            curve.last().unwrap().epoch
        ),
    )
}

/// Set on re-executions of this binary that should behave as the `adb` CLI.
const PROXY_ENV: &str = "ADB_VERIFY_AS_CLI";

/// Runs the CLI in a fresh process: this test binary re-executed as a proxy.
fn adb(args: &[&str]) -> bool {
    Command::new(std::env::current_exe().unwrap())
        .args(args)
        .env(PROXY_ENV, "1")
        .env_remove("ADB_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn identical_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name:?}: {e}"))?;
        if x != y {
            return Err(format!("{name:?} differs"));
        }
    }
    Ok(names.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = s(&dir.join("data.csv"));
    if !adb(&[
        "synth",
        "--classes",
        "6",
        "--per-class",
        "60",
        "--dim",
        "8",
        "--seed",
        "2",
        "--out",
        &data,
    ]) {
        return outcome(false, "synth failed");
    }
    let mut compared = 0;
    for tag in ["a", "b"] {
        let model = s(&dir.join(tag).join("train"));
        let test = s(&dir.join(tag).join("train").join("test.csv"));
        let steps: [Vec<&str>; 4] = [
            vec!["train", "--data", &data, "--out-dir", &model],
            vec![
                "eval",
                "--model-dir",
                &model,
                "--data",
                &test,
                "--out-dir",
                "EVAL",
            ],
            vec![
                "eval",
                "--model-dir",
                &model,
                "--data",
                &test,
                "--method",
                "msp",
                "--out-dir",
                "MSP",
            ],
            vec![
                "experiment",
                "--data",
                &data,
                "--runs",
                "3",
                "--parallel",
                "2",
                "--out-dir",
                "EXP",
            ],
        ];
        for step in steps {
            let out_for = |v: &str| s(&dir.join(tag).join(v.to_lowercase()));
            let args: Vec<String> = step
                .iter()
                .map(|a| match *a {
                    "EVAL" | "MSP" | "EXP" => out_for(a),
                    other => other.to_string(),
                })
                .collect();
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            if !adb(&refs) {
                return outcome(false, format!("{} failed", refs[0]));
            }
        }
    }
    for sub in ["train", "eval", "msp", "exp"] {
        match identical_dirs(&dir.join("a").join(sub), &dir.join("b").join(sub)) {
            Ok(n) => compared += n,
            Err(e) => return outcome(false, format!("{sub}: {e}")),
        }
    }
    outcome(
        true,
        format!("{compared} output files byte-identical across reruns"),
    )
}

fn main() -> ExitCode {
    if std::env::var_os(PROXY_ENV).is_some() {
        let args = std::iter::once("adb".into()).chain(std::env::args_os().skip(1));
        return adb_cli::run(args);
    }
    let criteria: [Criterion; 8] = [
        ("1 boundary gradient oracle", Some(5), gradient_oracle),
        ("2 median fixed point", Some(10), median_fixed_point),
        (
            "3 representation gradient check",
            None,
            representation_gradient_check,
        ),
        ("4 metric hand-verification", None, metric_example),
        ("5 synthetic end-to-end", Some(120), synthetic_end_to_end),
        ("6 sensitivity sweep shape", None, sensitivity_sweep),
        ("7 learning dynamics", None, learning_dynamics),
        ("8 determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let o = timed(limit.map(Duration::from_secs), f);
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
