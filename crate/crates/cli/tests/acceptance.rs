//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Run with `cargo test -p puda-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use puda_core::autograd::Tensor;
use puda_core::batching::cycle_batches;
use puda_core::eval::{average_precision, mean_average_precision};
use puda_core::text::{ablate_labels, synth_dataset, Domain, LabelMatrix, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

// Pinned tolerances and budgets.
const FD_STEP: f64 = 1e-3;
const FD_REL_TOL: f64 = 1e-4;
const FD_TRIALS: usize = 100;
const FD_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_BATCHES: usize = 1000;
const BOUNDARY_TOL: f64 = 1e-12;
const SAMPLER_BATCHES: usize = 10_000;
const AP_TOL: f64 = 1e-9;
const MIN_MAP: f64 = 0.85;
const MIN_GAIN: f64 = 0.05;
const RUN_BUDGET: Duration = Duration::from_secs(300);

// End-to-end training setup, fixed by a pilot run before the suite was written.
const SEEDS: [u64; 3] = [1, 2, 3];
const KEEP_RATIOS: [&str; 3] = ["0.5", "0.3", "0.1"];
const TRAIN_FLAGS: &[&str] = &["--dim", "64", "--batch-size", "16", "--deterministic"];
const TARGET_FLAGS: &[&str] = &["--epochs", "12", "--lr", "1e-3"];
const SOURCE_FLAGS: &[&str] = &["--source-epochs", "12", "--source-lr", "1e-3"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn puda(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_puda"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("`puda {}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn puda_with(base: &[&str], groups: &[&[&str]]) -> Result<(), String> {
    let mut args = base.to_vec();
    for g in groups {
        args.extend_from_slice(g);
    }
    puda(&args)
}

fn report_map(dir: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["map"].as_f64().ok_or_else(|| "report.json has no map".to_string())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let ops = common::ops::check_every_op(&mut rng, FD_TRIALS, FD_STEP);
    let (worst_op, worst_op_err) = ops
        .iter()
        .map(|(n, r)| (*n, r.max_rel_error))
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let full = common::oracle::full_loss_grad_check(101, FD_TRIALS, FD_STEP);
    let took = start.elapsed();
    outcome(
        worst_op_err <= FD_REL_TOL && full <= FD_REL_TOL && took < FD_BUDGET,
        format!(
            "{} ops x {FD_TRIALS} trials worst {worst_op_err:.2e} ({worst_op}), full loss x {FD_TRIALS} worst {full:.2e}, {:.1}s",
            ops.len(),
            took.as_secs_f64()
        ),
    )
}

fn loss_oracle() -> Outcome {
    let worst = common::oracle::oracle_deviation(200, ORACLE_BATCHES);
    let [a, b, c] = common::oracle::variational_examples();
    let (term, draw) = common::oracle::mixup_example();
    let total = common::oracle::total_example();
    let hand = [
        (a, -0.5),
        (b, 0.0),
        (c, 0.0),
        (draw.target, 0.8),
        (term, 0.01),
        (total.var.iter().sum(), -0.5),
        (total.mix.iter().sum(), 0.01),
        (total.total, -0.49),
    ];
    let hand_worst = hand.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    outcome(
        worst <= ORACLE_TOL && hand_worst <= ORACLE_TOL,
        format!("{ORACLE_BATCHES} batches worst {worst:.2e}, hand examples worst {hand_worst:.2e}"),
    )
}

fn boundaries() -> Outcome {
    let (zero, one) = common::oracle::boundary_deviation(300, 200);
    outcome(
        zero == 0.0 && one <= BOUNDARY_TOL,
        format!("mu=0 max |term| {zero:e}, mu=1 max gap {one:.2e} over 3 stages x 2 variants"),
    )
}

fn cycle_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut batches = 0;
    let mut violations = 0;
    for (k, labels) in [5usize, 14, 20].into_iter().enumerate() {
        let cfg = SynthConfig::new(2000, labels, 400, 16);
        let ds = synth_dataset(&cfg, Domain::Target, 400 + k as u64).unwrap();
        // sparse observed labels make rare labels the common case
        let obs: LabelMatrix = ablate_labels(&ds, 0.1, 400).unwrap().observed;
        let quota = SAMPLER_BATCHES.div_ceil(3);
        let mut here = 0;
        while here < quota {
            for b in cycle_batches(&obs, 64, &mut rng).unwrap().batches {
                violations += (0..labels)
                    .filter(|&l| !b.indices.iter().any(|&i| obs.get(i, l)))
                    .count();
                violations += usize::from(b.indices.len() != 64);
                here += 1;
            }
        }
        batches += here;
    }
    outcome(
        batches >= SAMPLER_BATCHES && violations == 0,
        format!("{batches} batches over L in {{5,14,20}}, {violations} violations"),
    )
}

/// Straight from the definition: precision at the rank of each positive.
fn ap_oracle(scores: &[f64], truths: &[bool]) -> f64 {
    let mut ranked: Vec<(f64, bool)> = scores.iter().copied().zip(truths.iter().copied()).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let positives = truths.iter().filter(|&&t| t).count() as f64;
    let mut precisions = 0.0;
    for k in 0..ranked.len() {
        if ranked[k].1 {
            let hits = ranked[..=k].iter().filter(|r| r.1).count() as f64;
            precisions += hits / (k + 1) as f64;
        }
    }
    precisions / positives
}

fn metrics() -> Outcome {
    let perfect = average_precision(&[0.9, 0.7, 0.4, 0.1], &[true, true, false, false]).unwrap();
    let golden = average_precision(&[0.9, 0.8, 0.1], &[false, true, true]).unwrap();
    let mut ok = perfect == 1.0 && (golden - 0.58333).abs() <= 1e-5 && (golden - 7.0 / 12.0).abs() <= AP_TOL;

    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut worst: f64 = 0.0;
    let mut mean_rule = true;
    for _ in 0..200 {
        let (n, l) = (rng.random_range(2..30), rng.random_range(1..5));
        let scores: Vec<f64> = (0..n * l).map(|_| rng.random()).collect();
        let mut truth = LabelMatrix::zeros(n, l);
        let empty = rng.random_range(0..=l);
        for j in 0..l {
            if j == empty {
                continue;
            }
            truth.set(rng.random_range(0..n), j, true);
            for i in 0..n {
                if rng.random_bool(0.3) {
                    truth.set(i, j, true);
                }
            }
        }
        let ids: Vec<u64> = (0..n as u64).collect();
        let names: Vec<String> = (0..l).map(|j| j.to_string()).collect();
        let Ok(report) = mean_average_precision(&Tensor::new(vec![n, l], scores.clone()).unwrap(), &truth, &ids, &names)
        else {
            mean_rule &= empty == 0 && l == 1;
            continue;
        };
        let mut defined = Vec::new();
        for j in 0..l {
            let col: Vec<f64> = (0..n).map(|i| scores[i * l + j]).collect();
            let t: Vec<bool> = (0..n).map(|i| truth.get(i, j)).collect();
            match (report.per_label[j], t.iter().any(|&x| x)) {
                (Some(ap), true) => {
                    worst = worst.max((ap - ap_oracle(&col, &t)).abs());
                    defined.push(ap);
                }
                (None, false) => {}
                _ => mean_rule = false,
            }
        }
        mean_rule &= report.map == defined.iter().sum::<f64>() / defined.len() as f64;
    }
    ok &= worst <= AP_TOL && mean_rule;
    outcome(
        ok,
        format!("perfect {perfect}, golden {golden:.5}, random AP vs oracle worst {worst:.2e}, mean rule exact: {mean_rule}"),
    )
}

struct Learning {
    /// `pu[k][r]` and `bce[k][r]`: seed `k`, keep ratio `r`.
    pu: Vec<Vec<f64>>,
    bce: Vec<Vec<f64>>,
    first_run: Duration,
}

fn mean_at(v: &[Vec<f64>], r: usize) -> f64 {
    v.iter().map(|row| row[r]).sum::<f64>() / v.len() as f64
}

fn prepare(out: &Path, seed: &str, keep: &str) -> Result<(), String> {
    puda(&[
        "prepare", "--synthetic", "--n", "500", "--labels", "5", "--vocab-size", "200", "--keep-ratio", keep, "--seed",
        seed, "--out", s(out),
    ])
}

fn learning(root: &Path) -> Result<Learning, String> {
    let mut pu = Vec::new();
    let mut bce = Vec::new();
    let mut first_run = Duration::ZERO;
    for seed in SEEDS {
        let seed_s = seed.to_string();
        let base = root.join(format!("seed{seed}"));
        let data = |keep: &str| base.join(format!("data{keep}"));
        for keep in KEEP_RATIOS {
            prepare(&data(keep), &seed_s, keep)?;
        }
        // the source model depends only on the source corpus, so it is shared
        let started = Instant::now();
        let src = base.join("source");
        puda_with(
            &["train", "--method", "none", "--data", s(&data("0.5")), "--seed", &seed_s, "--out", s(&src)],
            &[TRAIN_FLAGS, SOURCE_FLAGS],
        )?;
        let init = src.join("model.json");
        let (mut pu_row, mut bce_row) = (Vec::new(), Vec::new());
        for keep in KEEP_RATIOS {
            for (method, row) in [("pu", &mut pu_row), ("bce", &mut bce_row)] {
                let out = base.join(format!("{method}{keep}"));
                puda_with(
                    &[
                        "train", "--method", method, "--init", s(&init), "--data", s(&data(keep)), "--seed", &seed_s,
                        "--out", s(&out),
                    ],
                    &[TRAIN_FLAGS, TARGET_FLAGS],
                )?;
                row.push(report_map(&out)?);
            }
            if seed == SEEDS[0] && keep == "0.5" {
                first_run = started.elapsed();
            }
        }
        pu.push(pu_row);
        bce.push(bce_row);
    }
    Ok(Learning { pu, bce, first_run })
}

fn learning_signal(l: &Learning) -> Outcome {
    let (pu, bce) = (mean_at(&l.pu, 0), mean_at(&l.bce, 0));
    let per_seed: Vec<String> = l.pu.iter().zip(&l.bce).map(|(p, b)| format!("{:.3}/{:.3}", p[0], b[0])).collect();
    outcome(
        pu >= MIN_MAP && pu - bce >= MIN_GAIN && l.first_run < RUN_BUDGET,
        format!(
            "keep 0.5 mean mAP pu {pu:.4} vs bce {bce:.4} (need >= {MIN_MAP} and +{MIN_GAIN}), per seed pu/bce [{}], source+pu+bce {:.0}s",
            per_seed.join(" "),
            l.first_run.as_secs_f64()
        ),
    )
}

fn ordering(l: &Learning) -> Outcome {
    let pu: Vec<f64> = (0..KEEP_RATIOS.len()).map(|r| mean_at(&l.pu, r)).collect();
    let bce: Vec<f64> = (0..KEEP_RATIOS.len()).map(|r| mean_at(&l.bce, r)).collect();
    let monotone = pu.windows(2).all(|w| w[1] <= w[0]);
    let beats = pu.iter().zip(&bce).all(|(p, b)| p > b);
    let cells: Vec<String> = KEEP_RATIOS
        .iter()
        .zip(pu.iter().zip(&bce))
        .map(|(k, (p, b))| format!("{k}: {p:.4}/{b:.4}"))
        .collect();
    outcome(
        monotone && beats,
        format!("mean mAP pu/bce {}; monotone {monotone}, beats bce everywhere {beats}", cells.join(", ")),
    )
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn harness_tables(root: &Path) -> Result<Outcome, String> {
    let data = root.join("seed1").join("data0.5");
    let ab = root.join("ablate");
    puda(&[
        "ablate", "--data", s(&data), "--seed", "1", "--dim", "32", "--epochs", "3", "--lr", "1e-3", "--batch-size", "16",
        "--source-epochs", "3", "--out", s(&ab),
    ])?;
    let rows = read_csv(&ab.join("ablation.csv"))?;
    let header = ["grid", "setting", "seeds", "mean_map", "std_map", "relative_change_pct"];
    let mut problems = Vec::new();
    if rows[0] != header {
        problems.push(format!("header {:?}", rows[0]));
    }
    let settings: Vec<(&str, &str)> = rows[1..].iter().map(|r| (r[0].as_str(), r[1].as_str())).collect();
    let want = [("stage", "word"), ("stage", "encoding"), ("stage", "sentence"), ("variant", "norm"), ("variant", "log")];
    if settings != want {
        problems.push(format!("rows {settings:?}"));
    }
    for grid in ["stage", "variant"] {
        let block: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[0] == grid).collect();
        let reference: f64 = block[0][3].parse().map_err(|_| "bad mean_map".to_string())?;
        for r in &block {
            let mean: f64 = r[3].parse().map_err(|_| "bad mean_map".to_string())?;
            let rel: f64 = r[5].parse().map_err(|_| "bad relative change".to_string())?;
            let want = (mean - reference) / reference * 100.0;
            if (rel - want).abs() > 1e-6 * want.abs().max(1.0) {
                problems.push(format!("{grid}/{}: relative {rel} vs {want}", r[1]));
            }
        }
        if block[0][5].parse::<f64>() != Ok(0.0) {
            problems.push(format!("{grid} reference row is {}", block[0][5]));
        }
    }

    let cmp = root.join("compare");
    puda(&[
        "compare", "--data", s(&data), "--seed", "1", "--dim", "32", "--epochs", "2", "--lr", "1e-3", "--batch-size", "16",
        "--source-epochs", "1", "--out", s(&cmp),
    ])?;
    let rows = read_csv(&cmp.join("samplers.csv"))?;
    let secs = |name: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == name)
            .and_then(|r| r[1].parse().ok())
            .unwrap_or(f64::NAN)
    };
    let (nested, unweighted) = (secs("nested"), secs("unweighted"));
    if rows[0] != ["sampler", "seconds", "map"] {
        problems.push(format!("sampler header {:?}", rows[0]));
    }
    if nested.is_nan() || unweighted.is_nan() || nested <= unweighted {
        problems.push(format!("nested {nested:.2}s not slower than unweighted {unweighted:.2}s"));
    }
    let detail = if problems.is_empty() {
        format!("ablation table 5 rows with 0% references; nested {nested:.2}s > unweighted {unweighted:.2}s")
    } else {
        problems.join("; ")
    };
    Ok(outcome(problems.is_empty(), detail))
}

fn same_files(a: &Path, b: &Path, files: &[&str]) -> Result<Vec<String>, String> {
    let mut differ = Vec::new();
    for f in files {
        let x = fs::read(a.join(f)).map_err(|e| format!("{}: {e}", a.join(f).display()))?;
        let y = fs::read(b.join(f)).map_err(|e| format!("{}: {e}", b.join(f).display()))?;
        if x != y {
            differ.push(format!("{}/{f}", a.file_name().unwrap().to_string_lossy()));
        }
    }
    Ok(differ)
}

fn determinism(root: &Path) -> Result<Outcome, String> {
    let small = ["--dim", "8", "--epochs", "2", "--lr", "1e-3", "--batch-size", "16", "--source-epochs", "1"];
    let run = |tag: &str| -> Result<PathBuf, String> {
        let dir = root.join(tag);
        let data = dir.join("data");
        puda(&[
            "prepare", "--synthetic", "--n", "80", "--labels", "3", "--vocab-size", "60", "--max-len", "8", "--seed", "5",
            "--out", s(&data),
        ])?;
        let train = dir.join("train");
        puda_with(
            &["train", "--data", s(&data), "--seed", "5", "--deterministic", "--out", s(&train)],
            &[&small],
        )?;
        puda(&["eval", "--checkpoint", s(&train.join("model.json")), "--data", s(&data), "--out", s(&dir.join("eval"))])?;
        puda_with(
            &["ablate", "--data", s(&data), "--seed", "5", "--deterministic", "--out", s(&dir.join("ablate"))],
            &[&small],
        )?;
        puda_with(
            &["compare", "--data", s(&data), "--seed", "5", "--deterministic", "--out", s(&dir.join("compare"))],
            &[&small],
        )?;
        puda(&["replay", "--manifest", s(&train.join("manifest.json")), "--out", s(&dir.join("replay"))])?;
        Ok(dir)
    };
    let (a, b) = (run("det_a")?, run("det_b")?);
    let train_files = ["metrics.csv", "metrics.json", "source_metrics.csv", "source_metrics.json", "model.json", "report.json"];
    let checks: [(&str, &[&str]); 6] = [
        ("data", &["train.jsonl", "test.jsonl", "source.jsonl", "vocab.json", "meta.json"]),
        ("train", &train_files),
        ("eval", &["report.json", "report.txt"]),
        ("ablate", &["ablation.csv", "curves.csv"]),
        ("compare", &["samplers.csv", "curves.csv"]),
        ("replay", &train_files),
    ];
    let mut differ = Vec::new();
    let mut compared = 0;
    for (sub, files) in checks {
        differ.extend(same_files(&a.join(sub), &b.join(sub), files)?);
        compared += files.len();
    }
    // a replay must also reproduce the run it was recorded from
    differ.extend(same_files(&a.join("train"), &a.join("replay"), &train_files)?);
    compared += train_files.len();
    let detail = if differ.is_empty() {
        format!("{compared} file pairs byte-identical across prepare, train, eval, ablate, compare, replay")
    } else {
        format!("differ: {}", differ.join(", "))
    };
    Ok(outcome(differ.is_empty(), detail))
}

fn flatten(r: Result<Outcome, String>) -> Outcome {
    r.unwrap_or_else(|e| outcome(false, e))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let learned = learning(root.path());
    let (c5, c6) = match &learned {
        Ok(l) => (learning_signal(l), ordering(l)),
        Err(e) => (outcome(false, e.clone()), outcome(false, e.clone())),
    };
    let results = [
        ("gradient correctness", gradients()),
        ("loss oracle equivalence", loss_oracle()),
        ("mixup boundary identities", boundaries()),
        ("cycle sampler coverage", cycle_sampler()),
        ("end-to-end learning signal", c5),
        ("ordering across keep ratios", c6),
        ("ablation and sampler tables", flatten(harness_tables(root.path()))),
        ("metric goldens", metrics()),
        ("determinism", flatten(determinism(root.path()))),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    }
}
