//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rff_bench::cli::run;
use rff_bench::report::{load_metrics, MetricsRow};
use rff_core::eval::harmonic_mean;
use rff_core::mapper::{kl_to_marginal, GaussianPosterior};
use rff_core::Tensor;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn bench(args: &[&str]) -> i32 {
    run(std::iter::once("rff-bench").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metrics(dir: &Path) -> Vec<MetricsRow> {
    load_metrics(&dir.join("metrics.csv")).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
        .unwrap()
}

fn harmonic_reproduction() -> (bool, String) {
    let table = [(59.8, 75.1, 66.5), (52.6, 56.6, 54.6), (45.7, 38.6, 41.9), (65.2, 78.2, 71.1)];
    let worst = table
        .iter()
        .map(|&(u, s, h)| (harmonic_mean(u, s) - h).abs())
        .fold(0.0, f64::max);
    (worst <= 0.2, format!("max |H - published| = {worst:.3}"))
}

fn gradient_suite(root: &Path) -> (bool, String) {
    let out = root.join("gradcheck");
    let code = bench(&["gradcheck", "--out", s(&out)]);
    let worst = csv_column(&out.join("gradcheck.csv"), "max_rel_error")
        .into_iter()
        .fold(0.0, f64::max);
    (code == 0 && worst < 1e-3, format!("exit {code}, max relative error {worst:.2e} over 20 seeds"))
}

fn kl_oracle() -> (bool, String) {
    let mut rng = rff_core::rng_from_seed(99);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let shape = Tensor::<f64>::standard_normal(2, 6, &mut rng);
        let mu = Tensor::from_fn(1, 6, |_, c| shape.get(0, c));
        let log_var = Tensor::from_fn(1, 6, |_, c| 0.6 * shape.get(1, c));
        let post = GaussianPosterior::new(mu, log_var).unwrap();
        let exact = kl_to_marginal(&post);
        let (m, lv) = (post.mu.row(0), post.log_var.row(0));
        let mut total = 0.0;
        let chunk = 100_000;
        for _ in 0..10 {
            let eps = Tensor::<f64>::standard_normal(chunk, 6, &mut rng);
            for r in 0..chunk {
                for k in 0..6 {
                    let e = eps.get(r, k);
                    let z = m[k] + (0.5 * lv[k]).exp() * e;
                    total += -0.5 * e * e - 0.5 * lv[k] + 0.5 * z * z;
                }
            }
        }
        let estimate = total / 1e6;
        worst = worst.max((exact - estimate).abs() / exact);
    }
    (worst < 0.01, format!("max relative gap {:.3}% on 20 posteriors", 100.0 * worst))
}

fn constraint_satisfaction(runs: &[PathBuf]) -> (bool, String) {
    let mut pass = true;
    let mut worst_ratio: f64 = 0.0;
    let mut min_beta = f64::INFINITY;
    for dir in runs {
        let bound: f64 = manifest_value(dir, "gen.bound").parse().unwrap();
        let active = manifest_value(dir, "gen.disable_mi") == "false" && bound.is_finite();
        let log = dir.join("log.csv");
        for col in ["kl_real", "kl_fake"] {
            let kl = csv_column(&log, col);
            let tail = &kl[kl.len() - 10..];
            let avg = tail.iter().sum::<f64>() / 10.0;
            if active {
                worst_ratio = worst_ratio.max(avg / bound);
                pass &= avg <= 1.05 * bound;
            }
        }
        for col in ["beta_real", "beta_fake"] {
            let m = csv_column(&dir.join("steps.csv"), col).into_iter().fold(f64::INFINITY, f64::min);
            min_beta = min_beta.min(m);
        }
    }
    pass &= min_beta >= 0.0;
    (
        pass,
        format!("worst final-10-epoch KL / b = {worst_ratio:.3} over {} runs, min beta {min_beta}", runs.len()),
    )
}

fn ab(name: &str, with: &[MetricsRow], without: &[MetricsRow], on_unseen: bool) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut fields: Vec<(&str, fn(&MetricsRow) -> f64)> = vec![("H", |r| r.harmonic)];
    if on_unseen {
        fields.insert(0, ("U", |r| r.unseen));
    }
    for (label, f) in fields {
        let wins = with.iter().zip(without).filter(|(a, b)| f(a) > f(b)).count();
        let (ma, mb) = (
            median(with.iter().map(f).collect()),
            median(without.iter().map(f).collect()),
        );
        pass &= wins >= 4 && ma > mb;
        parts.push(format!("{label} wins {wins}/5, median {ma:.1} vs {mb:.1}"));
    }
    (pass, format!("{name}: {}", parts.join("; ")))
}

fn imbalance_curve(root: &Path, runs: &[PathBuf]) -> (bool, String, Vec<PathBuf>) {
    let counts = [10.0, 50.0, 200.0, 400.0];
    let mut u = vec![Vec::new(); 4];
    let mut h = vec![Vec::new(); 4];
    let mut outs = Vec::new();
    for (i, dir) in runs.iter().enumerate() {
        let out = root.join(format!("eval-{i}"));
        assert_eq!(bench(&["eval", "--model", s(dir), "--out", s(&out)]), 0);
        for (k, row) in metrics(&out).iter().enumerate() {
            u[k].push(row.unseen);
            h[k].push(row.harmonic);
        }
        outs.push(out);
    }
    let mu: Vec<f64> = u.into_iter().map(median).collect();
    let mh: Vec<f64> = h.into_iter().map(median).collect();
    let (ru, rh) = (spearman(&counts, &mu), spearman(&counts, &mh));
    (
        ru > 0.0 && rh > 0.0,
        format!("median U {mu:.1?}, H {mh:.1?}; Spearman U {ru:.2}, H {rh:.2}"),
        outs,
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "txt" || e == "ckpt"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism(root: &Path, firsts: &[(&str, PathBuf)]) -> (bool, String) {
    let mut failed = Vec::new();
    for (command, first) in firsts {
        let again = root.join(format!("rerun-{command}"));
        let manifest = first.join("manifest.txt");
        let code = bench(&[command, "--config", s(&manifest), "--out", s(&again)]);
        if code != 0 || csv_files(first) != csv_files(&again) {
            failed.push(*command);
        }
    }
    let report_a = root.join("report-a");
    let report_b = root.join("report-b");
    let inputs: Vec<PathBuf> = firsts
        .iter()
        .map(|(_, p)| p.join("metrics.csv"))
        .filter(|p| p.is_file())
        .collect();
    let mut args_a = vec!["report", "--out", s(&report_a)];
    args_a.extend(inputs.iter().map(|p| s(p)));
    let mut args_b = vec!["report", "--out", s(&report_b)];
    args_b.extend(inputs.iter().map(|p| s(p)));
    if bench(&args_a) != 0 || bench(&args_b) != 0 || csv_files(&report_a) != csv_files(&report_b) {
        failed.push("report");
    }
    (
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} subcommands rerun bit-identically", firsts.len() + 1)
        } else {
            format!("differs: {}", failed.join(", "))
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut outcomes = Vec::new();
    let mut record = |id, name, start: Instant, (pass, detail): (bool, String)| {
        let o = Outcome {
            id,
            name,
            pass,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        eprintln!("[{}] criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        outcomes.push(o);
    };

    let t = Instant::now();
    record(1, "harmonic mean reproduction", t, harmonic_reproduction());
    let t = Instant::now();
    record(2, "gradient suite", t, gradient_suite(root));
    let t = Instant::now();
    record(3, "KL oracle", t, kl_oracle());

    let t_gen = Instant::now();
    let mut default_runs = Vec::new();
    let mut ablated_runs = Vec::new();
    for seed in SEEDS {
        let seed_arg = seed.to_string();
        let d = root.join(format!("gen-{seed}"));
        let n = root.join(format!("gen-no-mi-{seed}"));
        assert_eq!(bench(&["train-gen", "--seed", &seed_arg, "--run-id", "default", "--out", s(&d)]), 0);
        assert_eq!(
            bench(&["train-gen", "--seed", &seed_arg, "--ablate", "no-mi", "--run-id", "no-mi", "--out", s(&n)]),
            0
        );
        default_runs.push(d);
        ablated_runs.push(n);
    }
    record(4, "constraint satisfaction", t_gen, constraint_satisfaction(&default_runs));
    let with: Vec<MetricsRow> = default_runs.iter().flat_map(|d| metrics(d)).collect();
    let without: Vec<MetricsRow> = ablated_runs.iter().flat_map(|d| metrics(d)).collect();
    record(5, "redundancy-removal A/B", t_gen, ab("generation", &with, &without, true));

    let t = Instant::now();
    let mut embed_runs = Vec::new();
    let mut embed_with = Vec::new();
    let mut embed_without = Vec::new();
    for seed in SEEDS {
        let seed_arg = seed.to_string();
        let d = root.join(format!("embed-{seed}"));
        let n = root.join(format!("embed-no-mi-{seed}"));
        assert_eq!(bench(&["train-embed", "--seed", &seed_arg, "--out", s(&d)]), 0);
        assert_eq!(bench(&["train-embed", "--seed", &seed_arg, "--ablate", "no-mi", "--out", s(&n)]), 0);
        embed_with.extend(metrics(&d));
        embed_without.extend(metrics(&n));
        embed_runs.push(d);
    }
    record(6, "embedding A/B", t, ab("embedding", &embed_with, &embed_without, false));

    let t = Instant::now();
    let (pass, detail, eval_dirs) = imbalance_curve(root, &default_runs);
    record(7, "data-imbalance curve", t, (pass, detail));

    let t = Instant::now();
    let data = root.join("data");
    assert_eq!(bench(&["synth-data", "--seed", "7", "--out", s(&data)]), 0);
    let synth = root.join("synth-features");
    assert_eq!(bench(&["synth-features", "--model", s(&default_runs[0]), "--out", s(&synth)]), 0);
    let firsts = [
        ("synth-data", data),
        ("train-embed", embed_runs[0].clone()),
        ("train-gen", default_runs[0].clone()),
        ("synth-features", synth),
        ("eval", eval_dirs[0].clone()),
        ("gradcheck", root.join("gradcheck")),
    ];
    record(8, "determinism", t, determinism(root, &firsts));

    println!();
    for o in &outcomes {
        println!(
            "{} {} {:<28} {} ({:.0}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.seconds
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria pass", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
