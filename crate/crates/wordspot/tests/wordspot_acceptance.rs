//! Acceptance suite: criteria 1-10, one PASS/FAIL line each.
//!
//! Run with `cargo test -p wordspot-interface --test wordspot_acceptance`. Exits non-zero when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use wordspot_core::eval::{compare_strategies, Comparison};
use wordspot_core::feedback::{rocchio_combined, rocchio_negative, rocchio_positive};
use wordspot_core::subspace::{compute_covariance, eigendecompose, SquareMatrix, DEFAULT_VARIANCE};
use wordspot_core::{
    fit_pca, rank, CorpusIndex, EvalConfig, PcaModel, QueryVector, Retention, WordBox, WordDescriptor, WordEntry,
    DESCRIPTOR_LEN,
};

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

fn random_index(rng: &mut StdRng, n: usize) -> CorpusIndex {
    let mut ids: Vec<u64> = (0..n as u64).map(|i| 5 * i + 3).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    let entries = ids
        .into_iter()
        .map(|id| {
            let d: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random()).collect();
            WordEntry {
                word_id: id,
                doc_id: id % 7,
                bbox: WordBox::new(0, 0, 1, 1),
                descriptor: WordDescriptor::from_slice(&d).unwrap(),
                label: None,
            }
        })
        .collect();
    CorpusIndex::new(entries).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst_rate = 0.0f64;
    for _ in 0..10 {
        let index = random_index(&mut rng, 200);
        for _ in 0..10 {
            let q: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random()).collect();
            let got = rank(&QueryVector::original(&q).unwrap(), &index).unwrap();
            let mut want: Vec<(u64, f64)> = index
                .entries()
                .iter()
                .map(|e| {
                    let mut d = 0.0;
                    for (a, b) in q.iter().zip(e.descriptor.as_slice()) {
                        d += (a - b).abs();
                    }
                    (e.word_id, d)
                })
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let max = want.last().unwrap().1;
            for (r, (id, d)) in got.results.iter().zip(&want) {
                if r.word_id != *id {
                    return outcome(false, format!("order differs at word {id}"));
                }
                if !(0.0..=100.0).contains(&r.rate) {
                    return outcome(false, format!("rate {} out of range", r.rate));
                }
                worst_rate = worst_rate.max((r.rate - 100.0 * (1.0 - d / max)).abs());
            }
            if got.results.last().unwrap().rate != 0.0 {
                return outcome(false, "farthest entry rate is not 0");
            }
        }
    }
    outcome(worst_rate <= 1e-9, format!("100 queries on 10 indices of 200; max rate error {worst_rate:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut identities = true;
    let empty: Vec<Vec<f64>> = Vec::new();
    for _ in 0..1000 {
        let q0: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random()).collect();
        let q = QueryVector::original(&q0).unwrap();
        let nr = rng.random_range(1..8);
        let nn = rng.random_range(1..8);
        let rel: Vec<Vec<f64>> = (0..nr).map(|_| (0..DESCRIPTOR_LEN).map(|_| rng.random()).collect()).collect();
        let non: Vec<Vec<f64>> = (0..nn).map(|_| (0..DESCRIPTOR_LEN).map(|_| rng.random()).collect()).collect();
        let alpha: f64 = rng.random_range(0.0..2.0);
        let beta: f64 = rng.random_range(0.0..2.0);
        let gamma: f64 = rng.random_range(0.0..2.0);
        let mean = |set: &[Vec<f64>], k: usize| set.iter().map(|v| v[k]).sum::<f64>() / set.len() as f64;

        let pos = rocchio_positive(&q, &rel, alpha, beta).unwrap();
        let neg = rocchio_negative(&q, &non, alpha, gamma).unwrap();
        let both = rocchio_combined(&q, &rel, &non, alpha, beta, gamma).unwrap();
        for k in 0..DESCRIPTOR_LEN {
            let base = alpha * q0[k];
            worst = worst
                .max((pos.values()[k] - (base + beta * mean(&rel, k))).abs())
                .max((neg.values()[k] - (base - gamma * mean(&non, k))).abs())
                .max((both.values()[k] - (base + beta * mean(&rel, k) - gamma * mean(&non, k))).abs());
        }
        identities &= rocchio_combined(&q, &rel, &empty, alpha, beta, gamma).unwrap() == pos;
        identities &= rocchio_combined(&q, &empty, &non, alpha, beta, gamma).unwrap() == neg;
        let same = rocchio_combined(&q, &rel, &rel, alpha, beta, beta).unwrap();
        identities &= same.values().iter().zip(&q0).all(|(v, x)| *v == alpha * x);
    }
    outcome(
        worst <= 1e-12 && identities,
        format!("1000 cases, max deviation {worst:.1e}; reduction identities exact: {identities}"),
    )
}

fn check_eigen(r: &SquareMatrix) -> (f64, f64, f64, f64) {
    let n = r.n();
    let eig = eigendecompose(r).unwrap();
    let lead = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut recon = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| eig.vectors[k][i] * eig.values[k] * eig.vectors[k][j]).sum();
            recon = recon.max((v - r.get(i, j)).abs());
        }
    }
    let trace_err = (eig.values.iter().sum::<f64>() - r.trace()).abs() / r.trace().abs().max(1e-300);
    let mut ortho = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = eig.vectors[i].iter().zip(&eig.vectors[j]).map(|(a, b)| a * b).sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    (recon / lead.max(1.0), trace_err, ortho, lead)
}

fn criterion_3(corpus_samples: &[&[f64]]) -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut mats = Vec::new();
    mats.push(compute_covariance(corpus_samples).unwrap().1);
    for n in [2, 5, 10, 30, 93] {
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(0.0..1.0) + if i == j { 1.0 } else { 0.0 };
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        mats.push(m);
    }
    let (mut recon, mut trace, mut ortho) = (0.0f64, 0.0f64, 0.0f64);
    for m in &mats {
        let (r, t, o, _) = check_eigen(m);
        recon = recon.max(r);
        trace = trace.max(t);
        ortho = ortho.max(o);
    }
    let hand = eigendecompose(&SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap()).unwrap();
    let hand_ok = (hand.values[0] - 2.0).abs() < 1e-12 && hand.values[1].abs() < 1e-12;
    outcome(
        recon <= 1e-8 && trace <= 1e-8 && ortho <= 1e-9 && hand_ok,
        format!(
            "corpus covariance + 5 random: recon {recon:.1e}*max(1,l1), trace {trace:.1e}, ortho {ortho:.1e}; [[1,1],[1,1]] -> ({:.3}, {:.3})",
            hand.values[0], hand.values[1]
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for dim in 4..=10 {
        let a = DMatrix::<f64>::from_fn(dim, dim, |i, j| {
            if i == j {
                1.0 + 0.25 * i as f64
            } else {
                rng.random_range(-0.2..0.2)
            }
        });
        let xs: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let z = DVector::<f64>::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
                (&a * z).iter().copied().collect()
            })
            .collect();
        let model = fit_pca(&xs, Retention::Fixed(dim), true).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().fold(DVector::zeros(dim), |s, x| s + DVector::from_column_slice(x)) / n;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for x in &xs {
            let c = DVector::from_column_slice(x) - &mean;
            cov += &c * c.transpose();
        }
        let inv = (cov / n).try_inverse().unwrap();
        for _ in 0..50 {
            let (p, q) = (&xs[rng.random_range(0..xs.len())], &xs[rng.random_range(0..xs.len())]);
            let d = DVector::from_column_slice(p) - DVector::from_column_slice(q);
            let want = (d.transpose() * &inv * &d)[(0, 0)].sqrt();
            if want > 0.0 {
                worst = worst.max((model.whitened_distance(p, q).unwrap() - want).abs() / want);
            }
        }
    }
    outcome(worst <= 1e-6, format!("dims 4..=10, 50 pairs each; max relative error {worst:.1e}"))
}

fn criterion_5(samples: &[&[f64]]) -> Outcome {
    let full = fit_pca(samples, Retention::Fixed(DESCRIPTOR_LEN), false).unwrap();
    let total: f64 = full.eigenvalues().iter().sum();
    let mut worst = 0.0f64;
    let mut monotone = full.eigenvalues().windows(2).all(|w| w[0] >= w[1]);
    let mut previous = f64::INFINITY;
    let sweep = [1, 2, 5, 10, 20, 30, 40, 50, 60, 70, 80, 93];
    for &m in &sweep {
        let model = truncate(&full, m);
        let je = model.reconstruction_error();
        let mut sum = 0.0;
        for x in samples {
            let back = model.reconstruct(&model.project(x).unwrap()).unwrap();
            sum += x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let empirical = sum / samples.len() as f64;
        worst = worst.max((je - empirical).abs() / je.max(1e-10 * total));
        monotone &= empirical <= previous + 1e-12 * total;
        previous = empirical;
    }
    outcome(
        worst <= 1e-8 && monotone,
        format!(
            "{} corpus descriptors, m in {sweep:?}; max relative gap {worst:.1e}; non-increasing: {monotone}",
            samples.len()
        ),
    )
}

fn truncate(full: &PcaModel, m: usize) -> PcaModel {
    let n = full.source_dim();
    PcaModel::from_parts(
        full.mean().to_vec(),
        full.eigenvalues().to_vec(),
        full.basis()[..m * n].to_vec(),
        m,
        full.whitening_scales()[..m].to_vec(),
        full.epsilon(),
        false,
    )
    .unwrap()
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn criterion_6(c: &Comparison) -> Outcome {
    let (b, p) = (c.row("baseline").unwrap(), c.row("positive").unwrap());
    let dp = p.avg_precision - b.avg_precision;
    let dr = p.avg_recall - b.avg_recall;
    outcome(
        dp >= 0.03 && dr.abs() <= 0.02,
        format!(
            "precision {} -> {} (delta {:+.2} pts, need >= +3); recall {} -> {} (delta {:+.2} pts, need within 2)",
            pct(b.avg_precision),
            pct(p.avg_precision),
            100.0 * dp,
            pct(b.avg_recall),
            pct(p.avg_recall),
            100.0 * dr
        ),
    )
}

fn criterion_7(c: &Comparison) -> Outcome {
    let (b, p, n) = (c.row("baseline").unwrap(), c.row("positive").unwrap(), c.row("negative").unwrap());
    let first = p.avg_precision > n.avg_precision;
    let second = n.avg_precision <= b.avg_precision;
    outcome(
        first && second,
        format!(
            "positive {} > negative {}: {first}; negative <= baseline {}: {second}",
            pct(p.avg_precision),
            pct(n.avg_precision),
            pct(b.avg_precision)
        ),
    )
}

fn criterion_8(c: &Comparison) -> Outcome {
    let (p, n, k) = (c.row("positive").unwrap(), c.row("negative").unwrap(), c.row("combined").unwrap());
    let (lo, hi) = if p.avg_precision <= n.avg_precision {
        (p.avg_precision, n.avg_precision)
    } else {
        (n.avg_precision, p.avg_precision)
    };
    let between = lo <= k.avg_precision && k.avg_precision <= hi;
    let near = (k.avg_precision - p.avg_precision).abs() <= 0.02;
    outcome(
        between && near,
        format!(
            "combined {} between negative {} and positive {}: {between}; within 2 pts of positive: {near}",
            pct(k.avg_precision),
            pct(n.avg_precision),
            pct(p.avg_precision)
        ),
    )
}

/// Mean wall time of full-space and subspace ranking over the same queries,
/// interleaved so both see the same machine state. Subspace time includes
/// projecting the query.
fn ranking_times(index: &CorpusIndex, pca_index: &CorpusIndex, queries: &[Vec<f64>], reps: usize) -> (f64, f64) {
    let model = pca_index.pca().unwrap();
    let (mut full, mut sub) = (0.0, 0.0);
    let mut sink = 0usize;
    for rep in 0..reps {
        for q in queries {
            let time_full = |sink: &mut usize| {
                let t = Instant::now();
                *sink += rank(&QueryVector::original(q).unwrap(), index).unwrap().len();
                t.elapsed().as_secs_f64()
            };
            let time_sub = |sink: &mut usize| {
                let t = Instant::now();
                *sink += rank(&QueryVector::projected(model, q).unwrap(), pca_index).unwrap().len();
                t.elapsed().as_secs_f64()
            };
            if rep % 2 == 0 {
                full += time_full(&mut sink);
                sub += time_sub(&mut sink);
            } else {
                sub += time_sub(&mut sink);
                full += time_full(&mut sink);
            }
        }
    }
    assert!(sink > 0);
    let n = (reps * queries.len()) as f64;
    (full / n, sub / n)
}

fn criterion_9(c: &Comparison, index: &CorpusIndex) -> (Outcome, String) {
    let (b, k) = (c.row("baseline").unwrap(), c.row("pca-baseline").unwrap());
    let samples: Vec<&[f64]> = index.descriptors().collect();
    let model = fit_pca(&samples, Retention::Variance(DEFAULT_VARIANCE), true).unwrap();
    let m = model.dim();
    let ratio = model.reconstruction_error() / model.eigenvalues().iter().sum::<f64>();
    let pca_index = index.with_pca(model).unwrap();
    let queries: Vec<Vec<f64>> = c.reports[0]
        .queries
        .iter()
        .map(|q| index.entry(q.source_word_id).unwrap().descriptor.to_vec())
        .collect();
    let _ = ranking_times(index, &pca_index, &queries, 2);
    let (full, sub) = ranking_times(index, &pca_index, &queries, 30);
    let reduction = 1.0 - sub / full;
    let dp = k.avg_precision - b.avg_precision;
    let precision_ok = dp.abs() <= 0.05;
    let speed_ok = reduction >= 0.30;

    let keep20 = (DESCRIPTOR_LEN as f64 * 0.2).round() as usize;
    let full_model = fit_pca(&samples, Retention::Fixed(DESCRIPTOR_LEN), false).unwrap();
    let total: f64 = full_model.eigenvalues().iter().sum();
    let tail20: f64 = full_model.eigenvalues()[keep20..].iter().sum();
    let note = format!(
        "  info: m = {m} of 93 at 0.95 (J_e/total {ratio:.4}); keeping {keep20} dims (dropping 80%) gives J_e/total {:.4}",
        tail20 / total
    );
    (
        outcome(
            precision_ok && speed_ok,
            format!(
                "precision {} vs baseline {} (delta {:+.2} pts, need within 5): {precision_ok}; rank time {:.0} us -> {:.0} us ({:.1}% reduction, need >= 30%): {speed_ok}",
                pct(k.avg_precision),
                pct(b.avg_precision),
                100.0 * dp,
                full * 1e6,
                sub * 1e6,
                100.0 * reduction
            ),
        ),
        note,
    )
}

fn criterion_10(index_path: &Path, dir: &Path) -> Outcome {
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_wordspot"))
            .args(["eval", "--index"])
            .arg(index_path)
            .args(["--strategies", "all", "--seed", "42", "--out"])
            .arg(out)
            .env("RUST_LOG", "warn")
            .output()
            .expect("wordspot eval runs");
        status.status.success()
    };
    let (a, b) = (dir.join("report_a.json"), dir.join("report_b.json"));
    if !run(&a) || !run(&b) {
        return outcome(false, "eval command failed");
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    outcome(x == y, format!("two `eval --seed 42` reports, {} bytes each, identical: {}", x.len(), x == y))
}

fn main() {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let pages = dir.path().join("pages");
    let index_path = dir.path().join("index.dirx");
    let gen = Command::new(env!("CARGO_BIN_EXE_wordspot"))
        .args(["gen-corpus", "--seed", "42", "--out"])
        .arg(&pages)
        .arg("--index")
        .arg(&index_path)
        .env("RUST_LOG", "warn")
        .output()
        .expect("gen-corpus runs");
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let index = CorpusIndex::load(&index_path).expect("index loads");
    let samples: Vec<&[f64]> = index.descriptors().collect();
    println!(
        "acceptance: default synthetic corpus, 100 pages, {} word entries, seed 42",
        index.len()
    );

    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3(&samples));
    report(4, criterion_4());
    report(5, criterion_5(&samples));

    let comparison = compare_strategies(&index, &EvalConfig::default()).expect("comparison runs");
    print!("{}", comparison.to_table());
    report(6, criterion_6(&comparison));
    report(7, criterion_7(&comparison));
    report(8, criterion_8(&comparison));
    let (c9, note) = criterion_9(&comparison, &index);
    report(9, c9);
    println!("{note}");
    report(10, criterion_10(&index_path, dir.path()));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
