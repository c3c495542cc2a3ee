//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spel::dsp::{preprocess, stft, Frontend, MelFilterbank, Signal, StftConfig};
use spel::engine::{pretrain, select_pseudo, RoundReport, SampleId, SpelData, SpelRunner};
use spel::ensemble::Ensemble;
use spel::harness::experiment::curves_csv;
use spel::harness::{prepare, run_prepared, run_sweep, ExperimentConfig};
use spel::learner::Label;
use spel::metrics::{lrap, mcnemar, McNemar};

use common::{gradient_check, lrap_pairwise, max_abs_diff, random_learner, random_ranking_case, small_experiment, stft_direct};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn stft_oracle() -> Verdict {
    let started = Instant::now();
    let config = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let len = rng.random_range(config.win_length..=8192);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal = Signal::new(x, 16_000).unwrap();
        let fast = stft(&signal, &config).unwrap();
        worst = worst.max(max_abs_diff(fast.values(), &stft_direct(signal.samples(), &config)));
    }
    let elapsed = started.elapsed();
    verdict(
        worst < 1e-9 && elapsed < Duration::from_secs(10),
        format!("max abs diff {worst:.2e} (< 1e-9) on 20 signals, {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    )
}

fn gradients() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for _ in 0..10 {
        let (params, inputs, targets) = random_learner(&mut rng, 2000);
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        worst = worst.max(gradient_check(&params, &rows, &targets, 1e-5));
        sizes.push(params.len());
    }
    let elapsed = started.elapsed();
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "max relative error {worst:.2e} (< 1e-4) on learners of {:?} parameters, {:.2} s (< 30 s)",
            sizes,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (scores, truth) = random_ranking_case(&mut rng, 100, 24);
        for weighted in [false, true] {
            let got = lrap(scores.view(), &truth, weighted).unwrap();
            worst = worst.max((got - lrap_pairwise(&scores, &truth, weighted)).abs());
        }
    }
    // the same counts reached from per-sample predictions
    let paired = |b: usize, c: usize| {
        let truth = vec![1u8; b + c + 7];
        let mut a = truth.clone();
        let mut other = truth.clone();
        for slot in other.iter_mut().take(b) {
            *slot = 0;
        }
        for slot in a.iter_mut().skip(b).take(c) {
            *slot = 0;
        }
        mcnemar(&a, &other, &truth).unwrap()
    };
    let cases = [(15, 5, 4.05, false), (20, 2, 289.0 / 22.0, true)];
    let mut mcnemar_ok = true;
    for (b, c, expected, significant) in cases {
        for m in [McNemar::from_counts(b, c), paired(b, c)] {
            mcnemar_ok &= (m.b, m.c) == (b, c);
            mcnemar_ok &= (m.statistic - expected).abs() < 1e-9;
            mcnemar_ok &= m.significant == significant;
        }
    }
    // threshold edges: (9 - 1)^2 / 9 = 7.11 rejects, (8 - 1)^2 / 8 = 6.125 does not
    mcnemar_ok &= McNemar::from_counts(9, 0).significant && !McNemar::from_counts(8, 0).significant;
    verdict(
        worst < 1e-12 && mcnemar_ok,
        format!(
            "lrap/wlrap max diff {worst:.1e} (< 1e-12) on 50 100x24 matrices; mcnemar 4.05 / {:.3} and 6.635 threshold {}",
            289.0 / 22.0,
            if mcnemar_ok { "ok" } else { "WRONG" }
        ),
    )
}

fn structural_invariants() -> Verdict {
    let mut config = small_experiment();
    config.spel.seed = 104;
    let data = prepare(&config).unwrap();
    let specs = config.learner_specs(data.n_classes).unwrap();
    let pool = data.unlabeled.len();
    let inputs = data.unlabeled.inputs();
    let spel_data = SpelData {
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
        validation: data.validation.as_ref(),
        test: &data.test,
    };
    let mut failures = Vec::new();
    let mut checked_rounds = 0;
    for m in [10, 50] {
        for k in 0..=5 {
            let mut spel = config.spel.clone();
            spel.m = m;
            spel.k = k;
            let mut history: Vec<(Ensemble, RoundReport)> = Vec::new();
            let mut observer = |e: &Ensemble, r: &RoundReport| -> Result<(), String> {
                history.push((e.clone(), r.clone()));
                Ok(())
            };
            let first = SpelRunner::new(&spel, &specs).run(&spel_data, &mut observer).unwrap();
            for j in 1..=k {
                checked_rounds += 1;
                let report = &history[j].1;
                if report.pseudo_count != (m * j).min(pool) || report.pool_size != data.labeled.len() + report.pseudo_count {
                    failures.push(format!("m={m} k={k} j={j}: pseudo set size {}", report.pseudo_count));
                }
                let previous = &history[j - 1].0;
                let confidence = previous.avg_predict(&inputs).unwrap().confidence;
                let chosen: HashSet<SampleId> = report.pseudo_ids.iter().copied().collect();
                let (mut lo_in, mut hi_out) = (f64::INFINITY, f64::NEG_INFINITY);
                for (id, &c) in data.unlabeled.ids().iter().zip(&confidence) {
                    if chosen.contains(id) {
                        lo_in = lo_in.min(c);
                    } else {
                        hi_out = hi_out.max(c);
                    }
                }
                let fresh = select_pseudo(previous, &data.unlabeled, m * j).unwrap();
                if lo_in < hi_out || fresh.ids != report.pseudo_ids {
                    failures.push(format!("m={m} k={k} j={j}: selection not confidence-dominant"));
                }
            }
            if k == 0 {
                let baseline = pretrain(&spel, &data.labeled, &specs).unwrap();
                if first.predictions != baseline.avg_predict(&data.test.inputs()).unwrap() {
                    failures.push(format!("m={m} k=0 differs from the baseline ensemble"));
                }
            }
            let second = SpelRunner::new(&spel, &specs).run(&spel_data, &mut ()).unwrap();
            if first.predictions != second.predictions {
                failures.push(format!("m={m} k={k}: identical seeds diverged"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("12 (m, k) runs, {checked_rounds} rounds: pool size, dominance, k=0 identity, determinism hold")
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

struct SeedResult {
    baseline: f64,
    spel: f64,
    final_labels: Vec<Label>,
    baseline_labels: Vec<Label>,
    truth: Vec<Label>,
}

fn benchmark_runs(n_members: usize, seeds: std::ops::Range<u64>) -> Vec<SeedResult> {
    seeds
        .map(|seed| {
            let mut config = ExperimentConfig::synthetic_benchmark();
            config.spel.seed = seed;
            config.spel.n = n_members;
            let data = prepare(&config).unwrap();
            let out = run_prepared(&config, &data).unwrap();
            SeedResult {
                baseline: out.record.baseline_test["accuracy"],
                spel: out.record.final_test["accuracy"],
                final_labels: out.predictions.labels,
                baseline_labels: out.baseline.labels,
                truth: out.test_truth,
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn behavioral(results: &[SeedResult], elapsed: Duration) -> Verdict {
    let base = mean(results.iter().map(|r| r.baseline));
    let spel = mean(results.iter().map(|r| r.spel));
    let worst_drop = results.iter().map(|r| r.baseline - r.spel).fold(f64::NEG_INFINITY, f64::max);
    let pooled = |f: fn(&SeedResult) -> &Vec<Label>| results.iter().flat_map(|r| f(r).iter().cloned()).collect::<Vec<_>>();
    let m = mcnemar(&pooled(|r| &r.final_labels), &pooled(|r| &r.baseline_labels), &pooled(|r| &r.truth)).unwrap();
    let per_seed: Vec<String> = results.iter().map(|r| format!("{:.3}->{:.3}", r.baseline, r.spel)).collect();
    verdict(
        spel > base && worst_drop <= 0.005 && m.significant && elapsed < Duration::from_secs(900),
        format!(
            "baseline {base:.4} -> spel {spel:.4}; worst per-seed drop {worst_drop:+.4} (<= 0.005); pooled mcnemar {:.1} (b={}, c={}, > 6.635); {:.0} s (< 900 s); seeds [{}]",
            m.statistic,
            m.b,
            m.c,
            elapsed.as_secs_f64(),
            per_seed.join(" ")
        ),
    )
}

fn ensemble_vs_single(ensemble: &[SeedResult], single: &[SeedResult]) -> Verdict {
    let gain = |rs: &[SeedResult]| mean(rs.iter().map(|r| r.spel - r.baseline));
    let (e, s) = (gain(ensemble), gain(single));
    verdict(
        e >= s,
        format!("mean gain: 5-member ensemble {e:+.4} >= single model {s:+.4}"),
    )
}

fn improvement_curves() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::synthetic_benchmark();
    config.output_dir = dir.path().to_path_buf();
    config.sweep.m_values = vec![50];
    config.sweep.k_max = Some(6);
    let entries = run_sweep(&config).unwrap();
    let text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut lines = text.lines();
    let mut ok = lines.next() == Some("m,k,round,improvement") && text == curves_csv(&entries);
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    for e in &entries {
        let own: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == e.k.to_string()).collect();
        ok &= own.len() == e.k + 1;
        ok &= own.iter().enumerate().all(|(j, r)| r.len() == 4 && r[2] == j.to_string() && r[3].parse::<f64>().is_ok());
        ok &= own.first().is_some_and(|r| r[3].parse::<f64>() == Ok(0.0));
    }
    ok &= entries.iter().map(|e| e.k).collect::<Vec<_>>() == (1..=6).collect::<Vec<_>>();
    let longest = entries.last().unwrap();
    let curve: Vec<String> = longest.record.rounds.iter().map(|r| format!("{:+.3}", r.improvement)).collect();
    verdict(
        ok,
        format!("k = 1..6 emitted with k+1 rows each and improvement(0) = 0; m=50 k=6 curve [{}]", curve.join(" ")),
    )
}

fn dsp_contract() -> Verdict {
    let config = StftConfig::default();
    let fb = MelFilterbank::new(256, 1024, 16_000, 0.0, 8000.0).unwrap();
    let frontend = Frontend::new(config.clone(), 256, 16_000, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut violations = 0;
    for i in 0..1000 {
        let len = rng.random_range(1..=24_000);
        let amplitude = 10f64.powf(rng.random_range(-6.0..3.0));
        let samples: Vec<f64> = match i % 6 {
            0 => (0..len).map(|_| amplitude * rng.random_range(-1.0..1.0)).collect(),
            1 => vec![0.0; len],
            2 => {
                let f = rng.random_range(20.0..7990.0);
                (0..len).map(|n| amplitude * (2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0).sin()).collect()
            }
            3 => (0..len).map(|n| if n % 997 == 0 { amplitude } else { 0.0 }).collect(),
            4 => vec![amplitude; len],
            _ => (0..len).map(|n| if (n / 40) % 2 == 0 { amplitude } else { -amplitude }).collect(),
        };
        let signal = Signal::new(samples, 16_000).unwrap();
        let target = if i % 2 == 0 { frontend.target_samples } else { rng.random_range(512..=32_000) };
        match preprocess(&signal, &config, &fb, target) {
            Ok(image) => {
                let shape_ok = image.shape() == (config.frame_count(target), 256);
                let range_ok = image.values().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v));
                if !(shape_ok && range_ok) {
                    violations += 1;
                }
            }
            Err(_) => violations += 1,
        }
    }
    verdict(
        violations == 0,
        format!("1000 fuzzed clips at 1024/64/512/256: {violations} violations"),
    )
}

fn report(index: usize, name: &str, v: &Verdict) {
    println!("{} criterion {index} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() {
    let started = Instant::now();
    let mut all = Vec::new();
    let mut record = |index: usize, name: &str, v: Verdict| {
        report(index, name, &v);
        all.push(v.pass);
    };
    record(1, "stft oracle", stft_oracle());
    record(2, "gradients", gradients());
    record(3, "metric oracles", metric_oracles());
    record(4, "self-paced loop invariants", structural_invariants());

    let bench_started = Instant::now();
    let ensemble = benchmark_runs(5, 0..10);
    let elapsed = bench_started.elapsed();
    record(5, "spel beats the baseline ensemble", behavioral(&ensemble, elapsed));
    let single = benchmark_runs(1, 0..10);
    record(6, "ensemble gains at least as much as one model", ensemble_vs_single(&ensemble, &single));
    record(7, "improvement curves", improvement_curves());
    record(8, "frontend contract", dsp_contract());

    let passed = all.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed in {:.0} s", all.len(), started.elapsed().as_secs_f64());
    if passed != all.len() {
        std::process::exit(1);
    }
}
