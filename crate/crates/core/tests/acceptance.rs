//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use renewal_core::embedding::EmbeddingVocabulary;
use renewal_core::gateway::{scan_argmax, CachedBackend, CountingBackend, OracleParams, SyntheticOracle};
use renewal_core::metrics::{improvement_rate, Metric, RewardSpec};
use renewal_core::optimizer::acquisition::expected_improvement;
use renewal_core::optimizer::{GpModel, GpParams};
use renewal_core::pipeline::{
    bucket_morphology, ingest_manifest, process_record, run_batch, write_outputs, Method, MorphologyBucket,
    PipelineSettings, RecordStatus,
};
use renewal_core::prompt::ScenarioId;
use renewal_core::synthetic::{self, VocabSpec};

use common::{mixed_records, snapshot, write_manifest, FixtureRecord};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn a1_gp_dense_solve() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let n = rng.gen_range(3..=10);
        let dim = rng.gen_range(2..=6);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| gaussian(&mut rng)).collect()).collect();
        let ys: Vec<f64> = (0..n).map(|_| 2.0 * gaussian(&mut rng)).collect();
        let params = GpParams { lengthscale: rng.gen_range(0.5..2.0), noise: 1e-6, signal_floor: 1e-4 };
        let model = GpModel::fit(xs.clone(), &ys, &params).map_err(|e| e.to_string())?;

        let mean_y = ys.iter().sum::<f64>() / n as f64;
        let sf2 = (ys.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / n as f64).max(params.signal_floor);
        let k = |a: &[f64], b: &[f64]| {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            sf2 * (-d2 / (2.0 * params.lengthscale.powi(2))).exp()
        };
        let gram = DMatrix::from_fn(n, n, |i, j| {
            k(&xs[i], &xs[j]) + if i == j { params.noise + model.jitter() } else { 0.0 }
        });
        let lu = gram.lu();
        let y = DVector::from_column_slice(&ys);
        let alpha = lu.solve(&y).ok_or("singular gram matrix")?;

        let probes = rng.gen_range(50..=100);
        for _ in 0..probes {
            let x: Vec<f64> = (0..dim).map(|_| 1.5 * gaussian(&mut rng)).collect();
            let ks = DVector::from_iterator(n, xs.iter().map(|xi| k(xi, &x)));
            let mu = ks.dot(&alpha);
            let v = (sf2 - ks.dot(&lu.solve(&ks).ok_or("singular gram matrix")?)).max(0.0);
            let p = model.predict(&x).map_err(|e| e.to_string())?;
            let err = (p.mean - mu).abs().max((p.stddev * p.stddev - v).abs());
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("instance {inst}: |diff| {err:e} > 1e-8"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("5 instances, max |diff| {worst:.1e}, {:.2?}", start.elapsed()))
}

fn a2_ei_monte_carlo() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tuples: Vec<(f64, f64, f64, f64)> = vec![(1.0, 0.0, 0.5, 0.01), (0.2, 0.0, 0.5, 0.0), (-3.0, 0.0, -3.0, 0.0)];
    while tuples.len() < 20 {
        tuples.push((rng.gen_range(-2.0..2.0), rng.gen_range(0.05..1.5), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..0.1)));
    }
    let mut worst = 0.0f64;
    for (i, &(mean, sd, best, xi)) in tuples.iter().enumerate() {
        let mut mc_rng = ChaCha8Rng::seed_from_u64(77 + i as u64);
        // antithetic pairs: 1e6 draws of f in total
        let pairs = 500_000;
        let total: f64 = (0..pairs)
            .map(|_| {
                let z = gaussian(&mut mc_rng);
                (mean + sd * z - best - xi).max(0.0) + (mean - sd * z - best - xi).max(0.0)
            })
            .sum();
        let mc = total / (2 * pairs) as f64;
        let ei = expected_improvement(mean, sd, best, xi);
        let err = (ei - mc).abs();
        worst = worst.max(err);
        ensure(err <= 2e-3, || format!("tuple {i} {:?}: closed {ei} vs mc {mc}", tuples[i]))?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("20 tuples (3 with stddev 0), max |diff| {worst:.1e}, {:.2?}", start.elapsed()))
}

fn a3_optimizer_vs_baselines() -> Check {
    let start = Instant::now();
    let vocab = Arc::new(synthetic::vocabulary(&VocabSpec { words: 2000, dim: 16, jitter: 0.02, seed: 1 }).unwrap());
    let mp_word = "Beautiful";
    let excluded: Vec<String> =
        vocab.nearest_neighbors(mp_word, 21, false).unwrap().into_iter().map(|n| n.word).collect();
    let dir = tempfile::tempdir().unwrap();
    let runs = 20;
    let records: Vec<FixtureRecord> =
        (0..runs).map(|i| FixtureRecord::new(&format!("run{i:02}"), ScenarioId::GSE, 1.0, true)).collect();
    let manifest = ingest_manifest(&write_manifest(dir.path(), &records)).map_err(|e| e.to_string())?;
    let spec = RewardSpec::single(Metric::Beauty);

    let (mut bo, mut sw, mut mp) = (Vec::new(), Vec::new(), Vec::new());
    let mut near_optimal = 0;
    for (i, record) in manifest.records.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let star = loop {
            let w = vocab.word(rng.gen_range(0..vocab.len()));
            if !excluded.iter().any(|e| e == w) {
                break w.to_string();
            }
        };
        let oracle =
            SyntheticOracle::new(Arc::clone(&vocab), OracleParams { optimum_word: Some(star), ..Default::default() })
                .map_err(|e| e.to_string())?;
        let optimum = scan_argmax(&oracle.scan(&record.id, &spec).map_err(|e| e.to_string())?).unwrap().reward;

        let settings = PipelineSettings { global_seed: i as u64, ..Default::default() };
        let outcome = process_record(record, &vocab, &oracle, &settings);
        ensure(outcome.failures.is_empty(), || format!("{}: {:?}", record.id, outcome.failures))?;
        let reward_of = |m: Method| outcome.results.iter().find(|r| r.method == m).map(|r| r.reward).unwrap();
        let b = reward_of(Method::BO);
        if b >= 0.9 * optimum {
            near_optimal += 1;
        }
        bo.push(b);
        sw.push(reward_of(Method::SW));
        mp.push(reward_of(Method::MP));
    }
    let (mb, ms, mm) = (median(&mut bo), median(&mut sw), median(&mut mp));
    let rate = near_optimal as f64 / runs as f64;
    ensure(rate >= 0.8, || format!("only {near_optimal}/{runs} runs reached 0.9 x optimum"))?;
    ensure(mb > ms && mb > mm, || format!("median BO {mb:.4} vs SW {ms:.4}, MP {mm:.4}"))?;
    within(start.elapsed(), Duration::from_secs(180))?;
    Ok(format!(
        "{near_optimal}/{runs} runs >= 0.9 x optimum; median reward BO {mb:.4} > SW {ms:.4}, MP {mm:.4}; {:.2?}",
        start.elapsed()
    ))
}

fn a4_published_rates() -> Check {
    let cases = [(4.78, 5.97, 0.2490), (5.59, 7.65, 0.3685), (6.08, 7.91, 0.3010), (7.79, 8.93, 0.1463)];
    let mut got = Vec::new();
    for (prev, renewal, expected) in cases {
        let r = improvement_rate(prev, renewal).map_err(|e| e.to_string())?;
        ensure((r - expected).abs() <= 5e-5, || format!("{prev} -> {renewal}: {r} != {expected}"))?;
        got.push(format!("{r:.4}"));
    }
    Ok(got.join(", "))
}

fn a5_no_upd_gating() -> Check {
    let vocab = synthetic::vocabulary(&VocabSpec { words: 200, ..Default::default() }).unwrap();
    let oracle = SyntheticOracle::new(Arc::new(vocab.clone()), OracleParams::default()).map_err(|e| e.to_string())?;
    let backend = CountingBackend::new(oracle);
    let dir = tempfile::tempdir().unwrap();
    let records = vec![
        FixtureRecord::new("clean-a", ScenarioId::BR, 1.0, false),
        FixtureRecord::new("clean-b", ScenarioId::NI, 0.2, false),
    ];
    let manifest = ingest_manifest(&write_manifest(dir.path(), &records)).map_err(|e| e.to_string())?;
    ensure(manifest.records.len() == 2, || format!("rejected: {:?}", manifest.rejected))?;
    for record in &manifest.records {
        let outcome = process_record(record, &vocab, &backend, &PipelineSettings::default());
        ensure(outcome.status == RecordStatus::Skipped, || format!("{} status {:?}", record.id, outcome.status))?;
        ensure(outcome.results.is_empty() && outcome.trace.is_none(), || "edited output produced".into())?;
    }
    let report = run_batch(&manifest, &vocab, &backend, &PipelineSettings::default(), 2);
    ensure(report.results().count() == 0, || "batch produced results".into())?;
    ensure(backend.total_calls() == 0, || format!("{} evaluator calls", backend.total_calls()))?;
    Ok("2 records without disorder: 0 evaluator calls, no edits".into())
}

fn a6_determinism_and_cache() -> Check {
    let vocab = Arc::new(synthetic::vocabulary(&VocabSpec { words: 400, ..Default::default() }).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let manifest = ingest_manifest(&write_manifest(&dir.path().join("data"), &mixed_records(8)))
        .map_err(|e| e.to_string())?;
    let settings = PipelineSettings { global_seed: 5, ..Default::default() };
    let cache = dir.path().join("cache");

    let run = |out: &str, workers: usize| -> Result<(usize, Vec<(String, Vec<u8>)>), String> {
        let oracle = SyntheticOracle::new(Arc::clone(&vocab), OracleParams::default()).map_err(|e| e.to_string())?;
        let backend = CachedBackend::new(CountingBackend::new(oracle), &cache).map_err(|e| e.to_string())?;
        let report = run_batch(&manifest, &vocab, &backend, &settings, workers);
        let out = dir.path().join(out);
        write_outputs(&out, &report).map_err(|e| e.to_string())?;
        Ok((backend.inner().total_calls(), snapshot(&out)))
    };
    let (cold_calls, cold) = run("cold", 1)?;
    let (warm_calls, warm) = run("warm", 1)?;
    let (_, parallel) = run("parallel", 4)?;
    ensure(cold_calls > 0, || "cold run made no backend calls".into())?;
    ensure(warm_calls == 0, || format!("warm run made {warm_calls} backend calls"))?;
    ensure(cold == warm, || "warm-cache outputs differ from cold run".into())?;
    ensure(cold.iter().filter(|(p, _)| p.starts_with("traces")).count() == 8, || "missing traces".into())?;
    let tables = |s: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        s.iter().filter(|(p, _)| p.starts_with("report_")).cloned().collect()
    };
    ensure(tables(&cold).len() == 6, || "missing report tables".into())?;
    ensure(tables(&cold) == tables(&parallel), || "workers=4 tables differ from workers=1".into())?;
    ensure(cold == parallel, || "workers=4 outputs differ from workers=1".into())?;
    Ok(format!(
        "cold {cold_calls} calls, warm 0; {} output files byte-identical; workers 1 vs 4 identical",
        cold.len()
    ))
}

fn a7_morphology() -> Check {
    use MorphologyBucket::*;
    let cases = [(0.3, BarelyPopulated), (0.5, LivingSpaces), (1.0, LivingSpaces), (1.5, LivingSpaces), (1.6, UrbanHub)];
    for (a, want) in cases {
        let got = bucket_morphology(a).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("alpha {a}: {got} != {want}"))?;
    }
    Ok("0.3, 0.5, 1.0, 1.5, 1.6 bucketed as expected".into())
}

fn a8_nearest_neighbors() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 24;
    let raw: Vec<(String, Vec<f64>)> =
        (0..10_000).map(|i| (format!("w{i:05}"), (0..dim).map(|_| gaussian(&mut rng)).collect())).collect();
    let vocab = EmbeddingVocabulary::from_entries(raw.clone(), false).map_err(|e| e.to_string())?;
    let norms: Vec<f64> = raw.iter().map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    for q in 0..100 {
        let qi = rng.gen_range(0..raw.len());
        let k = [1, 10, 50][q % 3];
        let mut scan: Vec<(f64, &str)> = (0..raw.len())
            .filter(|&j| j != qi)
            .map(|j| {
                let dot: f64 = raw[qi].1.iter().zip(&raw[j].1).map(|(a, b)| a * b).sum();
                (dot / (norms[qi] * norms[j]), raw[j].0.as_str())
            })
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let got = vocab.nearest_neighbors(&raw[qi].0, k, true).map_err(|e| e.to_string())?;
        ensure(got.len() == k, || format!("query {qi}: {} results for k {k}", got.len()))?;
        for (rank, (n, (sim, word))) in got.iter().zip(&scan).enumerate() {
            ensure(n.word == *word, || format!("query {qi} rank {rank}: {} != {word}", n.word))?;
            ensure((n.similarity - sim).abs() <= 1e-9, || format!("query {qi} rank {rank}: similarity differs"))?;
        }
    }
    Ok(format!("100 queries on 10000 words match exhaustive scan; {:.2?}", start.elapsed()))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Check); 8] = [
        ("A1", "GP posterior matches dense solve", a1_gp_dense_solve),
        ("A2", "EI matches Monte Carlo", a2_ei_monte_carlo),
        ("A3", "optimizer beats baselines and nears optimum", a3_optimizer_vs_baselines),
        ("A4", "improvement rates on published scores", a4_published_rates),
        ("A5", "no-disorder records are not edited", a5_no_upd_gating),
        ("A6", "determinism and cache soundness", a6_determinism_and_cache),
        ("A7", "morphology bucketing", a7_morphology),
        ("A8", "nearest neighbours match exhaustive scan", a8_nearest_neighbors),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("{id} PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("{id} FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("{id} FAIL  {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
