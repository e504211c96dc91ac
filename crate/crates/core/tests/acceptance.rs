//! Acceptance suite: runs every criterion in sequence, timing each one, and
//! prints one PASS/FAIL line per criterion. Exits non-zero if any fail.
//!
//! Run a subset by number: `cargo test --test acceptance -- 1 5 10`.
//! `OHNN_BLESS=1` rewrites the golden attack-scenario EERs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ohnn::anonymizer::{decode_model, encode_model, init_stack, model_hash, AnonymizerModel, LohReduction, Variant};
use ohnn::attack::{
    build_anonymizer, distinctiveness, fit_calibration, pair_cosine_report, run_scenarios, AnonymizerKind,
    CalibrationMethod, Scenario, ScenarioConfig,
};
use ohnn::config::DataConfig;
use ohnn::linalg::{Mat, Whitening};
use ohnn::losses::{ClassifierHead, LossConfig, LossVariant};
use ohnn::metrics::{d_diag, eer, g_vd, sweep_eer, weighted_average_eer, Block, ScoreSet, SimilarityMatrix};
use ohnn::pool::{generate_synthetic, pool_stats, EmbeddingPool, Record, Split, SyntheticSpec};
use ohnn::training::{build_batch, gradient_check, train, StackSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn default_pool() -> EmbeddingPool {
    generate_synthetic(&SyntheticSpec::default()).unwrap()
}

fn external_pool(dim: usize) -> EmbeddingPool {
    DataConfig::default().load_external(dim).unwrap()
}

fn scenario_cfg(kind: AnonymizerKind) -> ScenarioConfig {
    let variant = if kind == AnonymizerKind::OhnnLoh { Variant::Loh } else { Variant::Roh };
    ScenarioConfig { anonymizer: kind, stack: StackSpec { variant, ..Default::default() }, ..Default::default() }
}

// 1 --------------------------------------------------------------------------

fn gram_error(w: &Mat) -> f64 {
    let d = w.dim();
    let wt = w.transpose();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let ip = dot(wt.row(i), wt.row(j));
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    worst
}

fn orthogonality() -> Outcome {
    let d = 192;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(u64, u64, Vec<f64>)> =
        (0..100u64).map(|k| (k, rng.random::<u64>() ^ k, gaussian(&mut rng, d))).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = cases.len().div_ceil(threads);
    let (worst_roh, worst_loh) = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut worst = (0.0f64, 0.0f64);
                    for (k, seed, cond) in part {
                        let roh = init_stack(Variant::Roh, d, &[192; 12], *seed, LohReduction::MeanPool).unwrap();
                        worst.0 = worst.0.max(gram_error(&roh.matrix(cond).unwrap()));
                        let reduction = if k % 2 == 0 { LohReduction::MeanPool } else { LohReduction::Diagonal };
                        let loh = init_stack(Variant::Loh, d, &[50; 12], *seed, reduction).unwrap();
                        worst.1 = worst.1.max(gram_error(&loh.matrix(cond).unwrap()));
                    }
                    worst
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    });
    check(
        worst_roh < 1e-9 && worst_loh < 1e-9,
        format!("max |<We_i,We_j> - d_ij|: ROH {worst_roh:.2e}, LOH {worst_loh:.2e}"),
    )
}

// 2 --------------------------------------------------------------------------

fn dense_householder(v: &[f64]) -> Vec<Vec<f64>> {
    let d = v.len();
    let vv = dot(v, v);
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vv).collect()).collect()
}

fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = a.len();
    (0..d).map(|i| (0..d).map(|j| (0..d).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn householder_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let d = rng.random_range(1..=16);
        let layers = rng.random_range(1..=4);
        let sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=d)).collect();
        let variant = if case % 2 == 0 { Variant::Roh } else { Variant::Loh };
        let stack = init_stack(variant, d, &sizes, case, LohReduction::MeanPool).unwrap();
        let x = gaussian(&mut rng, d);
        // W = W_1 W_2 ... W_L with W_l = H_q ... H_1, vectors in storage order
        let mut w = identity(d);
        let mut r = 0;
        for &q in &sizes {
            let mut layer = identity(d);
            for _ in 0..q {
                let v = match variant {
                    Variant::Roh => stack.params()[r * d..(r + 1) * d].to_vec(),
                    Variant::Loh => stack.reflection_vector(r, &x).unwrap().0,
                };
                layer = dense_mul(&dense_householder(&v), &layer);
                r += 1;
            }
            w = dense_mul(&w, &layer);
        }
        let expected: Vec<f64> = w.iter().map(|row| dot(row, &x)).collect();
        let got = ohnn::anonymizer::apply_stack(&stack, &x).unwrap();
        let scale = dot(&x, &x).sqrt().max(1e-300);
        for (g, e) in got.iter().zip(&expected) {
            worst = worst.max((g - e).abs() / scale);
        }
    }
    check(worst < 1e-10, format!("1000 cases, max relative deviation {worst:.2e}"))
}

// 3 --------------------------------------------------------------------------

fn distribution_preservation() -> Outcome {
    let d = 8;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu: Vec<f64> = (0..d).map(|i| 0.5 * i as f64 - 1.0).collect();
    let a: Vec<Vec<f64>> = (0..d).map(|_| gaussian(&mut rng, d)).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = dot(&a[i], &a[j]) / d as f64 + if i == j { 0.5 } else { 0.0 };
        }
    }
    let sigma = Mat::from_row_major(d, cov.clone()).unwrap();
    let whitening = Whitening::from_covariance(&sigma).unwrap();
    let chol = whitening.dewhiten.clone();
    let stack = init_stack(Variant::Roh, d, &[8, 8], 33, LohReduction::MeanPool).unwrap();
    let model = AnonymizerModel::whitened(stack, mu.clone(), whitening, 33).unwrap();

    let mut sum = vec![0.0; d];
    let mut outer = vec![0.0; d * d];
    let mut moved = 0.0;
    let mut outputs = Vec::with_capacity(n);
    for _ in 0..n {
        let z = gaussian(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|i| mu[i] + dot(chol.row(i), &z)).collect();
        let y = model.anonymize(&x).unwrap();
        moved += x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for i in 0..d {
            sum[i] += y[i];
        }
        outputs.push(y);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for y in &outputs {
        for i in 0..d {
            for j in 0..d {
                outer[i * d + j] += (y[i] - mean[i]) * (y[j] - mean[j]);
            }
        }
    }
    let mut worst_mean = 0.0f64;
    let mut worst_cov = 0.0f64;
    for i in 0..d {
        worst_mean = worst_mean.max((mean[i] - mu[i]).abs() / (cov[i * d + i] / n as f64).sqrt());
        for j in 0..d {
            let s = outer[i * d + j] / (n - 1) as f64;
            let sd = ((cov[i * d + i] * cov[j * d + j] + cov[i * d + j].powi(2)) / n as f64).sqrt();
            worst_cov = worst_cov.max((s - cov[i * d + j]).abs() / sd);
        }
    }
    let moved = moved / n as f64;
    check(
        worst_mean < 4.0 && worst_cov < 5.0 && moved > 0.5,
        format!("mean dev {worst_mean:.2} sd (< 4), cov dev {worst_cov:.2} sd (< 5), mean |y - x| {moved:.2}"),
    )
}

// 4 --------------------------------------------------------------------------

fn gradients() -> Outcome {
    let pool = generate_synthetic(&SyntheticSpec {
        num_speakers: 6,
        utterances_per_speaker: 4,
        dim: 6,
        train_speakers: 6,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mu = pool_stats(&pool).unwrap().mean;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for variant in [Variant::Roh, Variant::Loh] {
        for loss in [LossVariant::Aam, LossVariant::Waam] {
            for lambda in [0.0, 20.0] {
                for seed in 0..3u64 {
                    let stack = init_stack(variant, 6, &[3, 3], seed, LohReduction::MeanPool).unwrap();
                    let model = AnonymizerModel::simplified(stack, mu.clone(), seed).unwrap();
                    let head = ClassifierHead::init(6, 6, seed + 100).unwrap();
                    let batch = build_batch(&pool, &model, 8, &mut rng).unwrap();
                    let originals: Vec<&[f64]> = batch.vectors[..4].iter().map(|v| v.as_slice()).collect();
                    let cfg = LossConfig { lambda, ..Default::default() };
                    let gc = gradient_check(&model, &head, &originals, &batch.labels[..4], &cfg, loss).unwrap();
                    worst = worst.max(gc.max_rel_error);
                    checked += gc.checked;
                    skipped += gc.skipped;
                }
            }
        }
    }
    check(
        worst < 1e-4 && checked > 0,
        format!("max relative error {worst:.2e} over {checked} parameters ({skipped} at kinks skipped)"),
    )
}

// 5 --------------------------------------------------------------------------

/// FAR/FRR for "accept if score >= t" by direct counting.
fn rates(s: &ScoreSet, t: f64) -> (f64, f64) {
    let fa = s.nontarget.iter().filter(|&&x| x >= t).count() as f64 / s.nontarget.len() as f64;
    let fr = s.target.iter().filter(|&&x| x < t).count() as f64 / s.target.len() as f64;
    (fa, fr)
}

fn candidate_thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut v: Vec<f64> = s.target.iter().chain(&s.nontarget).copied().collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mut t = vec![v[0] - 1.0];
    t.extend(v.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    t.push(v[v.len() - 1] + 1.0);
    t
}

/// Sweep-and-interpolate EER by enumeration.
fn sweep_oracle(s: &ScoreSet) -> f64 {
    let pts: Vec<(f64, f64)> = candidate_thresholds(s).into_iter().map(|t| rates(s, t)).collect();
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        let (dp, dq) = (p.0 - p.1, q.0 - q.1);
        if dp >= 0.0 && dq <= 0.0 {
            if dp == dq {
                return 0.5 * (p.0 + p.1);
            }
            return p.0 + dp / (dp - dq) * (q.0 - p.0);
        }
    }
    unreachable!()
}

/// Convex-hull EER as the minimum of max(FAR, FRR) over every segment
/// between two operating points.
fn hull_oracle(s: &ScoreSet) -> f64 {
    let pts: Vec<(f64, f64)> = candidate_thresholds(s).into_iter().map(|t| rates(s, t)).collect();
    let mut best = f64::INFINITY;
    for a in &pts {
        for b in &pts {
            best = best.min(a.0.max(a.1));
            let (da, db) = (a.0 - a.1, b.0 - b.1);
            if da * db < 0.0 {
                let t = da / (da - db);
                best = best.min(a.0 + t * (b.0 - a.0));
            }
        }
    }
    best
}

fn eer_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sweep = 0.0f64;
    let mut worst_hull = 0.0f64;
    for case in 0..400 {
        let nt = rng.random_range(1..=50);
        let nn = rng.random_range(1..=100 - nt);
        let shift = rng.random_range(-2.0..3.0);
        let quantize = case % 2 == 0;
        let mut draw = |mu: f64| {
            let x: f64 = mu + rng.sample::<f64, _>(StandardNormal);
            if quantize {
                (x * 2.0).round() / 2.0
            } else {
                x
            }
        };
        let s = ScoreSet::new((0..nt).map(|_| draw(shift)).collect(), (0..nn).map(|_| draw(0.0)).collect());
        worst_sweep = worst_sweep.max((sweep_eer(&s).unwrap().eer - sweep_oracle(&s)).abs());
        worst_hull = worst_hull.max((eer(&s).unwrap().eer - hull_oracle(&s)).abs());
    }
    let n = 20_000;
    let same = ScoreSet::new(
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    );
    let mc_hull = eer(&same).unwrap().eer;
    let mc_sweep = sweep_eer(&same).unwrap().eer;
    let rows = [(39.77, 0.25), (45.81, 0.25), (41.55, 0.20), (44.07, 0.20), (45.93, 0.05), (49.29, 0.05)];
    let weighted = weighted_average_eer(&rows).unwrap();
    check(
        worst_sweep < 1e-12
            && worst_hull < 1e-12
            && (mc_hull - 0.5).abs() <= 0.02
            && (mc_sweep - 0.5).abs() <= 0.02
            && (weighted - 43.28).abs() <= 0.01,
        format!(
            "oracle dev sweep {worst_sweep:.1e} hull {worst_hull:.1e}; identical-distribution EER {mc_hull:.4} \
             (sweep {mc_sweep:.4}); weighted {weighted:.4}"
        ),
    )
}

// 6 --------------------------------------------------------------------------

fn d_diag_oracle(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut diag = 0.0;
    let mut off = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    (diag / n as f64 - off / (n * (n - 1)) as f64).abs()
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut gvd_nonzero = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=20);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let speakers = (0..n).map(|i| format!("s{i}")).collect();
        let m = SimilarityMatrix::from_values(Block::Oo, speakers, rows.concat()).unwrap();
        worst = worst.max((d_diag(&m).unwrap() - d_diag_oracle(&rows)).abs());
        if d_diag(&m).unwrap() > 0.0 && g_vd(&m, &m).unwrap() != 0.0 {
            gvd_nonzero += 1;
        }
    }
    check(
        worst <= 1e-15 && gvd_nonzero == 0,
        format!("d_diag dev {worst:.1e}; g_vd(M, M) != 0 in {gvd_nonzero} of 500"),
    )
}

// 7 --------------------------------------------------------------------------

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/attack_default.json")
}

fn attack_ordering() -> Outcome {
    let pool = default_pool();
    let ext = external_pool(pool.dim());
    let mut eers: BTreeMap<String, f64> = BTreeMap::new();
    for kind in [AnonymizerKind::OhnnRoh, AnonymizerKind::OhnnLoh, AnonymizerKind::Selection] {
        let reports =
            run_scenarios(&pool, Some(&ext), &scenario_cfg(kind), &Scenario::ALL).map_err(|e| e.to_string())?;
        for r in reports {
            eers.insert(format!("{}/{}", kind.as_str(), r.scenario.as_str()), r.eer);
        }
    }
    let get = |k: &str, s: &str| eers[&format!("{k}/{s}")];
    let mut failures = Vec::new();
    for k in ["ohnn-roh", "ohnn-loh", "selection"] {
        if get(k, "unprotected") >= 0.05 {
            failures.push(format!("{k} unprotected {:.4}", get(k, "unprotected")));
        }
    }
    let mut ohnn_informed = f64::INFINITY;
    for k in ["ohnn-roh", "ohnn-loh"] {
        for s in ["ignorant", "lazy-informed", "semi-informed"] {
            if get(k, s) <= 0.30 {
                failures.push(format!("{k} {s} {:.4}", get(k, s)));
            }
            if s != "ignorant" {
                ohnn_informed = ohnn_informed.min(get(k, s));
            }
        }
    }
    let sel = get("selection", "semi-informed");
    if !(sel < 0.15 && sel < ohnn_informed) {
        failures.push(format!("selection semi-informed {sel:.4} vs OHNN informed min {ohnn_informed:.4}"));
    }

    let path = golden_path();
    if std::env::var_os("OHNN_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&eers).unwrap() + "\n").map_err(|e| e.to_string())?;
    }
    let golden: BTreeMap<String, f64> = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .ok_or_else(|| format!("missing golden file {}", path.display()))?;
    let drift: Vec<String> = eers
        .iter()
        .filter(|(k, v)| golden.get(*k).is_none_or(|g| (*g - **v).abs() > 1e-9))
        .map(|(k, v)| format!("{k} {v:.6} vs golden {:?}", golden.get(k)))
        .collect();
    if !drift.is_empty() || golden.len() != eers.len() {
        failures.push(format!("golden mismatch: {drift:?}"));
    }

    let summary = format!(
        "ROH ign/lazy/semi {:.1}/{:.1}/{:.1}%, LOH {:.1}/{:.1}/{:.1}%, selection semi {:.1}%, unprotected {:.1}%",
        100.0 * get("ohnn-roh", "ignorant"),
        100.0 * get("ohnn-roh", "lazy-informed"),
        100.0 * get("ohnn-roh", "semi-informed"),
        100.0 * get("ohnn-loh", "ignorant"),
        100.0 * get("ohnn-loh", "lazy-informed"),
        100.0 * get("ohnn-loh", "semi-informed"),
        100.0 * sel,
        100.0 * get("ohnn-roh", "unprotected"),
    );
    check(
        failures.is_empty(),
        if failures.is_empty() { summary } else { format!("{summary}; {}", failures.join("; ")) },
    )
}

// 8 --------------------------------------------------------------------------

fn gvd_ordering() -> Outcome {
    let pool = default_pool();
    let ext = external_pool(pool.dim());
    let calib = fit_calibration(&pool, CalibrationMethod::Logistic).map_err(|e| e.to_string())?;
    let mut gvd = BTreeMap::new();
    for kind in [AnonymizerKind::OhnnRoh, AnonymizerKind::OhnnLoh, AnonymizerKind::Selection] {
        let cfg = scenario_cfg(kind);
        let anon = build_anonymizer(&pool, Some(&ext), &cfg, cfg.user_seed).map_err(|e| e.to_string())?;
        gvd.insert(kind.as_str(), distinctiveness(&pool, &anon, calib).map_err(|e| e.to_string())?.g_vd_db);
    }
    let sel = gvd["selection"];
    check(
        sel < gvd["ohnn-roh"] && sel < gvd["ohnn-loh"],
        format!("G_VD selection {sel:+.3} dB, ROH {:+.3} dB, LOH {:+.3} dB", gvd["ohnn-roh"], gvd["ohnn-loh"]),
    )
}

// 9 --------------------------------------------------------------------------

fn loss_variant_ordering() -> Outcome {
    let pool = default_pool();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for kind in [AnonymizerKind::OhnnRoh, AnonymizerKind::OhnnLoh] {
        let mut means = Vec::new();
        for loss in [LossVariant::Waam, LossVariant::Aam] {
            let mut cfg = scenario_cfg(kind);
            cfg.train.loss_variant = loss;
            let anon = build_anonymizer(&pool, None, &cfg, cfg.user_seed).map_err(|e| e.to_string())?;
            means.push(pair_cosine_report(&pool, &anon).map_err(|e| e.to_string())?.mean_positive());
        }
        parts.push(format!("{} wAAM {:+.4} vs AAM {:+.4}", kind.as_str(), means[0], means[1]));
        if means[0] >= means[1] {
            failures.push(kind.as_str());
        }
    }
    check(failures.is_empty(), parts.join(", "))
}

// 10 -------------------------------------------------------------------------

fn random_id(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '_', '-', ' ', ',', '"', 'é', 'ß', '語', '🎙'];
    (0..rng.random_range(1..=12)).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn random_value(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => -0.0,
        1 => f32::MAX as f64,
        2 => f32::MIN_POSITIVE as f64,
        3 => f64::from(f32::from_bits(1)),
        _ => rng.sample::<f64, _>(StandardNormal) as f32 as f64,
    }
}

fn fuzz_pool(rng: &mut ChaCha8Rng) -> EmbeddingPool {
    let dim = rng.random_range(1..=24);
    let n = rng.random_range(0..=30);
    let records = (0..n).map(|i| Record {
        speaker: random_id(rng),
        utterance: format!("{}#{i}", random_id(rng)),
        split: [Split::Train, Split::Enroll, Split::Trial][rng.random_range(0..3)],
        vector: (0..dim).map(|_| random_value(rng)).collect(),
    });
    let records: Vec<Record> = records.collect();
    EmbeddingPool::from_records(dim, records).unwrap()
}

fn bits_equal(a: &EmbeddingPool, b: &EmbeddingPool) -> bool {
    a.dim() == b.dim()
        && a.len() == b.len()
        && a.records().iter().zip(b.records()).all(|(x, y)| {
            x.speaker == y.speaker
                && x.utterance == y.utterance
                && x.split == y.split
                && x.vector.iter().map(|v| v.to_bits()).eq(y.vector.iter().map(|v| v.to_bits()))
        })
}

fn determinism() -> Outcome {
    let pool = default_pool();
    let emb_same = pool.to_emb_bytes() == default_pool().to_emb_bytes();

    let small = TrainConfig { iterations: 200, cycle_length: 200, ..Default::default() };
    let spec = StackSpec::default();
    let a = train(&pool, &spec, &small).map_err(|e| e.to_string())?;
    let b = train(&pool, &spec, &small).map_err(|e| e.to_string())?;
    let models_same = encode_model(&a.model) == encode_model(&b.model) && model_hash(&a.model) == model_hash(&b.model);

    let cfg = ScenarioConfig { train: small.clone(), ..Default::default() };
    let ra = run_scenarios(&pool, None, &cfg, &Scenario::ALL).map_err(|e| e.to_string())?;
    let rb = run_scenarios(&pool, None, &cfg, &Scenario::ALL).map_err(|e| e.to_string())?;
    let mut reports_same = ra.len() == rb.len();
    for (x, y) in ra.iter().zip(&rb) {
        let (mut cx, mut cy) = (Vec::new(), Vec::new());
        x.write_scores_csv(&mut cx).unwrap();
        y.write_scores_csv(&mut cy).unwrap();
        reports_same &= x.to_json().unwrap() == y.to_json().unwrap() && cx == cy;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut pool_failures = 0;
    let cases = 256;
    for i in 0..cases {
        let p = fuzz_pool(&mut rng);
        let bytes = p.to_emb_bytes();
        let back = EmbeddingPool::from_emb_bytes(&bytes).map_err(|e| e.to_string())?;
        let mut ok = bits_equal(&p, &back) && back.to_emb_bytes() == bytes;
        if i % 8 == 0 {
            let path = dir.path().join(format!("p{i}.emb"));
            ohnn::pool::save_pool(&p, &path).map_err(|e| e.to_string())?;
            ok &= bits_equal(&p, &ohnn::pool::load_pool(&path).map_err(|e| e.to_string())?);
        }
        pool_failures += usize::from(!ok);
    }
    let mut model_failures = 0;
    for i in 0..cases as u64 {
        let d = rng.random_range(1..=12);
        let sizes: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=d)).collect();
        let variant = if i % 2 == 0 { Variant::Roh } else { Variant::Loh };
        let stack = init_stack(variant, d, &sizes, i, LohReduction::MeanPool).unwrap();
        let model = AnonymizerModel::simplified(stack, gaussian(&mut rng, d), i).unwrap();
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).map_err(|e| e.to_string())?;
        model_failures += usize::from(back != model || encode_model(&back) != bytes);
    }
    check(
        emb_same && models_same && reports_same && pool_failures == 0 && model_failures == 0,
        format!(
            "EMB1 identical {emb_same}, models identical {models_same}, reports identical {reports_same}; \
             round-trip failures: pools {pool_failures}/{cases}, models {model_failures}/{cases}"
        ),
    )
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "orthogonality by construction", limit: Duration::from_secs(30), run: orthogonality },
        Criterion {
            id: 2,
            name: "Householder dense-product oracle",
            limit: Duration::from_secs(5),
            run: householder_oracle,
        },
        Criterion {
            id: 3,
            name: "distribution preservation",
            limit: Duration::from_secs(10),
            run: distribution_preservation,
        },
        Criterion { id: 4, name: "gradient correctness", limit: Duration::from_secs(60), run: gradients },
        Criterion { id: 5, name: "EER machinery", limit: Duration::from_secs(5), run: eer_machinery },
        Criterion { id: 6, name: "metric identities", limit: Duration::from_secs(1), run: metric_identities },
        Criterion {
            id: 7,
            name: "attack-scenario EER ordering",
            limit: Duration::from_secs(180),
            run: attack_ordering,
        },
        Criterion { id: 8, name: "G_VD ordering", limit: Duration::from_secs(60), run: gvd_ordering },
        Criterion { id: 9, name: "loss-variant ordering", limit: Duration::from_secs(180), run: loss_variant_ordering },
        Criterion { id: 10, name: "determinism and persistence", limit: Duration::from_secs(30), run: determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let timing = format!(
            "{:.2}s / {}s{}",
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { " OVER LIMIT" }
        );
        println!("criterion {:>2} {} {} [{timing}]: {detail}", c.id, if pass { "PASS" } else { "FAIL" }, c.name);
        if !pass {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
