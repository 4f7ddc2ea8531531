//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scrubkit::harness::{
    run_cross_position, run_snapshot_probing, run_tracking, run_wer_comparison, Experiment, ExperimentConfig,
};
use scrubkit::io::{ContainerHeader, ContainerReader, ContainerWriter};
use scrubkit::probes::{run_probe_suite, ProbeConfig, ProbeKind};
use scrubkit::synth::{ctc_greedy_decode, wer};
use scrubkit::{guardedness_check, Eraser, EraserTolerances, Error, FormatError, Matrix, MomentAccumulator, ScrubRun};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn guardedness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = separated_gaussians(&mut rng, 2000, 32, 5.0);
    let probes = ProbeConfig::default();
    let (train, test) = data.stratified_split(3);
    let pre = run_probe_suite(ProbeKind::Linear, &train, &test, &probes).map_err(|e| e.to_string())?;
    let eraser = Eraser::fit_labeled(&data, EraserTolerances::default()).map_err(|e| e.to_string())?;
    let post = guardedness_check(&eraser, &data, &probes).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        pre.best() >= 0.95 && post <= 0.55 && secs < 10.0,
        format!("pre F1 {:.3} (>= 0.95), post F1 {post:.3} (<= 0.55), {secs:.2} s (< 10 s)", pre.best()),
    )
}

fn centroid_coalescence() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let h = rng.random_range(4..24);
        let k = rng.random_range(2..6);
        let data = anisotropic(&mut rng, 1500, h, k, 3.0);
        let eraser = Eraser::fit_labeled(&data, EraserTolerances::default()).map_err(|e| e.to_string())?;
        let erased = eraser.erase_set(&data).map_err(|e| e.to_string())?;
        let (pre_means, pre_mean) = class_means(&data);
        let (means, mean) = class_means(&erased);
        let scale = pre_means
            .iter()
            .map(|m| norm(&diff(m, &pre_mean)))
            .fold(norm(&mean), f64::max);
        for m in &means {
            worst = worst.max(norm(&diff(m, &mean)) / scale);
        }
    }
    ensure(worst <= 1e-6, format!("max relative centroid gap {worst:.2e} over 10 datasets (<= 1e-6)"))
}

fn idempotence_and_refit() -> Check {
    let mut worst_idem = 0.0f64;
    let mut worst_refit = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let k = 2 + seed as usize % 3;
        let data = anisotropic(&mut rng, 1500, 16, k, 3.0);
        let eraser = Eraser::fit_labeled(&data, EraserTolerances::default()).map_err(|e| e.to_string())?;
        let a = eraser.projection();
        worst_idem = worst_idem.max(a.matmul(a).sub(a).frobenius_norm());
        let erased = eraser.erase_set(&data).map_err(|e| e.to_string())?;
        let refit = Eraser::fit_labeled(&erased, EraserTolerances::default()).map_err(|e| e.to_string())?;
        worst_refit = worst_refit.max(refit.projection().frobenius_norm());
    }
    ensure(
        worst_idem <= 1e-6 && worst_refit <= 1e-5,
        format!("max ||A^2-A||_F {worst_idem:.2e} (<= 1e-6), max refit ||A'||_F {worst_refit:.2e} (<= 1e-5)"),
    )
}

fn least_damage() -> Check {
    let probes = ProbeConfig::default();
    let mut worst_ratio = 0.0f64;
    let mut worst_f1 = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let data = anisotropic(&mut rng, 2000, 12, 2, 4.0);
        let leace = Eraser::fit_labeled(&data, EraserTolerances::default()).map_err(|e| e.to_string())?;
        let naive = NaiveEraser::fit(&data);
        let rows = rows_of(&data);
        let mut d_leace = 0.0;
        let mut d_naive = 0.0;
        for r in &rows {
            d_leace += norm(&diff(&leace.erase(r).map_err(|e| e.to_string())?, r)).powi(2);
            d_naive += norm(&diff(&naive.erase(r), r)).powi(2);
        }
        worst_ratio = worst_ratio.max(d_leace / d_naive);
        let f1_leace = guardedness_check(&leace, &data, &probes).map_err(|e| e.to_string())?;
        let (tr, te) = naive.erase_set(&data).stratified_split(3);
        let f1_naive = run_probe_suite(ProbeKind::Linear, &tr, &te, &probes).map_err(|e| e.to_string())?.best();
        worst_f1 = worst_f1.max(f1_leace).max(f1_naive);
    }
    ensure(
        worst_ratio <= 1.0 && worst_f1 <= 0.55,
        format!("max LEACE/naive damage ratio {worst_ratio:.4} (<= 1), max post-erasure F1 of either {worst_f1:.3} (<= 0.55)"),
    )
}

fn streaming_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let (n, h, k) = (10_000, 16, 3);
    let shift: Vec<f64> = (0..h).map(|_| rng.random_range(-50.0..50.0)).collect();
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| shift.iter().map(|s| s + 3.0 * normal(&mut rng)).collect())
        .collect();
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k).map(|c| f64::from(u8::from((i * 7 + i / 3) % k == c))).collect())
        .collect();
    let batch = batch_moments(&xs, &zs);

    let mut streamed = MomentAccumulator::new(h, k);
    for (x, z) in xs.iter().zip(&zs) {
        streamed.update(x, z).map_err(|e| e.to_string())?;
    }
    let cuts = [0, 1, 37, 1200, 1201, 5000, 9999, n];
    let shards: Vec<MomentAccumulator> = cuts
        .windows(2)
        .map(|w| {
            let mut acc = MomentAccumulator::new(h, k);
            for i in w[0]..w[1] {
                acc.update(&xs[i], &zs[i]).unwrap();
            }
            acc
        })
        .collect();
    // uneven tree: ((s0 + s1) + (s2 + (s3 + s4))) + (s5 + s6)
    let m = |a: &MomentAccumulator, b: &MomentAccumulator| a.merge(b).unwrap();
    let merged = m(
        &m(&m(&shards[0], &shards[1]), &m(&shards[2], &m(&shards[3], &shards[4]))),
        &m(&shards[5], &shards[6]),
    );

    let mut worst = 0.0f64;
    for acc in [&streamed, &merged] {
        if acc.count() != n as u64 {
            return Err(format!("count {} != {n}", acc.count()));
        }
        worst = worst
            .max(rel_err(acc.mean_x(), &batch.mean_x))
            .max(rel_err(acc.mean_z(), &batch.mean_z))
            .max(rel_err(acc.covariance_xx().as_slice(), batch.cov_xx.as_slice()))
            .max(rel_err(acc.covariance_xz().as_slice(), batch.cov_xz.as_slice()));
    }
    ensure(worst <= 1e-9, format!("max relative error {worst:.2e} over 1e4 samples, streamed and 7-shard merge (<= 1e-9)"))
}

fn cascade(exp: &Experiment, cfg: &ExperimentConfig) -> (Check, Option<ScrubRun>) {
    let start = Instant::now();
    let (run, m) = match run_tracking(exp, &cfg.scrub) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let secs = start.elapsed().as_secs_f64();
    let chance = m.chance;
    let n = m.row_labels.len();
    let col = |name: &str| m.col_labels.iter().position(|c| c == name).unwrap();
    let (il, im, ol) = (col("input_linear"), col("input_mlp"), col("output_linear"));
    let recovery = [1usize, 2, 3, 4];
    let max_in = (0..n).map(|j| m.value(j, il)).fold(0.0, f64::max);
    let min_out_rec = recovery.iter().map(|&j| m.value(j, ol)).fold(1.0, f64::min);
    let max_out_last = (n - 2..n).map(|j| m.value(j, ol)).fold(0.0, f64::max);
    let min_mlp_rec = recovery.iter().map(|&j| m.value(j, im)).fold(1.0, f64::min);
    let check = ensure(
        n == 8 && max_in <= chance + 0.05 && min_out_rec >= 0.9 && max_out_last <= chance + 0.05 && min_mlp_rec >= 0.85 && secs < 120.0,
        format!(
            "input linear max {max_in:.3} (<= {:.3}); output min over recovery layers {min_out_rec:.3} (>= 0.9); \
             output max over last two {max_out_last:.3} (<= {:.3}); input MLP min over recovery layers {min_mlp_rec:.3} (>= 0.85); \
             {secs:.1} s (< 120 s)",
            chance + 0.05,
            chance + 0.05
        ),
    );
    (check, Some(run))
}

fn snapshot_and_cross(exp: &Experiment, probes: &ProbeConfig) -> Check {
    let last = exp.n_states() - 1;
    let snap = run_snapshot_probing(exp, probes, Some(&[last])).map_err(|e| e.to_string())?;
    let cross = run_cross_position(exp, probes, Some(last)).map_err(|e| e.to_string())?;
    let chance = snap.chance;
    let row = snap.row_values(0);
    let ends = row[0].min(row[9]);
    let middle = row[2..=7].iter().copied().fold(0.0, f64::max);
    let corners = [(0, 0), (0, 9), (9, 0), (9, 9)]
        .iter()
        .map(|&(p, q)| cross.value(p, q))
        .fold(1.0, f64::min);
    let diag = (0..10).map(|p| (cross.value(p, p) - row[p]).abs()).fold(0.0, f64::max);
    ensure(
        ends >= 0.9 && middle <= chance + 0.1 && corners >= 0.85 && diag <= 0.03,
        format!(
            "final layer: positions 0/9 min {ends:.3} (>= 0.9), positions 2-7 max {middle:.3} (<= {:.3}); \
             cross {{0,9}}x{{0,9}} min {corners:.3} (>= 0.85); diagonal gap {diag:.3} (<= 0.03)",
            chance + 0.1
        ),
    )
}

fn wer_machinery(exp: &Experiment, cfg: &ExperimentConfig, run: Option<&ScrubRun>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for case in 0..200 {
        let r = random_words(&mut rng, 15, 1);
        let h = random_words(&mut rng, 15, 0);
        let expected = levenshtein_oracle(&r, &h) as f64 / r.len() as f64;
        let got = wer(&r, &h).map_err(|e| e.to_string())?;
        if got != expected {
            return Err(format!("WER case {case}: {got} != oracle {expected}"));
        }
    }
    for case in 0..200 {
        let t = rng.random_range(1..40);
        let v = rng.random_range(2..7);
        let blank = rng.random_range(0..v);
        // small integer logits make ties frequent
        let data: Vec<f64> = (0..t * v).map(|_| f64::from(rng.random_range(0..4u8))).collect();
        let logits = Matrix::from_vec(t, v, data).unwrap();
        let got = ctc_greedy_decode(&logits, blank).map_err(|e| e.to_string())?;
        let expected = ctc_collapse_oracle(&logits, blank);
        if got != expected {
            return Err(format!("CTC case {case}: {got:?} != oracle {expected:?}"));
        }
    }
    let run = run.ok_or("no scrub run to compare")?;
    let head = exp.head(cfg.head_ridge).map_err(|e| e.to_string())?;
    let table = run_wer_comparison(exp, &head, &run.erasers).map_err(|e| e.to_string())?;
    let c = &table.comparison;
    ensure(
        c.delta().abs() <= 0.01,
        format!(
            "WER and CTC match oracles on 200 cases each; orthogonal synth WER {:.4} -> {:.4}, |delta| {:.4} (<= 0.01)",
            c.wer_original,
            c.wer_scrubbed,
            c.delta().abs()
        ),
    )
}

/// Deterministic float stream per record so a file can be checked without
/// holding its contents.
fn record_values(seed: u64, utt: usize, layer: usize, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((utt as u64) << 20) ^ layer as u64);
    (0..len)
        .map(|i| match i % 7 {
            0 => f32::from_bits(rng.random_range(1..0x0080_0000)), // subnormal
            1 => -0.0,
            2 => f32::MAX * rng.random_range(-1.0..1.0),
            _ => normal(&mut rng) as f32,
        })
        .collect()
}

struct Shape {
    h: usize,
    layers: usize,
    utts: usize,
    t_max: usize,
}

fn frames_of(seed: u64, utt: usize, t_max: usize) -> usize {
    1 + (seed as usize * 31 + utt * 17) % t_max
}

fn write_random(path: &std::path::Path, seed: u64, s: &Shape) -> Result<usize, String> {
    let meta = serde_json::json!({ "seed": seed, "note": "randomized" });
    let mut w = ContainerWriter::create(path, ContainerHeader::new(s.h, s.layers, s.utts, meta)).map_err(|e| e.to_string())?;
    let mut largest = 0;
    for u in 0..s.utts {
        let t = frames_of(seed, u, s.t_max);
        largest = largest.max(t * s.h * 4);
        for l in 0..s.layers {
            w.write_raw(&format!("utt-{seed}-{u}"), l as u32, &record_values(seed, u, l, t * s.h))
                .map_err(|e| e.to_string())?;
        }
    }
    w.finish().map_err(|e| e.to_string())?;
    Ok(largest)
}

fn verify_random(path: &std::path::Path, seed: u64, s: &Shape) -> Result<usize, String> {
    let mut r = ContainerReader::open(path).map_err(|e| e.to_string())?;
    if r.header().hidden_dim != s.h || r.header().metadata["seed"] != seed {
        return Err("header mismatch".into());
    }
    let mut peak = 0;
    let mut count = 0;
    while let Some(rec) = r.next_record().map_err(|e| e.to_string())? {
        let (u, l) = (count / s.layers, count % s.layers);
        let expected = record_values(seed, u, l, frames_of(seed, u, s.t_max) * s.h);
        let same = rec.data.len() == expected.len() && rec.data.iter().zip(&expected).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || rec.utterance_id != format!("utt-{seed}-{u}") || rec.layer as usize != l {
            return Err(format!("record {count} differs"));
        }
        peak = peak.max(r.buffer_capacity());
        count += 1;
    }
    if count != s.utts * s.layers {
        return Err(format!("read {count} records, expected {}", s.utts * s.layers));
    }
    Ok(peak)
}

fn fault_cases(dir: &std::path::Path) -> Result<usize, String> {
    let path = dir.join("small.scrb");
    let shape = Shape {
        h: 3,
        layers: 2,
        utts: 2,
        t_max: 4,
    };
    write_random(&path, 9, &shape)?;
    let good = std::fs::read(&path).map_err(|e| e.to_string())?;
    let read_all = |bytes: Vec<u8>| -> scrubkit::Result<usize> {
        let mut r = ContainerReader::new(Cursor::new(bytes))?;
        let mut n = 0;
        while r.next_record()?.is_some() {
            n += 1;
        }
        Ok(n)
    };
    let meta_len = u32::from_le_bytes(good[21..25].try_into().unwrap()) as usize;
    let first_record = 25 + meta_len;

    let mut cases: Vec<(&str, Vec<u8>, fn(&Error) -> bool)> = Vec::new();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    cases.push(("bad magic", bad_magic, |e| matches!(e, Error::Format(FormatError::BadMagic { .. }))));
    let mut version = good.clone();
    version[5..9].copy_from_slice(&7u32.to_le_bytes());
    cases.push(("version", version, |e| matches!(e, Error::Format(FormatError::UnsupportedVersion(7)))));
    for cut in [3, 12, first_record - 2, first_record + 2, first_record + 9, good.len() - 1] {
        cases.push(("truncated", good[..cut].to_vec(), |e| matches!(e, Error::Format(FormatError::Truncated(_)))));
    }
    let mut nan = good.clone();
    let id_len = u32::from_le_bytes(nan[first_record..first_record + 4].try_into().unwrap()) as usize;
    let data_at = first_record + 4 + id_len + 8 + 4; // second float of the first record
    nan[data_at..data_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push(("NaN frame", nan, |e| {
        matches!(e, Error::Format(FormatError::NonFiniteFrame { utterance, frame: 0, dim: 1, .. }) if utterance == "utt-9-0")
    }));
    let mut more = good.clone();
    more[17..21].copy_from_slice(&3u32.to_le_bytes());
    cases.push(("count mismatch", more, |e| matches!(e, Error::Format(FormatError::CountMismatch { declared: 6, found: 4 }))));
    let mut trailing = good.clone();
    trailing.push(0);
    cases.push(("trailing bytes", trailing, |e| matches!(e, Error::Format(FormatError::TrailingBytes))));
    let mut meta = good.clone();
    meta[25] = b'#';
    cases.push(("metadata", meta, |e| matches!(e, Error::Format(FormatError::Header(_)))));

    if read_all(good).map_err(|e| e.to_string())? != 4 {
        return Err("clean file misread".into());
    }
    for (name, bytes, expected) in &cases {
        match read_all(bytes.clone()) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: unexpected outcome {other:?}")),
        }
    }
    Ok(cases.len())
}

fn container_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut shapes: Vec<Shape> = (0..6)
        .map(|_| Shape {
            h: rng.random_range(1..64),
            layers: rng.random_range(1..5),
            utts: rng.random_range(1..30),
            t_max: rng.random_range(1..120),
        })
        .collect();
    // about 98 MB
    shapes.push(Shape {
        h: 256,
        layers: 4,
        utts: 192,
        t_max: 250,
    });
    let mut biggest = 0u64;
    for (i, s) in shapes.iter().enumerate() {
        let path = dir.path().join(format!("c{i}.scrb"));
        let largest = write_random(&path, i as u64, s)?;
        let peak = verify_random(&path, i as u64, s)?;
        let size = std::fs::metadata(&path).map_err(|e| e.to_string())?.len();
        biggest = biggest.max(size);
        if peak > 2 * largest {
            return Err(format!("reader buffer {peak} bytes for largest record of {largest} bytes"));
        }
        std::fs::remove_file(&path).ok();
    }
    let faults = fault_cases(dir.path())?;
    ensure(
        biggest <= 100 * 1024 * 1024,
        format!(
            "{} randomized containers bit-identical (largest {:.1} MB); reader buffer bounded by one record; {faults} fault cases give typed errors",
            shapes.len(),
            biggest as f64 / 1048576.0
        ),
    )
}

fn guarded(name: &str, f: impl FnOnce() -> Check, failures: &mut usize) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL  {name}: {detail}");
        }
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    guarded("guardedness", guardedness, &mut failures);
    guarded("centroid coalescence", centroid_coalescence, &mut failures);
    guarded("idempotence and refit nullity", idempotence_and_refit, &mut failures);
    guarded("least damage vs mean-difference projection", least_damage, &mut failures);
    guarded("streaming and merged moments", streaming_equivalence, &mut failures);

    let cfg = ExperimentConfig::default();
    let exp = Experiment::from_config(&cfg).expect("default synthetic experiment");
    let mut run = None;
    guarded(
        "cascade tracking on the recovery stack",
        || {
            let (check, r) = cascade(&exp, &cfg);
            run = r;
            check
        },
        &mut failures,
    );
    guarded("snapshot and cross-position on the localization stack", || snapshot_and_cross(&exp, &cfg.probes), &mut failures);
    guarded("WER and CTC machinery", || wer_machinery(&exp, &cfg, run.as_ref()), &mut failures);
    guarded("container round trip and faults", container_round_trip, &mut failures);

    println!("{} criteria, {failures} failed", 9);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
