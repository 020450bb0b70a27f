//! Acceptance gate. Runs every criterion in order, prints one PASS or FAIL
//! line for each and exits nonzero if any failed.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use sdu_seg::autodiff::Tape;
use sdu_seg::data::{make_folds_for_ids, synth_in_memory, SampleSet, SynthConfig};
use sdu_seg::metrics::{bi_dice_loss, paired_t_test, MaskPair, ScoreSample};
use sdu_seg::models::{BlockKind, ModelConfig, ParameterReport, REFERENCE_TOTALS};
use sdu_seg::nn::{count_trainable, receptive_field, DoubleConv, Layer, ParamRole, SduBlock, SduBlockConfig};
use sdu_seg::tensor::{Shape, Tensor};
use sdu_seg::train::{Checkpoint, TrainConfig, Trainer};

type Outcome = Result<String, String>;

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

fn parameter_economy() -> Outcome {
    let t0 = Instant::now();
    let base = ModelConfig::default().with_widths(&[64, 128, 256, 512]);
    let sdu = ParameterReport::for_config(&base.clone().with_kind(BlockKind::Sdu)).map_err(|e| e.to_string())?;
    let unet = ParameterReport::for_config(&base.clone().with_kind(BlockKind::DoubleConv)).map_err(|e| e.to_string())?;
    let ratio = sdu.total as f64 / unet.total as f64;
    ensure((0.30..=0.50).contains(&ratio), || format!("ratio {ratio:.4} outside [0.30, 0.50]"))?;
    let ratio_plain = sdu.total_without_norm as f64 / unet.total_without_norm as f64;
    ensure((0.30..=0.50).contains(&ratio_plain), || format!("ratio without norm {ratio_plain:.4}"))?;

    let out = Command::new(env!("CARGO_BIN_EXE_sdu-seg"))
        .args(["params", "--arch", "sdu", "--widths", "64,128,256,512"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("params exited with {}", out.status))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let grouped = |n: u64| {
        let s = n.to_string();
        let mut g = String::new();
        for (i, ch) in s.chars().enumerate() {
            if i > 0 && (s.len() - i).is_multiple_of(3) {
                g.push(',');
            }
            g.push(ch);
        }
        g
    };
    let sdu_ref = REFERENCE_TOTALS.iter().find(|r| r.network == "SDU-Net").unwrap().parameters;
    let unet_ref = REFERENCE_TOTALS.iter().find(|r| r.network == "U-Net").unwrap().parameters;
    for needle in [
        grouped(sdu.total),
        grouped(unet.total),
        grouped(sdu_ref),
        grouped(unet_ref),
        format!("{:+}", sdu.total as i64 - sdu_ref as i64),
        format!("{:+}", unet.total as i64 - unet_ref as i64),
    ] {
        ensure(text.contains(&needle), || format!("report lacks {needle:?}"))?;
    }
    within(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "sdu {} / unet {} = {ratio:.4} (reference {:.4})",
        sdu.total,
        unet.total,
        sdu_ref as f64 / unet_ref as f64
    ))
}

/// 3x3 convolution with `c_in` inputs and `c_out` outputs.
fn conv3(c_in: u64, c_out: u64) -> u64 {
    9 * c_in * c_out + c_out
}

fn block_economy() -> Outcome {
    let t0 = Instant::now();
    let sdu = SduBlock::<f32>::new(SduBlockConfig::new(64, 64).with_norm(false)).map_err(|e| e.to_string())?;
    let dc = DoubleConv::<f32>::new(64, 64, false).map_err(|e| e.to_string())?;
    let (got_sdu, got_dc) = (count_trainable(&sdu) as u64, count_trainable(&dc) as u64);
    // Branch widths 64/2, 64/4, 64/8, 64/16, 64/16; each branch reads the previous one.
    let oracle_sdu = conv3(64, 32) + conv3(32, 16) + conv3(16, 8) + conv3(8, 4) + conv3(4, 4);
    let oracle_dc = conv3(64, 64) * 2;
    ensure(oracle_sdu == 24_688 && oracle_dc == 73_856, || "closed form disagrees with the stated counts".into())?;
    ensure(got_sdu == oracle_sdu, || format!("sdu block has {got_sdu}, oracle {oracle_sdu}"))?;
    ensure(got_dc == oracle_dc, || format!("double conv has {got_dc}, oracle {oracle_dc}"))?;
    within(t0.elapsed(), Duration::from_secs(1))?;
    Ok(format!("sdu_block {got_sdu}, double_conv {got_dc}"))
}

fn fill_ones(layer: &mut dyn Layer<f64>) {
    layer.visit_mut("", &mut |_, p| {
        let v = if p.role() == ParamRole::Weight { 1.0 } else { 0.0 };
        p.value_mut().data_mut().fill(v);
    });
}

/// Height of the input region with nonzero gradient for the centre pixel of
/// channels `start..start + len` of the layer output.
fn impulse_extent(layer: &dyn Layer<f64>, c_in: usize, start: usize, len: usize) -> Result<usize, String> {
    const SIZE: usize = 128;
    let mut tape = Tape::training();
    let x = tape.input(Tensor::full(Shape::new(1, c_in, SIZE, SIZE), 1.0).requiring_grad());
    let y = layer.forward(&mut tape, x).map_err(|e| e.to_string())?;
    let part = tape.slice_channels(y, start, len).map_err(|e| e.to_string())?;
    let pick = Tensor::from_fn(tape.shape(part), |_, _, h, w| f64::from(h == SIZE / 2 && w == SIZE / 2));
    let pick = tape.constant(pick);
    let masked = tape.mul(part, pick).map_err(|e| e.to_string())?;
    let root = tape.sum(masked);
    tape.backward(root).map_err(|e| e.to_string())?;
    let g = tape.grad(x).ok_or("no input gradient")?;
    let rows: Vec<usize> = (0..SIZE)
        .filter(|&h| (0..c_in).any(|c| (0..SIZE).any(|w| g[(c * SIZE + h) * SIZE + w] != 0.0)))
        .collect();
    let cols: Vec<usize> = (0..SIZE)
        .filter(|&w| (0..c_in).any(|c| (0..SIZE).any(|h| g[(c * SIZE + h) * SIZE + w] != 0.0)))
        .collect();
    let (lo, hi) = (rows[0], *rows.last().unwrap());
    let (clo, chi) = (cols[0], *cols.last().unwrap());
    ensure(0 < lo && hi < SIZE - 1, || "footprint touches the border".into())?;
    ensure(hi - lo == chi - clo, || "footprint is not square".into())?;
    Ok(hi - lo + 1)
}

fn receptive_fields() -> Outcome {
    let t0 = Instant::now();
    let mut sdu = SduBlock::<f64>::new(SduBlockConfig::new(64, 64).with_norm(false)).map_err(|e| e.to_string())?;
    let mut dc = DoubleConv::<f64>::new(64, 64, false).map_err(|e| e.to_string())?;
    let analytic_sdu = receptive_field(&sdu).map_err(|e| e.to_string())?.branches;
    let analytic_dc = receptive_field(&dc).map_err(|e| e.to_string())?.branches;
    ensure(analytic_sdu == [3, 7, 15, 31, 63], || format!("sdu analytic {analytic_sdu:?}"))?;
    ensure(analytic_dc == [5], || format!("double conv analytic {analytic_dc:?}"))?;

    fill_ones(&mut sdu);
    fill_ones(&mut dc);
    let mut start = 0;
    let mut measured = Vec::new();
    for w in sdu.config().branch_widths() {
        measured.push(impulse_extent(&sdu, 64, start, w)?);
        start += w;
    }
    ensure(measured == analytic_sdu, || format!("sdu impulse {measured:?} vs analytic {analytic_sdu:?}"))?;
    let dc_measured = impulse_extent(&dc, 64, 0, 64)?;
    ensure([dc_measured] == analytic_dc[..], || format!("double conv impulse {dc_measured}"))?;
    within(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!("sdu {measured:?}, double conv {{{dc_measured}}}"))
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let results = common::run_op_suite(20_240_601);
    let worst = results.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e < common::OP_TOLERANCE))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure(failing.is_empty(), || format!("over tolerance: {}", failing.join(", ")))?;
    within(t0.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "{} ops x {} instances, worst {} {:.2e}",
        results.len(),
        common::INSTANCES_PER_OP,
        worst.0,
        worst.1
    ))
}

/// The loss formula written out term by term.
fn loss_oracle(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let total = |a: &[f64]| a.iter().sum::<f64>();
    let inv = |a: &[f64]| a.iter().map(|v| 1.0 - v).collect::<Vec<_>>();
    let (pb, qb) = (inv(p), inv(q));
    2.0 - (2.0 * dot(p, q) + eps) / (total(p) + total(q) + eps) - (2.0 * dot(&pb, &qb) + eps) / (total(&pb) + total(&qb) + eps)
}

fn loss_oracles() -> Outcome {
    let p = [1.0, 1.0, 0.0, 0.0];
    let cases: [(&[f64], f64); 3] = [(&[1.0, 1.0, 0.0, 0.0], 0.0), (&[0.0, 0.0, 1.0, 1.0], 1.6), (&[0.5; 4], 0.8)];
    for (q, expected) in cases {
        let pair = MaskPair::new(p.to_vec(), q.to_vec()).map_err(|e| e.to_string())?;
        let got = bi_dice_loss(&pair, 1.0).map_err(|e| e.to_string())?;
        let oracle = loss_oracle(&p, q, 1.0);
        ensure((got - oracle).abs() < 1e-6 && (got - expected).abs() < 1e-6, || {
            format!("q = {q:?}: got {got}, oracle {oracle}, expected {expected}")
        })?;
    }
    let mut r = common::rng(5);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..1000 {
        use rand::Rng;
        let n = r.random_range(1..=64);
        let t: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(0.5) as u8)).collect();
        let q: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { f64::from(r.random_bool(0.5) as u8) } else { r.random() })
            .collect();
        let eps = r.random_range(1e-3..10.0);
        let l = bi_dice_loss(&MaskPair::new(t.clone(), q.clone()).map_err(|e| e.to_string())?, eps).map_err(|e| e.to_string())?;
        ensure((0.0..2.0).contains(&l), || format!("loss {l} out of [0, 2)"))?;
        ensure((l - loss_oracle(&t, &q, eps)).abs() < 1e-9, || "random pair disagrees with the formula".into())?;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    Ok(format!("examples exact, 1000 random pairs in [{lo:.4}, {hi:.4}]"))
}

/// Two-sided p-value of Student's t by Simpson integration of the density.
fn t_two_sided(t: f64, df: f64) -> f64 {
    let ln_gamma = |x: f64| -> f64 {
        // Lanczos, g = 7.
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let tt = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * tt.ln() - tt + a.ln()
    };
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 200_000;
    let a = 0.0;
    let b = t.abs();
    let h = (b - a) / n as f64;
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let central = s * h / 3.0;
    1.0 - 2.0 * central
}

fn statistics_oracle() -> Outcome {
    let d = [0.05, 0.02, 0.04, 0.01, 0.03];
    let sample = ScoreSample {
        a: d.to_vec(),
        b: vec![0.0; d.len()],
    };
    let r = paired_t_test(&sample).map_err(|e| e.to_string())?;
    let oracle_p = t_two_sided(r.t, r.df as f64);
    ensure((r.t - 4.2426).abs() < 1e-4, || format!("t = {}", r.t))?;
    ensure(r.df == 4, || format!("df = {}", r.df))?;
    ensure((r.p - 0.0132).abs() < 1e-3, || format!("p = {}", r.p))?;
    ensure((r.p - oracle_p).abs() < 1e-6, || format!("p = {}, integration gives {oracle_p}", r.p))?;
    Ok(format!("t = {:.4}, df = {}, p = {:.5} (integration {:.5})", r.t, r.df, r.p, oracle_p))
}

fn desk_data() -> Result<(SampleSet, SampleSet), String> {
    let all = synth_in_memory(&SynthConfig::new(250, 64, 7)).map_err(|e| e.to_string())?;
    let ids = all.ids();
    Ok((
        all.select(&ids[..200]).map_err(|e| e.to_string())?,
        all.select(&ids[200..]).map_err(|e| e.to_string())?,
    ))
}

/// Trains until the held-out Dice reaches `target` or the budget runs out.
fn train_to(kind: BlockKind, target: f64, train: &SampleSet, val: &SampleSet) -> Result<(usize, f64), String> {
    const BUDGET: usize = 60;
    let model = ModelConfig::new(kind).with_widths(&[16, 32, 64, 128]);
    let cfg = TrainConfig {
        epochs: BUDGET,
        seed: 7,
        batch_size: 4,
        learning_rate: 5e-5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, cfg).map_err(|e| e.to_string())?;
    trainer.evaluate_initial(train, Some(val)).map_err(|e| e.to_string())?;
    while trainer.epoch() < BUDGET {
        let s = trainer.train_epoch(train, Some(val)).map_err(|e| e.to_string())?;
        let d = s.val_dice.unwrap_or(0.0);
        eprintln!("  {kind} epoch {:>2}: held-out dice {d:.4}", s.epoch);
        if d >= target {
            return Ok((s.epoch, d));
        }
    }
    let best = trainer.best().map_or(0.0, |b| b.val_dice);
    Err(format!("{kind} reached {best:.4} < {target} in {BUDGET} epochs"))
}

fn desk_training() -> Outcome {
    let t0 = Instant::now();
    let (train, val) = desk_data()?;
    let (e_sdu, d_sdu) = train_to(BlockKind::Sdu, 0.90, &train, &val)?;
    let (e_unet, d_unet) = train_to(BlockKind::DoubleConv, 0.85, &train, &val)?;
    within(t0.elapsed(), Duration::from_secs(30 * 60))?;
    Ok(format!(
        "sdu {d_sdu:.4} at epoch {e_sdu}, unet {d_unet:.4} at epoch {e_unet}, {:.0?}",
        t0.elapsed()
    ))
}

fn weight_bits(t: &Trainer) -> Vec<u32> {
    t.checkpoint().weights.iter().map(|v| v.to_bits()).collect()
}

fn determinism() -> Outcome {
    let all = synth_in_memory(&SynthConfig::new(12, 16, 3)).map_err(|e| e.to_string())?;
    let ids = all.ids();
    let (train, val) = (
        all.select(&ids[..8]).map_err(|e| e.to_string())?,
        all.select(&ids[8..]).map_err(|e| e.to_string())?,
    );
    let model = ModelConfig::default().with_widths(&[16, 32, 48, 64]);
    let cfg = |epochs| TrainConfig {
        epochs,
        seed: 11,
        batch_size: 3,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let run = |epochs| -> Result<Trainer, String> {
        let mut t = Trainer::new(&model, cfg(epochs)).map_err(|e| e.to_string())?;
        t.fit(&train, Some(&val), None, &mut |_| {}).map_err(|e| e.to_string())?;
        Ok(t)
    };
    let a = run(4)?;
    let b = run(4)?;
    ensure(weight_bits(&a) == weight_bits(&b), || "same-seed retrain differs".into())?;
    ensure(a.history() == b.history(), || "same-seed histories differ".into())?;

    let bytes = a.checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let restored = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?.to_model().map_err(|e| e.to_string())?;
    let (x, _) = val.batch::<f32>(&[0, 1, 2, 3]).map_err(|e| e.to_string())?;
    let before = a.model().predict(&x).map_err(|e| e.to_string())?;
    let after = restored.predict(&x).map_err(|e| e.to_string())?;
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&before) == bits(&after), || "round-tripped model predicts differently".into())?;

    let mut half = run(2)?;
    let ck = Checkpoint::from_bytes(&half.checkpoint().to_bytes().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    drop(std::mem::replace(&mut half, Trainer::resume(&ck, Some(cfg(4))).map_err(|e| e.to_string())?));
    half.fit(&train, Some(&val), None, &mut |_| {}).map_err(|e| e.to_string())?;
    ensure(weight_bits(&half) == weight_bits(&a), || "resumed run differs from the uninterrupted one".into())?;
    ensure(half.history() == a.history(), || "resumed history differs".into())?;
    ensure(half.adam().steps() == a.adam().steps(), || "optimizer step counts differ".into())?;
    Ok(format!("{} weights bit-identical across retrain, round trip and 2+2 resume", weight_bits(&a).len()))
}

fn fold_protocol() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (2usize..=10, 0usize..=120, any::<u64>());
    runner
        .run(&strategy, |(k, extra, seed)| {
            let n = k + extra;
            let ids: Vec<String> = (0..n).map(|i| format!("img{i:03}")).collect();
            let plan = make_folds_for_ids(&ids, k, seed).unwrap();
            let again = make_folds_for_ids(&ids, k, seed).unwrap();
            prop_assert_eq!(&plan, &again);
            let mut seen: Vec<String> = (0..k).flat_map(|f| plan.validation_ids(f)).collect();
            seen.sort();
            prop_assert_eq!(&seen, &ids);
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            for f in 0..k {
                let share = plan.validation_ids(f).len() as f64 / n as f64;
                prop_assert!((share - 1.0 / k as f64).abs() <= 1.0 / n as f64);
                prop_assert_eq!(plan.training_ids(f).len() + plan.validation_ids(f).len(), n);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let five = make_folds_for_ids(&(0..250).map(|i| format!("s{i:04}")).collect::<Vec<_>>(), 5, 0).map_err(|e| e.to_string())?;
    ensure(five.fold_sizes() == [50; 5], || format!("250 ids in 5 folds: {:?}", five.fold_sizes()))?;
    Ok("256 random plans partition, balance within 1, share 1/k, reproducible".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parameter economy", parameter_economy),
        ("block-level economy", block_economy),
        ("receptive fields", receptive_fields),
        ("gradient suite", gradient_suite),
        ("loss oracles", loss_oracles),
        ("statistics oracle", statistics_oracle),
        ("desk-scale training", desk_training),
        ("determinism and persistence", determinism),
        ("fold protocol", fold_protocol),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{:.1?}]", i + 1, t0.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why} [{:.1?}]", i + 1, t0.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
