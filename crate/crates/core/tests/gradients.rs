mod common;

use rand::Rng;
use sdu_seg::autodiff::{Tape, Var};
use sdu_seg::models::{build_model, BlockKind, ModelConfig};
use sdu_seg::nn::{kaiming_init, DoubleConv, Layer, ParamRole, SduBlock, SduBlockConfig};
use sdu_seg::tensor::{Shape, Tensor};
use sdu_seg::Result;

#[test]
fn every_op_matches_central_differences() {
    for seed in [1, 2] {
        for (name, err) in common::run_op_suite(seed) {
            assert!(err < common::OP_TOLERANCE, "{name}: relative error {err:.3e} (seed {seed})");
        }
    }
}

/// Compares the taped derivative of `loss` along random parameter directions
/// with a central difference along the same direction.
fn directional_error<L, F>(layer: &mut L, loss: F, directions: usize, seed: u64) -> f64
where
    L: Layer<f64>,
    F: Fn(&L, &mut Tape<f64>) -> Result<Var>,
{
    const H: f64 = 1e-7;
    let mut tape = Tape::training();
    let root = loss(layer, &mut tape).unwrap();
    tape.backward(root).unwrap();
    let mut grads = Vec::new();
    layer.visit("", &mut |_, p| {
        if p.role().trainable() {
            grads.push(tape.param_grad(p.id()).map_or(vec![0.0; p.numel()], <[f64]>::to_vec));
        }
    });

    let mut r = common::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let dir: Vec<Vec<f64>> = grads.iter().map(|g| (0..g.len()).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let analytic: f64 = grads.iter().zip(&dir).flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b)).sum();
        let shift = |layer: &mut L, step: f64| {
            let mut k = 0;
            layer.visit_mut("", &mut |_, p| {
                if p.role().trainable() {
                    for (v, d) in p.value_mut().data_mut().iter_mut().zip(&dir[k]) {
                        *v += step * d;
                    }
                    k += 1;
                }
            });
        };
        let eval = |layer: &mut L, step: f64| {
            shift(layer, step);
            let mut t = Tape::training();
            t.set_grad_enabled(false);
            let v = loss(layer, &mut t).unwrap();
            let out = t.value(v).item().unwrap();
            shift(layer, -step);
            out
        };
        let numeric = (eval(layer, H) - eval(layer, -H)) / (2.0 * H);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    worst
}

/// Kaiming weights plus random biases and norm affines, so no unit sits
/// exactly on a ReLU kink.
fn init<L: Layer<f64>>(layer: &mut L, seed: u64) {
    kaiming_init(layer, seed);
    let mut r = common::rng(seed ^ 0xb1a5);
    layer.visit_mut("", &mut |_, p| {
        let (lo, hi) = match p.role() {
            ParamRole::Bias | ParamRole::Shift => (-0.5, 0.5),
            ParamRole::Scale => (0.5, 1.5),
            _ => return,
        };
        for v in p.value_mut().data_mut() {
            *v = r.random_range(lo..hi);
        }
    });
}

fn projection_loss<L: Layer<f64>>(x: Tensor<f64>, w: Tensor<f64>) -> impl Fn(&L, &mut Tape<f64>) -> Result<Var> {
    move |layer, tape| {
        let xv = tape.input(x.clone());
        let y = layer.forward(tape, xv)?;
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv)?;
        Ok(tape.sum(p))
    }
}

#[test]
fn sdu_block_parameter_gradients() {
    let mut r = common::rng(9);
    for (norm, stem) in [(false, None), (true, None), (true, Some(12))] {
        let mut cfg = SduBlockConfig::new(6, 16).with_norm(norm);
        cfg.stem = stem;
        let mut block = SduBlock::<f64>::new(cfg).unwrap();
        init(&mut block, 3);
        let x = common::uniform(&mut r, Shape::new(2, 6, 9, 9), -1.0, 1.0);
        let w = common::uniform(&mut r, Shape::new(2, 16, 9, 9), -1.0, 1.0);
        let err = directional_error(&mut block, projection_loss(x, w), 6, 4);
        assert!(err < 1e-5, "norm {norm}, stem {stem:?}: {err:.3e}");
    }
}

#[test]
fn double_conv_parameter_gradients() {
    let mut r = common::rng(10);
    for norm in [false, true] {
        let mut block = DoubleConv::<f64>::new(3, 5, norm).unwrap();
        init(&mut block, 5);
        let x = common::uniform(&mut r, Shape::new(2, 3, 7, 6), -1.0, 1.0);
        let w = common::uniform(&mut r, Shape::new(2, 5, 7, 6), -1.0, 1.0);
        let err = directional_error(&mut block, projection_loss(x, w), 6, 6);
        assert!(err < 1e-5, "norm {norm}: {err:.3e}");
    }
}

#[test]
fn sdu_block_input_gradient() {
    let mut r = common::rng(11);
    let mut block = SduBlock::<f64>::new(SduBlockConfig::new(2, 16).with_norm(true)).unwrap();
    init(&mut block, 8);
    let x = common::uniform(&mut r, Shape::new(2, 2, 6, 6), -1.0, 1.0);
    let err = common::gradcheck(&[x], |t, v| block.forward(t, v[0]), 12).unwrap();
    assert!(err < 1e-4, "{err:.3e}");
}

#[test]
fn whole_network_through_the_loss() {
    let mut r = common::rng(12);
    // SDU splits need widths divisible by 16, so its miniature is one step wider.
    let cases = [
        (BlockKind::DoubleConv, [8, 16, 32, 64], 1, false),
        (BlockKind::Sdu, [16, 32, 48, 64], 1, false),
        (BlockKind::Sdu, [16, 32, 48, 64], 2, true),
        (BlockKind::SingleConv, [8, 16, 32, 64], 2, true),
    ];
    for (kind, widths, n, norm) in cases {
        let cfg = ModelConfig::new(kind).with_widths(&widths).with_norm(norm);
        let mut model = build_model::<f64>(&cfg, 21).unwrap();
        init(&mut model, 21);
        let x = common::uniform(&mut r, Shape::new(n, 1, 8, 8), 0.0, 1.0);
        let truth = Tensor::from_fn(Shape::new(n, 1, 8, 8), |n, _, h, w| f64::from((h + w + n) % 3 == 0));
        let loss = move |m: &sdu_seg::models::SegModel<f64>, tape: &mut Tape<f64>| {
            let xv = tape.input(x.clone());
            let p = m.forward(tape, xv)?;
            tape.bi_dice_loss(p, &truth, 1.0)
        };
        let err = directional_error(&mut model, loss, 4, 13);
        assert!(err < 1e-3, "{kind} {widths:?} norm {norm}: {err:.3e}");
    }
}
