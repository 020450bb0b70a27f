#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdu_seg::autodiff::{Tape, Var};
use sdu_seg::tensor::{Shape, Tensor};
use sdu_seg::Result;

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Rng8, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Root of the checked graph: a fixed random projection of `f`'s output
/// unless it is already a scalar.
fn scalar_root<F>(tape: &mut Tape<f64>, inputs: &[Var], f: &F, weights: &mut Option<Tensor<f64>>, seed: u64) -> Result<Var>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let out = f(tape, inputs)?;
    let shape = tape.shape(out);
    if shape.numel() == 1 {
        return Ok(out);
    }
    let w = weights.get_or_insert_with(|| uniform(&mut rng(seed), shape, -1.0, 1.0)).clone();
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

/// Largest norm-wise relative error `|g - n| / max(|g|, |n|)` over all
/// inputs, comparing taped gradients `g` with central differences `n`.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], f: F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    const H: f64 = 1e-5;
    let mut weights = None;
    let mut tape = Tape::training();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone().requiring_grad())).collect();
    let root = scalar_root(&mut tape, &vars, &f, &mut weights, seed)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor<f64>], weights: &mut Option<Tensor<f64>>| -> Result<f64> {
        let mut tape = Tape::training();
        tape.set_grad_enabled(false);
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.input(t.clone())).collect();
        let root = scalar_root(&mut tape, &vars, &f, weights, seed)?;
        tape.value(root).item()
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        let mut work = inputs.to_vec();
        for i in 0..input.numel() {
            let x0 = input.data()[i];
            work[k].data_mut()[i] = x0 + H;
            let up = eval(&work, &mut weights)?;
            work[k].data_mut()[i] = x0 - H;
            let down = eval(&work, &mut weights)?;
            work[k].data_mut()[i] = x0;
            numeric[i] = (up - down) / (2.0 * H);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic[k].iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic[k]).max(norm(&numeric));
        let err = if scale < 1e-12 { norm(&diff) } else { norm(&diff) / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

pub type GraphFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub f: GraphFn,
}

fn inst(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Instance {
    Instance {
        inputs,
        f: Box::new(f),
    }
}

fn small_shape(r: &mut Rng8, even: bool) -> Shape {
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=3);
    let (h, w) = if even {
        (2 * r.random_range(1..=3), 2 * r.random_range(1..=3))
    } else {
        (r.random_range(2..=5), r.random_range(2..=5))
    };
    Shape::new(n, c, h, w)
}

fn conv_instance(r: &mut Rng8) -> Instance {
    use sdu_seg::autodiff::ConvSpec;
    let k = r.random_range(1..=3);
    let d = r.random_range(1..=2);
    let spec = ConvSpec {
        kernel: (k, k),
        stride: (r.random_range(1..=2), r.random_range(1..=2)),
        padding: (r.random_range(0..=2), r.random_range(0..=2)),
        dilation: (d, d),
    };
    let ext = d * (k - 1) + 1;
    let x = Shape::new(r.random_range(1..=2), r.random_range(1..=3), ext + r.random_range(0..=3), ext + r.random_range(0..=3));
    let c_out = r.random_range(1..=3);
    let wt = Shape::new(c_out, x.c, k, k);
    let with_bias = r.random_bool(0.5);
    let mut inputs = vec![uniform(r, x, -1.0, 1.0), uniform(r, wt, -1.0, 1.0)];
    if with_bias {
        inputs.push(uniform(r, Shape::vector(c_out), -1.0, 1.0));
    }
    inst(inputs, move |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), spec))
}

fn norm_instance(r: &mut Rng8) -> Instance {
    use sdu_seg::autodiff::{ParamId, RunningStats};
    let mut s = small_shape(r, false);
    s.n = 2;
    let c = s.c;
    let inputs = vec![
        uniform(r, s, -2.0, 2.0),
        uniform(r, Shape::vector(c), 0.5, 1.5),
        uniform(r, Shape::vector(c), -0.5, 0.5),
    ];
    let (mk, vk) = (ParamId::fresh(), ParamId::fresh());
    inst(inputs, move |t, v| {
        let mean = vec![0.0; c];
        let var = vec![1.0; c];
        let running = RunningStats {
            mean_key: mk,
            var_key: vk,
            mean: &mean,
            var: &var,
            momentum: 0.1,
        };
        t.batch_norm(v[0], v[1], v[2], running, 1e-5)
    })
}

fn bidice_instance(r: &mut Rng8) -> Instance {
    let s = small_shape(r, false);
    let truth = Tensor::from_vec(s, (0..s.numel()).map(|_| f64::from(r.random_bool(0.4) as u8)).collect()).unwrap();
    let eps = [1.0, 0.1, 1e-2][r.random_range(0..3)];
    inst(vec![uniform(r, s, 0.02, 0.98)], move |t, v| t.bi_dice_loss(v[0], &truth, eps))
}

/// Every differentiable tape operation with a generator of random instances.
pub fn op_suite() -> Vec<(&'static str, fn(&mut Rng8) -> Instance)> {
    use sdu_seg::autodiff::UpsampleMode;
    vec![
        ("conv2d", conv_instance),
        ("max_pool2x2", |r| {
            let s = small_shape(r, true);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| t.max_pool2x2(v[0]))
        }),
        ("upsample2x_bilinear", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok(t.upsample2x(v[0], UpsampleMode::Bilinear)))
        }),
        ("upsample2x_nearest", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok(t.upsample2x(v[0], UpsampleMode::Nearest)))
        }),
        ("concat_channels", |r| {
            let a = small_shape(r, false);
            let b = a.with_channels(r.random_range(1..=3));
            inst(vec![uniform(r, a, -1.0, 1.0), uniform(r, b, -1.0, 1.0)], |t, v| {
                t.concat_channels(&[v[0], v[1], v[0]])
            })
        }),
        ("slice_channels", |r| {
            let mut s = small_shape(r, false);
            s.c = r.random_range(2..=5);
            let start = r.random_range(0..s.c);
            let len = r.random_range(1..=s.c - start);
            inst(vec![uniform(r, s, -1.0, 1.0)], move |t, v| t.slice_channels(v[0], start, len))
        }),
        ("relu", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok(t.relu(v[0])))
        }),
        ("sigmoid", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -4.0, 4.0)], |t, v| Ok(t.sigmoid(v[0])))
        }),
        ("batch_norm", norm_instance),
        ("add", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)], |t, v| t.add(v[0], v[1]))
        }),
        ("mul", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0), uniform(r, s, -1.0, 1.0)], |t, v| t.mul(v[0], v[1]))
        }),
        ("scale", |r| {
            let s = small_shape(r, false);
            let k = r.random_range(-3.0..3.0);
            inst(vec![uniform(r, s, -1.0, 1.0)], move |t, v| Ok(t.scale(v[0], k)))
        }),
        ("add_scalar", |r| {
            let s = small_shape(r, false);
            let k = r.random_range(-3.0..3.0);
            inst(vec![uniform(r, s, -1.0, 1.0)], move |t, v| Ok(t.add_scalar(v[0], k)))
        }),
        ("sum", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok(t.sum(v[0])))
        }),
        ("mean", |r| {
            let s = small_shape(r, false);
            inst(vec![uniform(r, s, -1.0, 1.0)], |t, v| Ok(t.mean(v[0])))
        }),
        ("bi_dice_loss", bidice_instance),
    ]
}

pub const INSTANCES_PER_OP: usize = 20;
pub const OP_TOLERANCE: f64 = 1e-4;

/// Worst relative error of each operation over its random instances.
pub fn run_op_suite(seed: u64) -> Vec<(&'static str, f64)> {
    op_suite()
        .into_iter()
        .enumerate()
        .map(|(k, (name, gen))| {
            let mut r = rng(seed.wrapping_add(k as u64 * 1000));
            let worst = (0..INSTANCES_PER_OP)
                .map(|i| {
                    let c = gen(&mut r);
                    gradcheck(&c.inputs, &c.f, seed ^ i as u64).unwrap_or_else(|e| panic!("{name}: {e}"))
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
