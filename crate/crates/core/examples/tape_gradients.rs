//! Builds a small dilated-convolution graph by hand, backpropagates a sum
//! and compares one weight gradient with a central difference.

use sdu_seg::autodiff::{ConvSpec, Tape, Var};
use sdu_seg::tensor::{Shape, Tensor};

fn graph(tape: &mut Tape<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> sdu_seg::Result<(Var, Var)> {
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone().requiring_grad());
    let y = tape.conv2d(xv, wv, None, ConvSpec::same(3, 2))?;
    let y = tape.sigmoid(y);
    Ok((tape.mean(y), wv))
}

fn main() -> sdu_seg::Result<()> {
    let x = Tensor::from_fn(Shape::new(1, 1, 7, 7), |_, _, h, w| ((h * 7 + w) as f64 * 0.37).sin());
    let w = Tensor::from_fn(Shape::new(2, 1, 3, 3), |o, _, h, w| 0.1 * (o + h) as f64 - 0.05 * w as f64);

    let mut tape = Tape::training();
    let (loss, wv) = graph(&mut tape, &x, &w)?;
    tape.backward(loss)?;
    let analytic = tape.grad(wv).expect("weight gradient")[4];
    println!("loss {:.6}, {} nodes", tape.value(loss).item()?, tape.len());

    let h = 1e-5;
    let at = |delta: f64| -> sdu_seg::Result<f64> {
        let mut shifted = w.clone();
        shifted.data_mut()[4] += delta;
        let mut t = Tape::inference();
        let (l, _) = graph(&mut t, &x, &shifted)?;
        t.value(l).item()
    };
    let numeric = (at(h)? - at(-h)?) / (2.0 * h);
    println!("d loss / d w[4]: taped {analytic:.9}, numeric {numeric:.9}");
    Ok(())
}
