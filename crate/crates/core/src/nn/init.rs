use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{Layer, ParamRole};
use crate::tensor::Scalar;

/// He-normal initialization with fan-in scaling, deterministic in `seed`.
///
/// Weights draw from `N(0, 2 / fan_in)` in visit order. Biases and shifts
/// start at 0, scales at 1, running means at 0 and running variances at 1.
pub fn kaiming_init<S: Scalar>(layer: &mut dyn Layer<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layer.visit_mut("", &mut |_, p| {
        let role = p.role();
        let shape = p.shape();
        let data = p.value_mut().data_mut();
        match role {
            ParamRole::Weight => {
                let fan_in = shape.c * shape.h * shape.w;
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                for v in data.iter_mut() {
                    *v = S::lit(dist.sample(&mut rng));
                }
            }
            ParamRole::Bias | ParamRole::Shift | ParamRole::RunningMean => data.fill(S::zero()),
            ParamRole::Scale | ParamRole::RunningVar => data.fill(S::one()),
        }
    });
}
