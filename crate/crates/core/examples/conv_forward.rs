//! im2col convolution against the direct nested-loop reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thinner::nn::conv::{conv2d_forward, ConvKernel};
use thinner::nn::reference::conv2d_naive;
use thinner::{Shape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f32> {
    let n = shape.0.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> thinner::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, Shape::new(2, 3, 9, 9));
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 2, 2)] {
        let w = random(&mut rng, Shape::new(4, 3, k, k));
        let kernel = ConvKernel::new(w, Some(vec![0.1, -0.2, 0.3, 0.0]), stride, pad)?;
        let fast = conv2d_forward(&x, &kernel)?;
        let slow = conv2d_naive(&x, &kernel)?;
        println!("k={k} stride={stride} pad={pad}: output {} max |diff| {:.2e}", fast.shape(), fast.max_abs_diff(&slow));
    }
    Ok(())
}
