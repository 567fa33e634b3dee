//! Finite-difference check of the tape on a small composite graph and on the
//! smallest generator profile, in 64-bit.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use mprvit::model::{Generator, ModelConfig};
use mprvit::tensor::{grad_check, grad_check_sampled, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mprvit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Tensor::from_fn(&[3, 2, 3, 3], |_| rng.gen_range(-0.5..0.5));
    let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.gen_range(-1.0..1.0));
    let err = grad_check(
        |x| {
            let w = x.tape().constant(w.clone());
            Ok(x.conv2d(w, None, 1, 1)?
                .gelu()
                .bilinear_resize(4, 4)?
                .square()
                .mean())
        },
        &x,
        1e-6,
    )?;
    println!("conv → gelu → resize → mean square: max rel err {err:.3e}");

    let cfg = ModelConfig::tiny();
    let g = Generator::<f64>::new(&cfg, 0)?;
    let x = Tensor::from_fn(&[1, cfg.in_channels, 16, 16], |_| rng.gen_range(-1.0..1.0));
    let idx: Vec<usize> = (0..32).map(|_| rng.gen_range(0..x.numel())).collect();
    let err = grad_check_sampled(
        |x| {
            let p = g.params().bind(x.tape(), false);
            Ok(g.forward(&p, x)?.square().mean())
        },
        &x,
        1e-6,
        &idx,
    )?;
    println!(
        "tiny generator, {} sampled inputs: max rel err {err:.3e}",
        idx.len()
    );
    Ok(())
}
