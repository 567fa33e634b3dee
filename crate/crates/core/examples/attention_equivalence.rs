//! Tiled attention against the materialized reference, and the score memory each needs.
//!
//! ```text
//! cargo run --release --example attention_equivalence
//! ```

use mprvit::attention::{
    flash_attention_with_memory, naive_attention_with_memory, AttentionConfig,
};
use mprvit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mprvit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!(
        "{:>5} {:>4} {:>5} {:>12} {:>14} {:>14}",
        "T", "d", "tile", "max diff", "naive elems", "tiled elems"
    );
    for (t, d) in [(64, 16), (256, 64), (1024, 32)] {
        let mut m = || Tensor::<f32>::from_fn(&[t, d], |_| rng.gen_range(-1.0f32..1.0));
        let (q, k, v) = (m(), m(), m());
        let (reference, naive_mem) = naive_attention_with_memory(&q, &k, &v)?;
        for tile in [1, 16, 64] {
            let cfg = AttentionConfig::new(1, d)?.with_tiles(tile, tile)?;
            let (out, mem) = flash_attention_with_memory(&q, &k, &v, &cfg)?;
            println!(
                "{t:>5} {d:>4} {tile:>5} {:>12.2e} {:>14} {:>14}",
                out.max_abs_diff(&reference),
                naive_mem.elements,
                mem.elements
            );
        }
    }
    Ok(())
}
