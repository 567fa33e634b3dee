//! Parameters and batch-32 FLOPs as residual blocks are added to every
//! combined block, as an aligned table and as CSV.
//!
//! ```text
//! cargo run --release --example ablation_table
//! ```

use mprvit::complexity::{ablation_sweep, sweep_csv, sweep_table};
use mprvit::model::{count_flops, ModelConfig};

fn main() -> mprvit::Result<()> {
    let rows = ablation_sweep(&ModelConfig::full())?;
    print!("{}", sweep_table(&rows));
    println!();
    print!("{}", sweep_csv(&rows));
    for w in rows.windows(2) {
        println!(
            "{} -> {}: +{:.3} M params, +{:.1} GFLOPs",
            w[0].label,
            w[1].label,
            (w[1].params - w[0].params) as f64 / 1e6,
            (w[1].flops_batch32 - w[0].flops_batch32) as f64 / 1e9
        );
    }
    let cfg = ModelConfig::full();
    println!(
        "one slice: {:.2} GFLOPs",
        count_flops(&cfg, 1)? as f64 / 1e9
    );
    Ok(())
}
