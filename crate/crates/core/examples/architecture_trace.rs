//! Block inventory, parameter counts and the activation-shape trace of the
//! full and desk profiles.
//!
//! ```text
//! cargo run --release --example architecture_trace
//! ```

use mprvit::model::{count_params, depth_audit, flop_breakdown, shape_trace, ModelConfig};

fn main() -> mprvit::Result<()> {
    for (name, cfg) in [("full", ModelConfig::full()), ("desk", ModelConfig::desk())] {
        let audit = depth_audit(&cfg)?;
        println!("== {name} profile ==");
        println!(
            "residual blocks {} (encoder {}, bottleneck {}, decoder {}), transformer blocks {}",
            audit.residual_blocks,
            audit.encoder_blocks,
            audit.bottleneck_conv_blocks,
            audit.decoder_blocks,
            audit.vit_blocks
        );
        println!("parameters {:.3} M", count_params(&cfg)? as f64 / 1e6);
        println!("forward cost at batch 32: {}", flop_breakdown(&cfg, 32)?);
        for e in shape_trace(&cfg, 1)? {
            println!("  {:<24} {:?}", e.label, e.shape);
        }
    }
    Ok(())
}
