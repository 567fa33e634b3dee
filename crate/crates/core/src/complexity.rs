//! Parameter and FLOP sweep over the number of residual blocks per combined block.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{count_params, flop_breakdown, FlopBreakdown, ModelConfig};

/// Batch size of the FLOP column.
pub const SWEEP_BATCH: usize = 32;

/// Residual blocks per combined block covered by the sweep, with row labels.
pub const SWEEP_ROWS: [(usize, &str); 5] = [
    (1, "VCT"),
    (2, "VCT + 1 RB"),
    (3, "VCT + 2 RB (MPR-ViT)"),
    (4, "VCT + 3 RB"),
    (5, "VCT + 4 RB"),
];

/// Reference `(params in M, batch-32 GFLOPs)` for the rows of [`SWEEP_ROWS`].
pub const REFERENCE_ROWS: [(f64, f64); 5] = [
    (115.0, 877.0),
    (117.0, 1068.0),
    (119.0, 1277.0),
    (121.0, 1486.0),
    (123.0, 1694.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub rb_per_combined: usize,
    pub params: usize,
    pub flops_batch32: u64,
    pub breakdown: FlopBreakdown,
    /// Filled in only by callers that train the variant.
    pub ssim: Option<f64>,
}

/// One row per entry of [`SWEEP_ROWS`]; `base` supplies everything but the depth.
pub fn ablation_sweep(base: &ModelConfig) -> Result<Vec<AblationRow>> {
    let rows: Vec<AblationRow> = SWEEP_ROWS
        .iter()
        .map(|&(rb, label)| {
            let cfg = base.clone().with_rb(rb);
            let breakdown = flop_breakdown(&cfg, SWEEP_BATCH)?;
            Ok(AblationRow {
                label: label.into(),
                rb_per_combined: rb,
                params: count_params(&cfg)?,
                flops_batch32: breakdown.total(),
                breakdown,
                ssim: None,
            })
        })
        .collect::<Result<_>>()?;
    for w in rows.windows(2) {
        if w[1].params <= w[0].params || w[1].flops_batch32 <= w[0].flops_batch32 {
            return Err(Error::Contract(format!(
                "sweep is not monotone between {} and {}",
                w[0].label, w[1].label
            )));
        }
    }
    Ok(rows)
}

/// `label,rb_per_combined,params,flops_batch32,conv,linear,attention,elementwise,ssim`.
pub fn sweep_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "label,rb_per_combined,params,flops_batch32,conv,linear,attention,elementwise,ssim\n",
    );
    for r in rows {
        let b = &r.breakdown;
        let ssim = r.ssim.map(|v| format!("{v:.4}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{ssim}",
            r.label,
            r.rb_per_combined,
            r.params,
            r.flops_batch32,
            b.conv,
            b.linear,
            b.attention,
            b.elementwise
        );
    }
    s
}

/// Aligned table in M parameters and GFLOPs, with the reference figures alongside.
pub fn sweep_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<22} {:>3} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}\n",
        "model", "rb", "params(M)", "GFLOPs", "conv G", "tx G", "ref M", "ref G"
    );
    for (i, r) in rows.iter().enumerate() {
        let (rm, rg) = REFERENCE_ROWS
            .get(i)
            .filter(|_| r.rb_per_combined == SWEEP_ROWS[i].0)
            .map(|&(m, g)| (format!("{m:.0}"), format!("{g:.0}")))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<22} {:>3} {:>10.3} {:>10.1} {:>10.1} {:>10.1} {:>9} {:>9}",
            r.label,
            r.rb_per_combined,
            r.params as f64 / 1e6,
            r.flops_batch32 as f64 / 1e9,
            r.breakdown.conv as f64 / 1e9,
            r.breakdown.transformer() as f64 / 1e9,
            rm,
            rg
        );
    }
    s
}
