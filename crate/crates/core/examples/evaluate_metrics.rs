//! MSE, PSNR and SSIM with both constant conventions, and a paired t-test
//! between two noisy reconstructions.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use mprvit::data::{Modality, Volume};
use mprvit::metrics::{evaluate, SsimConstants, SsimOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy(truth: &Volume, amplitude: f32, rng: &mut ChaCha8Rng) -> Volume {
    let data = truth
        .data()
        .iter()
        .map(|&v| (v + rng.gen_range(-amplitude..amplitude)).clamp(0.0, 1.0))
        .collect();
    Volume::new(truth.extents(), truth.spacing(), data, Modality::Adc).unwrap()
}

fn main() -> mprvit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = [32, 32, 4];
    let mut gt = Vec::new();
    let (mut good, mut poor) = (Vec::new(), Vec::new());
    for i in 0..6 {
        let id = format!("p{i}");
        let data = (0..e.iter().product::<usize>())
            .map(|j| ((j % 32) as f32 / 31.0 + i as f32 * 0.01).min(1.0))
            .collect();
        let truth = Volume::new(e, [1.0; 3], data, Modality::Adc)?;
        good.push((id.clone(), noisy(&truth, 0.05, &mut rng)));
        poor.push((id.clone(), noisy(&truth, 0.2, &mut rng)));
        gt.push((id, truth));
    }
    for constants in [SsimConstants::PaperLiteral, SsimConstants::Standard] {
        let opts = SsimOptions {
            constants,
            ..SsimOptions::default()
        };
        let base = evaluate("noise 0.2", &poor, &gt, None, &opts)?;
        let report = evaluate("noise 0.05", &good, &gt, Some(&base), &opts)?;
        println!("== SSIM constants {constants:?} ==");
        print!("{}", base.summary_text());
        print!("{}", report.summary_text());
        print!("{}", report.to_csv());
    }
    Ok(())
}
