//! Trains the desk profile on twelve phantom cases, then synthesizes and
//! scores the test split against the T1w identity baseline.
//!
//! Takes a few minutes on one core.
//!
//! ```text
//! cargo run --release --example train_desk
//! ```

use mprvit::cli::commands::{self, Baseline, TrainArgs, BEST_CHECKPOINT};
use mprvit::cli::{Profile, RunConfig};
use mprvit::data::{nifti_write, Modality, PhantomConfig, Split};
use mprvit::metrics::SsimConstants;
use mprvit::train::checkpoint_load;

fn main() -> mprvit::Result<()> {
    let root = std::env::temp_dir().join("mprvit_train_desk");
    let (data, out, pred) = (root.join("data"), root.join("run"), root.join("pred"));
    let ds = commands::gen_data(
        &data,
        &PhantomConfig {
            cases: 12,
            extents: [64, 64, 8],
            seed: 7,
        },
        (0.5, 0.2, 0.3),
    )?;

    let mut run = RunConfig::from_profile(Profile::Desk);
    run.apply_overrides([
        "seed=7",
        &format!("data={}", data.display()),
        &format!("out={}", out.display()),
    ])?;
    let mut progress = |line: &str| println!("epoch {line}");
    let s = commands::train(TrainArgs {
        run,
        resume: None,
        progress: &mut progress,
    })?;
    println!(
        "initial val L1 {:.4}, best {:.4} at epoch {}",
        s.initial_val.unwrap_or(f64::NAN),
        s.best_val,
        s.best_epoch
    );

    let ck = checkpoint_load(out.join(BEST_CHECKPOINT))?;
    std::fs::create_dir_all(&pred)?;
    for case in ds.split_cases(Split::Test) {
        let syn = commands::synthesize(&ck, &commands::read_case_dir(&data.join(&case.id))?)?;
        println!(
            "{}: {} slices, {:.4} s per slice",
            case.id,
            syn.slices.len(),
            syn.mean_slice_seconds
        );
        nifti_write(pred.join(format!("{}.nii", case.id)), &syn.volume)?;
    }
    let e = commands::eval(
        &pred,
        &data,
        Some(Split::Test),
        Baseline::Modality(Modality::T1w),
        SsimConstants::default(),
    )?;
    commands::write_eval(&pred, &e)?;
    if let Some(b) = &e.baseline {
        print!("{}", b.summary_text());
    }
    print!("{}", e.report.summary_text());
    Ok(())
}
