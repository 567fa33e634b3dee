//! Generates a phantom dataset on disk, reads it back and reports what the
//! training loader will see.
//!
//! ```text
//! cargo run --release --example phantom_dataset -- /tmp/phantoms
//! ```

use mprvit::data::{
    extract_slices, make_splits, phantom_generate, read_dataset, write_dataset, Dataset,
    Modalities, Split,
};

fn main() -> mprvit::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("mprvit_phantoms")
            .display()
            .to_string()
    });
    let cases = phantom_generate(12, [64, 64, 8], 7)?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let ds = Dataset::new(cases, make_splits(&ids, (0.5, 0.2, 0.3), 7)?)?;
    let entries = write_dataset(&dir, &ds)?;
    println!("wrote {} cases to {dir}", entries.len());

    let back = read_dataset(&dir)?;
    assert_eq!(back.splits, ds.splits);
    for split in Split::ALL {
        let mut slices = 0;
        for case in back.split_cases(split) {
            slices += extract_slices(&case.normalized()?.0, Modalities::Both).len();
        }
        println!("{split:<5} {:?} -> {slices} slices", back.splits.ids(split));
    }
    let c = &back.cases[0];
    let (lo, hi) = c
        .adc
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "{} ADC range {lo:.3} .. {hi:.3}, extents {:?}",
        c.id,
        c.adc.extents()
    );
    Ok(())
}
