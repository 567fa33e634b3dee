use mprvit::data::{Modality, Volume};
use mprvit::metrics::*;
use mprvit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{ssim_reference, t_pvalue_by_integration};

fn vol(extents: [usize; 3], data: Vec<f32>) -> Volume {
    Volume::new(extents, [1.0; 3], data, Modality::Adc).unwrap()
}

fn random(extents: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = extents.iter().product();
    vol(extents, (0..n).map(|_| rng.gen::<f32>()).collect())
}

#[test]
fn mse_fixtures() {
    let a = random([8, 8, 2], 1);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    let zeros = vol([4, 4, 1], vec![0.0; 16]);
    let tenth = vol([4, 4, 1], vec![0.1; 16]);
    assert!((mse(&zeros, &tenth).unwrap() - 0.01).abs() < 1e-9);
    let b = random([8, 8, 2], 2);
    let mut s = 0.0;
    for z in 0..2 {
        for y in 0..8 {
            for x in 0..8 {
                s += (a.get(x, y, z) as f64 - b.get(x, y, z) as f64).powi(2);
            }
        }
    }
    assert!((mse(&a, &b).unwrap() - s / 128.0).abs() < 1e-9);
    assert!(matches!(mse(&a, &zeros), Err(Error::Dimension(_))));
}

#[test]
fn psnr_fixtures() {
    assert!((psnr_from_mse(1e-3, 1.0) - 30.0).abs() < 1e-6);
    assert_eq!(psnr_from_mse(4.0, 2.0), 0.0);
    let a = random([8, 8, 1], 3);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&a, &a, 0.0).is_err());
}

#[test]
fn reported_mse_and_psnr_are_mutually_consistent() {
    // Mean MSE .0009 implies about 30.5 dB, consistent with a reported 31.0 ± 2.1.
    let implied = psnr_from_mse(0.0009, 1.0);
    assert!((implied - 30.458).abs() < 1e-3);
    assert!((implied - 31.0).abs() < 2.1);
}

#[test]
fn ssim_identity_is_exactly_one() {
    let a = random([32, 32, 3], 4);
    for constants in [SsimConstants::PaperLiteral, SsimConstants::Standard] {
        let o = SsimOptions {
            constants,
            ..Default::default()
        };
        assert_eq!(ssim(&a, &a, &o).unwrap(), 1.0);
    }
}

#[test]
fn ssim_of_constants_is_analytic() {
    let (a, b) = (0.3f64, 0.7f64);
    let x = vol([16, 16, 1], vec![a as f32; 256]);
    let y = vol([16, 16, 1], vec![b as f32; 256]);
    for constants in [SsimConstants::PaperLiteral, SsimConstants::Standard] {
        let (c1, _) = constants.values(1.0);
        let (a, b) = (a as f32 as f64, b as f32 as f64);
        let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim(
            &x,
            &y,
            &SsimOptions {
                constants,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn ssim_matches_direct_reference() {
    for seed in 0..4 {
        let x = random([32, 32, 1], 10 + seed);
        // Correlated partner so the score is far from 0.
        let noise = random([32, 32, 1], 20 + seed);
        let y = vol(
            [32, 32, 1],
            x.data()
                .iter()
                .zip(noise.data())
                .map(|(a, n)| 0.7 * a + 0.3 * n)
                .collect(),
        );
        for constants in [SsimConstants::PaperLiteral, SsimConstants::Standard] {
            let (c1, c2) = constants.values(1.0);
            let got = ssim(
                &x,
                &y,
                &SsimOptions {
                    constants,
                    ..Default::default()
                },
            )
            .unwrap();
            let want = ssim_reference(&x, &y, c1, c2);
            assert!((got - want).abs() < 1e-6, "{constants:?}: {got} vs {want}");
        }
    }
}

#[test]
fn ssim_window_larger_than_slice_fails() {
    let a = random([10, 32, 1], 1);
    assert!(matches!(
        ssim(&a, &a, &SsimOptions::default()),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn t_test_fixture() {
    let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert!((r.t - 4.2426).abs() < 1e-4);
    assert_eq!(r.df, 4);
    let oracle = t_pvalue_by_integration(r.t, 4);
    assert!((r.p - oracle).abs() < 1e-9, "{} vs {oracle}", r.p);
    assert!((r.p - 0.0132).abs() < 1e-3);
}

#[test]
fn t_test_matches_integration_across_df() {
    for (t, df) in [
        (0.5, 2),
        (1.7, 3),
        (2.3, 9),
        (3.9, 14),
        (-1.1, 6),
        (0.01, 30),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(df as u64);
        // Build a sample with exactly this t: any non-constant d rescaled.
        let d: Vec<f64> = (0..=df).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let centered: Vec<f64> = d.iter().map(|v| v - m + t * sd / n.sqrt()).collect();
        let r = paired_t_test(&centered, &vec![0.0; centered.len()]).unwrap();
        assert!((r.t - t).abs() < 1e-9);
        assert!(
            (r.p - t_pvalue_by_integration(t, df)).abs() < 1e-8,
            "t {t} df {df}"
        );
    }
}

#[test]
fn t_test_degenerate_and_symmetric() {
    let a = [0.2, 0.4, 0.9];
    let b = [0.1, 0.3, 0.8];
    assert!(matches!(paired_t_test(&a, &a), Err(Error::Degenerate(_))));
    // Constant differences have zero variance too.
    assert!(matches!(
        paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]),
        Err(Error::Degenerate(_))
    ));
    let c = [0.15, 0.32, 0.71];
    let ab = paired_t_test(&a, &c).unwrap();
    let ba = paired_t_test(&c, &a).unwrap();
    assert_eq!(ab.t, -ba.t);
    assert_eq!(ab.p, ba.p);
    assert!(paired_t_test(&a, &b[..2]).is_err());
}

#[test]
fn evaluate_identity_and_pairing() {
    let gt: Vec<(String, Volume)> = (0..3)
        .map(|i| (format!("p{i}"), random([16, 16, 2], i)))
        .collect();
    let r = evaluate("identity", &gt, &gt, None, &SsimOptions::default()).unwrap();
    for p in &r.patients {
        assert_eq!((p.mse, p.psnr, p.ssim), (0.0, f64::INFINITY, 1.0));
    }
    let short = &gt[..2];
    let e = evaluate("x", short, &gt, None, &SsimOptions::default()).unwrap_err();
    assert!(matches!(&e, Error::Pairing(m) if m.contains("p2")), "{e}");
}

#[test]
fn evaluate_with_baseline_flags_significance() {
    let gt: Vec<(String, Volume)> = (0..8)
        .map(|i| (format!("p{i}"), random([16, 16, 1], i)))
        .collect();
    let perturb = |scale: f32, seed: u64| -> Vec<(String, Volume)> {
        gt.iter()
            .enumerate()
            .map(|(i, (id, v))| {
                let n = random([16, 16, 1], 100 * seed + i as u64);
                let d = v
                    .data()
                    .iter()
                    .zip(n.data())
                    .map(|(a, b)| a + scale * (b - 0.5))
                    .collect();
                (id.clone(), vol([16, 16, 1], d))
            })
            .collect()
    };
    let o = SsimOptions::default();
    let base = evaluate("baseline", &perturb(0.8, 1), &gt, None, &o).unwrap();
    let good = evaluate("model", &perturb(0.1, 2), &gt, Some(&base), &o).unwrap();
    assert!(good.better_than(&base));
    let (against, tests) = good.comparison.as_ref().unwrap();
    assert_eq!(against, "baseline");
    assert_eq!(tests.len(), 3);
    assert!(tests.iter().all(|c| c.test.unwrap().significant()));
    let text = good.summary_text();
    assert!(text.contains("significant") && text.contains("alpha 0.05"));
    let csv = good.to_csv();
    assert_eq!(csv.lines().count(), 1 + 8 + 2);
    assert!(csv.starts_with("patient,mse,psnr,ssim\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in 0u64..1000, h in 11usize..20, w in 11usize..20) {
        let x = random([w, h, 1], seed);
        let y = random([w, h, 1], seed + 1);
        for constants in [SsimConstants::PaperLiteral, SsimConstants::Standard] {
            let o = SsimOptions { constants, ..Default::default() };
            let a = ssim(&x, &y, &o).unwrap();
            let b = ssim(&y, &x, &o).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn mse_ignores_common_permutations(seed in 0u64..1000) {
        let x = random([6, 5, 2], seed);
        let y = random([6, 5, 2], seed + 7);
        let mut idx: Vec<usize> = (0..60).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let px = vol([6, 5, 2], idx.iter().map(|&i| x.data()[i]).collect());
        let py = vol([6, 5, 2], idx.iter().map(|&i| y.data()[i]).collect());
        prop_assert!((mse(&x, &y).unwrap() - mse(&px, &py).unwrap()).abs() < 1e-12);
        prop_assert_eq!(mse(&x, &y).unwrap(), mse_values(x.data(), y.data()));
    }

    #[test]
    fn psnr_decreases_with_mse(a in 1e-8f64..10.0, b in 1e-8f64..10.0) {
        prop_assume!(a < b);
        prop_assert!(psnr_from_mse(a, 1.0) > psnr_from_mse(b, 1.0));
    }

    #[test]
    fn t_test_is_shift_invariant(d in proptest::collection::vec(-5.0f64..5.0, 3..20), shift in -100.0f64..100.0) {
        let b: Vec<f64> = d.iter().enumerate().map(|(i, _)| (i as f64).sin()).collect();
        let r = paired_t_test(&d, &b);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        let d2: Vec<f64> = d.iter().map(|v| v + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let s = paired_t_test(&d2, &b2).unwrap();
        prop_assert!((r.t - s.t).abs() < 1e-9 * r.t.abs().max(1.0));
        prop_assert!((r.p - s.p).abs() < 1e-9);
        prop_assert!(r.p > 0.0 && r.p <= 1.0);
    }
}
