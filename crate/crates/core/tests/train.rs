use mprvit::data::{extract_slices, phantom_generate, Modalities, SlicePair};
use mprvit::model::{Generator, ModelConfig, ParamTable};
use mprvit::train::*;
use mprvit::{Error, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_table(v: f32) -> ParamTable<f32> {
    let mut t = ParamTable::new();
    t.insert("theta", Tensor::new(&[1], vec![v]).unwrap())
        .unwrap();
    t
}

fn phantom_slices(cases: usize, hw: usize, seed: u64) -> Vec<SlicePair> {
    phantom_generate(cases, [hw, hw, 4], seed)
        .unwrap()
        .iter()
        .flat_map(|c| extract_slices(&c.normalized().unwrap().0, Modalities::Both))
        .collect()
}

fn bits(t: &ParamTable<f32>) -> Vec<u32> {
    t.unique()
        .flat_map(|(_, _, x)| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn l1_fixtures_and_gradient() {
    let tape = Tape::<f64>::new();
    let t = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
    let p = tape.leaf(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    let loss = l1_loss(p, &t).unwrap();
    assert_eq!(loss.value().item(), 1.0);
    let same = l1_loss(tape.leaf(t.clone()), &t).unwrap();
    assert_eq!(same.value().item(), 0.0);

    let tape = Tape::<f64>::new();
    let pred = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap();
    let target = Tensor::new(&[2, 3], vec![0.0, -1.0, 2.5, 1.0, 1.0, -1.0]).unwrap();
    let p = tape.leaf(pred.clone());
    tape.backward(l1_loss(p, &target).unwrap()).unwrap();
    let g = p.grad().unwrap();
    assert_eq!(
        g.data(),
        &[1.0 / 6.0, 0.0, -1.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]
    );
    let q = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(l1_loss(q, &target), Err(Error::Dimension(_))));
}

#[test]
fn adamw_first_step_matches_scalar_oracle() {
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut p = scalar_table(1.0);
    let mut s = OptimizerState::new(&p);
    adamw_step(
        &mut p,
        &[Some(Tensor::new(&[1], vec![1.0]).unwrap())],
        &mut s,
        &cfg,
    )
    .unwrap();
    // m = 0.5·g, v = 0.001·g², bias corrections 0.5 and 0.001 → m̂ = v̂ = 1.
    let (m, v) = ((1.0 - 0.5) * 1.0, (1.0 - 0.999) * 1.0);
    let (mh, vh) = (m / (1.0 - 0.5f64), v / (1.0 - 0.999f64));
    let oracle = 1.0 - 2e-4 * mh / (vh.sqrt() + 1e-6);
    let got = p.get("theta").unwrap().data()[0] as f64;
    assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
    assert!((got - 0.9998).abs() < 1e-6);
    assert_eq!(s.step, 1);
    assert!(s.v[0].data()[0] >= 0.0);
}

#[test]
fn adamw_zero_gradient_is_a_fixed_point_without_decay() {
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut p = scalar_table(0.75);
    let mut s = OptimizerState::new(&p);
    adamw_step(&mut p, &[Some(Tensor::zeros(&[1]))], &mut s, &cfg).unwrap();
    assert_eq!(p.get("theta").unwrap().data()[0], 0.75);
}

#[test]
fn adamw_decay_is_decoupled_and_geometric() {
    let cfg = TrainConfig {
        weight_decay: 0.1,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let mut p = scalar_table(2.0);
    let mut s = OptimizerState::new(&p);
    let mut expect = 2.0f32;
    let factor = (cfg.lr * cfg.weight_decay) as f32;
    for _ in 0..5 {
        adamw_step(&mut p, &[Some(Tensor::zeros(&[1]))], &mut s, &cfg).unwrap();
        expect -= factor * expect;
        assert_eq!(p.get("theta").unwrap().data()[0], expect);
    }
    assert!(
        s.m[0].data()[0] == 0.0 && s.v[0].data()[0] == 0.0,
        "decay never enters the moments"
    );
}

#[test]
fn adamw_requires_every_gradient() {
    let mut p = scalar_table(1.0);
    p.insert("other", Tensor::zeros(&[2])).unwrap();
    let mut s = OptimizerState::new(&p);
    let e = adamw_step(
        &mut p,
        &[Some(Tensor::zeros(&[1])), None],
        &mut s,
        &TrainConfig::default(),
    )
    .unwrap_err();
    assert!(
        matches!(&e, Error::Contract(m) if m.contains("other")),
        "{e}"
    );
    assert_eq!(s.step, 0);
}

fn pair(c: usize, h: usize, w: usize, seed: u32) -> SlicePair {
    let f = |i: usize| ((i as u32).wrapping_mul(2654435761u32) ^ seed) as f32 / u32::MAX as f32;
    SlicePair {
        input: Tensor::from_fn(&[c, h, w], f),
        target: Tensor::from_fn(&[1, h, w], |i| f(i + 1000)),
        patient_id: "p".into(),
        slice_index: 3,
    }
}

#[test]
fn flip_reverses_columns_of_every_channel() {
    let s = pair(2, 3, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = augment_flip(&s, 1.0, &mut rng);
    for c in 0..2 {
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(
                    f.input.data()[(c * 3 + y) * 5 + x],
                    s.input.data()[(c * 3 + y) * 5 + (4 - x)]
                );
            }
        }
    }
    for y in 0..3 {
        for x in 0..5 {
            assert_eq!(f.target.data()[y * 5 + x], s.target.data()[y * 5 + 4 - x]);
        }
    }
    assert_eq!(augment_flip(&f, 1.0, &mut rng), s);
    assert_eq!(augment_flip(&s, 0.0, &mut rng), s);
    assert_eq!((f.patient_id.as_str(), f.slice_index), ("p", 3));
}

#[test]
fn flip_fixes_symmetric_slices_and_keeps_pairs_together() {
    let mut s = pair(1, 4, 6, 2);
    for t in [&mut s.input, &mut s.target] {
        let r = flip_columns(t);
        *t = t.zip_map(&r, |a, b| a + b).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(augment_flip(&s, 1.0, &mut rng), s);
    let p = pair(2, 4, 4, 9);
    let mut flips = 0;
    for _ in 0..200 {
        let a = augment_flip(&p, 0.5, &mut rng);
        let input_flipped = a.input != p.input;
        assert_eq!(input_flipped, a.target != p.target);
        flips += input_flipped as usize;
    }
    assert!((60..140).contains(&flips), "{flips}");
}

#[test]
fn early_stopping_rules() {
    let s = early_stop_check(&[1.0, 0.9, 0.8, 0.7], 2).unwrap();
    assert_eq!(
        s,
        EarlyStop {
            decision: StopDecision::Continue,
            best_epoch: 3
        }
    );
    let s = early_stop_check(&[1.0, 0.9, 0.9, 0.9], 2).unwrap();
    assert_eq!(
        s,
        EarlyStop {
            decision: StopDecision::Stop,
            best_epoch: 1
        }
    );
    let s = early_stop_check(&[1.0, 0.9, 0.9 - 5e-7, 0.9 - 9e-7], 2).unwrap();
    assert_eq!(
        s,
        EarlyStop {
            decision: StopDecision::Stop,
            best_epoch: 1
        }
    );
    let s = early_stop_check(&[1.0, 0.9, 0.9 - 2e-6], 2).unwrap();
    assert_eq!(s.best_epoch, 2);
    assert!(early_stop_check(&[], 3).is_err());
}

fn small_model() -> ModelConfig {
    ModelConfig {
        input_hw: (16, 16),
        ..ModelConfig::desk()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_bitwise() {
    let data = phantom_slices(1, 16, 3);
    let cfg = TrainConfig {
        lr: 0.0,
        batch_size: 2,
        ..TrainConfig::desk()
    };
    let mut m = Generator::<f32>::new(&small_model(), 1).unwrap();
    let before = bits(m.params());
    let mut opt = OptimizerState::new(m.params());
    train_epoch(&mut m, &data, &mut opt, &cfg, &mut epoch_rng(0, 0)).unwrap();
    assert_eq!(bits(m.params()), before);
    assert_eq!(opt.step, 2);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let data = phantom_slices(2, 16, 5);
    let run = || {
        let cfg = TrainConfig {
            batch_size: 3,
            max_epochs: 2,
            seed: 11,
            ..TrainConfig::desk()
        };
        let mut st = TrainState::new(&small_model(), &cfg).unwrap();
        fit(&mut st, &data, &data[..2], &cfg, |_, _| Ok(true)).unwrap();
        (
            st.train_history.clone(),
            bits(st.model.params()),
            Checkpoint::from_state(&st, &[]).encode().unwrap(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2, "checkpoint bytes");
}

#[test]
fn empty_training_set_is_rejected() {
    let mut m = Generator::<f32>::new(&small_model(), 1).unwrap();
    let mut opt = OptimizerState::new(m.params());
    assert!(train_epoch(
        &mut m,
        &[],
        &mut opt,
        &TrainConfig::desk(),
        &mut epoch_rng(0, 0)
    )
    .is_err());
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantom_slices(2, 16, 8);
    let (train, val) = data.split_at(6);
    let cfg = TrainConfig {
        batch_size: 2,
        max_epochs: 3,
        seed: 4,
        ..TrainConfig::desk()
    };

    let mut full = TrainState::new(&small_model(), &cfg).unwrap();
    fit(&mut full, train, val, &cfg, |_, _| Ok(true)).unwrap();

    let mut part = TrainState::new(&small_model(), &cfg).unwrap();
    let path = dir.path().join("last.ckpt");
    fit(&mut part, train, val, &cfg, |s, r| {
        checkpoint_save(
            &path,
            &Checkpoint::from_state(s, &[("note", "interrupted".into())]),
        )?;
        Ok(r.epoch < 1)
    })
    .unwrap();
    assert_eq!(part.epoch, 2);

    let ck = checkpoint_load(&path).unwrap();
    assert_eq!(ck.meta("note"), Some("interrupted"));
    let mut resumed = ck.to_state().unwrap();
    assert_eq!(bits(resumed.model.params()), bits(part.model.params()));
    assert_eq!(resumed.opt, part.opt);
    assert_eq!(resumed.val_history, part.val_history);
    fit(&mut resumed, train, val, &cfg, |_, _| Ok(true)).unwrap();
    assert_eq!(resumed.train_history, full.train_history);
    assert_eq!(resumed.val_history, full.val_history);
    assert_eq!(bits(resumed.model.params()), bits(full.model.params()));

    // Aliased transformer weights are rebuilt as aliases.
    let m = ck.model().unwrap();
    assert_eq!(m.params().num_unique(), part.model.params().num_unique());
    assert_eq!(
        m.params().entries().count(),
        part.model.params().entries().count()
    );
}

#[test]
fn corrupted_checkpoints_fail_closed() {
    let dir = tempfile::tempdir().unwrap();
    let st = TrainState::new(&small_model(), &TrainConfig::desk()).unwrap();
    let path = dir.path().join("c.ckpt");
    checkpoint_save(&path, &Checkpoint::from_state(&st, &[])).unwrap();
    let good = std::fs::read(&path).unwrap();
    let mut b = good.clone();
    b[0] = b'X';
    std::fs::write(&path, &b).unwrap();
    assert!(matches!(
        checkpoint_load(&path),
        Err(Error::Format { offset: 0, .. })
    ));
    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(matches!(checkpoint_load(&path), Err(Error::Format { .. })));
    let mut b = good.clone();
    b[8..12].copy_from_slice(&7u32.to_le_bytes());
    std::fs::write(&path, &b).unwrap();
    assert!(matches!(
        checkpoint_load(&path),
        Err(Error::Format { offset: 8, .. })
    ));
}

#[test]
fn overfits_a_tiny_fixture() {
    let data: Vec<SlicePair> = phantom_slices(2, 16, 21).into_iter().take(8).collect();
    assert_eq!(data.len(), 8);
    // Standard Adam momentum: with beta1 0.5 these micro-fixtures oscillate around a higher floor.
    let cfg = TrainConfig {
        beta1: 0.9,
        batch_size: 8,
        flip_prob: 0.0,
        patience: usize::MAX,
        max_epochs: 200,
        ..TrainConfig::desk()
    };
    let mut st = TrainState::new(&small_model(), &cfg).unwrap();
    let initial = evaluate_loss(&st.model, &data, 8).unwrap();
    fit(&mut st, &data, &data, &cfg, |_, _| Ok(true)).unwrap();
    let last = *st.val_history.last().unwrap();
    assert!(last < 0.05 * initial, "initial {initial} final {last}");
}

#[test]
fn learns_to_copy_its_first_channel() {
    let mut data = phantom_slices(2, 16, 31);
    data.truncate(8);
    for p in &mut data {
        p.target = Tensor::new(&[1, 16, 16], p.input.data()[..256].to_vec()).unwrap();
    }
    // One full batch per step and no flips: each step's loss is the L1 of the model before it.
    let cfg = TrainConfig {
        lr: 2e-4,
        beta1: 0.9,
        batch_size: 8,
        flip_prob: 0.0,
        ..TrainConfig::desk()
    };
    let mut m = Generator::<f32>::new(&small_model(), 2).unwrap();
    let mut opt = OptimizerState::new(m.params());
    let mut best = f64::INFINITY;
    for step in 0..500 {
        best =
            best.min(train_epoch(&mut m, &data, &mut opt, &cfg, &mut epoch_rng(0, step)).unwrap());
        if best < 0.02 {
            break;
        }
    }
    assert!(best < 0.02, "best L1 {best}");
}
