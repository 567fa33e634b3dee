use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use crate::complexity::{ablation_sweep, sweep_csv, sweep_table, AblationRow, SWEEP_BATCH};
use crate::data::{
    assemble_volume, extract_slices, make_splits, nifti_read, normalize_volume, qualifying_slices,
    read_dataset, stack_slice, write_dataset, Dataset, Modalities, Modality, NormParams,
    PatientCase, PhantomConfig, SlicePair, Split, Volume,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, SsimConstants, SsimOptions};
use crate::model::{count_params, flop_breakdown, FlopBreakdown, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{
    checkpoint_load, checkpoint_save, evaluate_loss, fit, Checkpoint, StopDecision, TrainState,
};

/// Name of the archived configuration inside every output directory.
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_LOG: &str = "loss.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
/// Written instead of continuing when training hits a non-finite loss.
pub const FAULT_CHECKPOINT: &str = "fault.ckpt";

/// Slices per forward pass during synthesis.
const SYNTH_BATCH: usize = 8;

// ---------------------------------------------------------------- gen-data

pub fn parse_size(s: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("size: {p:?} is not a count")))
        })
        .collect::<Result<_>>()?;
    let [x, y, z] = v[..] else {
        return Err(Error::Config(format!("size {s:?} needs X,Y,Z")));
    };
    // Two stride-2 stages must divide the plane exactly.
    if x % 4 != 0 || y % 4 != 0 || x < 8 || y < 8 || z == 0 {
        return Err(Error::Config(format!(
            "size {x},{y},{z}: in-plane extents must be multiples of 4 and at least 8"
        )));
    }
    Ok([x, y, z])
}

/// Writes `cfg.cases` phantoms split by `split`, plus `gen.txt` recording the arguments.
pub fn gen_data(out: &Path, cfg: &PhantomConfig, split: (f64, f64, f64)) -> Result<Dataset> {
    let cases = crate::data::phantom_generate(cfg.cases, cfg.extents, cfg.seed)?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let splits = make_splits(&ids, split, cfg.seed).map_err(|e| Error::Config(e.to_string()))?;
    let ds = Dataset::new(cases, splits)?;
    write_dataset(out, &ds)?;
    let [x, y, z] = cfg.extents;
    let (a, b, c) = split;
    let text = format!(
        "cases = {}\nseed = {}\nsize = {x},{y},{z}\nsplit = {a:?},{b:?},{c:?}\n",
        cfg.cases, cfg.seed
    );
    fs::write(out.join("gen.txt"), text)?;
    Ok(ds)
}

// ---------------------------------------------------------------- train

/// Percentile-normalized slice pairs of every case in `split`.
pub fn load_slices(
    ds: &Dataset,
    split: Split,
    modalities: Modalities,
    input_hw: (usize, usize),
) -> Result<Vec<SlicePair>> {
    let mut out = Vec::new();
    for case in ds.split_cases(split) {
        let [nx, ny, _] = case.t1w.extents();
        if (ny, nx) != input_hw {
            return Err(Error::Config(format!(
                "case {} is {nx}×{ny} in-plane but the model expects {}×{}",
                case.id, input_hw.1, input_hw.0
            )));
        }
        let (norm, _) = case.normalized()?;
        out.extend(extract_slices(&norm, modalities));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    /// Validation L1 of the untrained model; `None` on resume.
    pub initial_val: Option<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    pub train_slices: usize,
    pub val_slices: usize,
}

pub struct TrainArgs<'a> {
    pub run: RunConfig,
    pub resume: Option<&'a Path>,
    /// Called after every epoch with the log line.
    pub progress: &'a mut dyn FnMut(&str),
}

/// Trains on the train split, validates on the val split, and writes
/// `config.txt`, `loss.log`, `best.ckpt` and `last.ckpt` under `run.out`.
pub fn train(args: TrainArgs<'_>) -> Result<TrainSummary> {
    let run = args.run;
    let data = run
        .data
        .clone()
        .ok_or_else(|| Error::Config("no data directory (--data or `data =`)".into()))?;
    let out = run
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory (--out or `out =`)".into()))?;
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), run.to_text())?;

    let ds = read_dataset(&data)?;
    let train_set = load_slices(&ds, Split::Train, run.modalities, run.model.input_hw)?;
    let val_set = load_slices(&ds, Split::Val, run.modalities, run.model.input_hw)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} yields {} train and {} val slices; both must be non-empty",
            data.display(),
            train_set.len(),
            val_set.len()
        )));
    }

    let log_path = out.join(LOSS_LOG);
    let (mut state, mut log, initial_val) = match args.resume {
        Some(ck_path) => {
            let state = checkpoint_load(ck_path)?.to_state()?;
            if *state.model.config() != run.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model config",
                    ck_path.display()
                )));
            }
            let log = fs::read_to_string(&log_path).unwrap_or_default();
            (state, log, None)
        }
        None => {
            let state = TrainState::new(&run.model, &run.train)?;
            let init = evaluate_loss(&state.model, &val_set, run.train.batch_size)?;
            let log = format!(
                "# epoch train_l1 val_l1 seconds best\n# slices train {} val {}\n# initial val_l1 {init:.6}\n",
                train_set.len(),
                val_set.len()
            );
            (state, log, Some(init))
        }
    };
    fs::write(&log_path, &log)?;

    let extra = [("modalities", run.modalities.to_string())];
    let progress = args.progress;
    let result = fit(&mut state, &train_set, &val_set, &run.train, |st, r| {
        let line = format!(
            "{} {:.6} {:.6} {:.2}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.seconds,
            if r.improved { " *" } else { "" }
        );
        log.push_str(&line);
        log.push('\n');
        fs::write(&log_path, &log)?;
        let ck = Checkpoint::from_state(st, &extra);
        checkpoint_save(out.join(LAST_CHECKPOINT), &ck)?;
        if r.improved {
            checkpoint_save(out.join(BEST_CHECKPOINT), &ck)?;
        }
        progress(&line);
        Ok(true)
    });
    let stop = match result {
        Ok(s) => s,
        Err(e @ Error::Numeric(_)) => {
            let fault = Checkpoint::from_state(
                &state,
                &[
                    ("modalities", run.modalities.to_string()),
                    ("fault", e.to_string()),
                ],
            );
            checkpoint_save(out.join(FAULT_CHECKPOINT), &fault)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    Ok(TrainSummary {
        epochs: state.epoch,
        initial_val,
        best_epoch: stop.best_epoch,
        best_val: state.val_history[stop.best_epoch],
        stopped_early: stop.decision == StopDecision::Stop && state.epoch < run.train.max_epochs,
        train_slices: train_set.len(),
        val_slices: val_set.len(),
    })
}

// ---------------------------------------------------------------- synth

/// Input modalities a checkpoint was trained on.
pub fn checkpoint_modalities(ck: &Checkpoint) -> Result<Modalities> {
    match ck.meta("modalities") {
        Some(m) => m.parse(),
        None => match ck.model_config()?.in_channels {
            2 => Ok(Modalities::Both),
            c => Err(Error::Config(format!(
                "checkpoint with {c} input channels does not record its modalities"
            ))),
        },
    }
}

/// Loads the volumes of one case directory (`<modality>.nii`); absent files are skipped.
pub fn read_case_dir(dir: &Path) -> Result<Vec<Volume>> {
    let mut out = Vec::new();
    for m in Modality::ALL {
        let p = dir.join(format!("{m}.nii"));
        if p.exists() {
            out.push(nifti_read(&p, m)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Prediction in `[−1, 1]`; non-qualifying slices hold −1.
    pub volume: Volume,
    pub slices: Vec<usize>,
    pub mean_slice_seconds: f64,
}

/// Runs every qualifying axial slice of `inputs` through the checkpointed model.
pub fn synthesize(ck: &Checkpoint, inputs: &[Volume]) -> Result<SynthOutput> {
    let modalities = checkpoint_modalities(ck)?;
    let model = ck.model()?;
    let mut chans = Vec::with_capacity(modalities.channels());
    for &m in modalities.list() {
        let v = inputs.iter().find(|v| v.modality == m).ok_or_else(|| {
            Error::Config(format!(
                "checkpoint needs {modalities} but the case has no {m} volume"
            ))
        })?;
        chans.push(normalize_volume(v)?.0);
    }
    let mask = inputs.iter().find(|v| v.modality == Modality::Mask);
    let [nx, ny, _] = chans[0].extents();
    let hw = model.config().input_hw;
    if (ny, nx) != hw {
        return Err(Error::Config(format!(
            "case is {nx}×{ny} in-plane, checkpoint expects {}×{}",
            hw.1, hw.0
        )));
    }
    let refs: Vec<&Volume> = chans.iter().collect();
    let slices = qualifying_slices(&refs, mask);
    let mut preds: Vec<(usize, Vec<f32>)> = Vec::with_capacity(slices.len());
    let start = Instant::now();
    for chunk in slices.chunks(SYNTH_BATCH) {
        let plane = nx * ny;
        let mut xs = Vec::with_capacity(chunk.len() * refs.len() * plane);
        for &z in chunk {
            xs.extend_from_slice(stack_slice(&refs, z)?.data());
        }
        let batch = Tensor::new(&[chunk.len(), refs.len(), ny, nx], xs)?;
        let y = model.predict(&batch)?;
        for (i, &z) in chunk.iter().enumerate() {
            preds.push((z, y.data()[i * plane..(i + 1) * plane].to_vec()));
        }
    }
    let mean_slice_seconds = if slices.is_empty() {
        0.0
    } else {
        start.elapsed().as_secs_f64() / slices.len() as f64
    };
    let mut template = chans[0].clone();
    template.modality = Modality::Adc;
    template.description = "synthesized ADC, normalized [-1, 1]".into();
    let volume = assemble_volume(
        &template,
        preds.iter().map(|(z, s)| (*z, s.as_slice())),
        -1.0,
    )?;
    Ok(SynthOutput {
        volume,
        slices,
        mean_slice_seconds,
    })
}

// ---------------------------------------------------------------- eval

/// Ground-truth ADC in `[0, 1]` for every case of `split`, in manifest order.
pub fn ground_truth(ds: &Dataset, split: Option<Split>) -> Result<Vec<(String, Volume)>> {
    ds.cases
        .iter()
        .filter(|c| split.map_or(true, |s| ds.splits.split_of(&c.id) == Some(s)))
        .map(|c| Ok((c.id.clone(), to_unit(&normalize_volume(&c.adc)?.0))))
        .collect()
}

/// Normalized input modality scored as if it were the prediction.
pub fn identity_baseline(
    ds: &Dataset,
    split: Option<Split>,
    m: Modality,
) -> Result<Vec<(String, Volume)>> {
    let pick = |c: &PatientCase| {
        c.volume(m)
            .cloned()
            .ok_or_else(|| Error::Config(format!("case {} has no {m} volume", c.id)))
    };
    ds.cases
        .iter()
        .filter(|c| split.map_or(true, |s| ds.splits.split_of(&c.id) == Some(s)))
        .map(|c| Ok((c.id.clone(), to_unit(&normalize_volume(&pick(c)?)?.0))))
        .collect()
}

/// Maps a `[−1, 1]` volume onto `[0, 1]`.
pub fn to_unit(v: &Volume) -> Volume {
    let mut out = v.clone();
    for x in out.data_mut() {
        *x = NormParams::to_unit((*x).clamp(-1.0, 1.0) as f64) as f32;
    }
    out
}

/// Every `<id>.nii` in `dir`, mapped to `[0, 1]`, sorted by id.
pub fn read_predictions(dir: &Path) -> Result<Vec<(String, Volume)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "nii") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            found.push((id, path));
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|(id, p)| Ok((id, to_unit(&nifti_read(&p, Modality::Adc)?))))
        .collect()
}

pub enum Baseline<'a> {
    None,
    Predictions(&'a Path),
    Modality(Modality),
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub baseline: Option<MetricsReport>,
}

pub fn eval(
    pred: &Path,
    gt: &Path,
    split: Option<Split>,
    baseline: Baseline<'_>,
    constants: SsimConstants,
) -> Result<EvalOutput> {
    let ds = read_dataset(gt)?;
    let truth = ground_truth(&ds, split)?;
    let opts = SsimOptions {
        constants,
        ..SsimOptions::default()
    };
    let base = match baseline {
        Baseline::None => None,
        Baseline::Predictions(dir) => Some(evaluate(
            "baseline",
            &read_predictions(dir)?,
            &truth,
            None,
            &opts,
        )?),
        Baseline::Modality(m) => Some(evaluate(
            &format!("{m} identity"),
            &identity_baseline(&ds, split, m)?,
            &truth,
            None,
            &opts,
        )?),
    };
    let report = evaluate(
        "model",
        &read_predictions(pred)?,
        &truth,
        base.as_ref(),
        &opts,
    )?;
    Ok(EvalOutput {
        report,
        baseline: base,
    })
}

/// Writes `metrics.csv`, `summary.txt` and, with a baseline, `baseline_metrics.csv`.
pub fn write_eval(out: &Path, e: &EvalOutput) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), e.report.to_csv())?;
    let mut summary = String::from("label,mse_mean,mse_sd,psnr_mean,psnr_sd,ssim_mean,ssim_sd\n");
    let _ = writeln!(summary, "{}", e.report.summary_csv_row());
    if let Some(b) = &e.baseline {
        let _ = writeln!(summary, "{}", b.summary_csv_row());
        fs::write(out.join("baseline_metrics.csv"), b.to_csv())?;
    }
    summary.push('\n');
    if let Some(b) = &e.baseline {
        summary.push_str(&b.summary_text());
    }
    summary.push_str(&e.report.summary_text());
    fs::write(out.join("summary.txt"), summary)?;
    Ok(())
}

// ---------------------------------------------------------------- count

#[derive(Debug, Clone, PartialEq)]
pub struct CountOutput {
    pub params: usize,
    pub flops: FlopBreakdown,
    pub sweep: Option<Vec<AblationRow>>,
}

pub fn count(cfg: &ModelConfig, sweep: bool) -> Result<CountOutput> {
    Ok(CountOutput {
        params: count_params(cfg)?,
        flops: flop_breakdown(cfg, SWEEP_BATCH)?,
        sweep: if sweep {
            Some(ablation_sweep(cfg)?)
        } else {
            None
        },
    })
}

impl CountOutput {
    pub fn render(&self, csv: bool) -> String {
        match &self.sweep {
            Some(rows) if csv => sweep_csv(rows),
            Some(rows) => sweep_table(rows),
            None => format!(
                "params {} ({:.3} M)\nflops batch {SWEEP_BATCH} {} ({:.1} G; conv {:.1} G, transformer {:.1} G)\n",
                self.params,
                self.params as f64 / 1e6,
                self.flops.total(),
                self.flops.total() as f64 / 1e9,
                self.flops.conv as f64 / 1e9,
                self.flops.transformer() as f64 / 1e9
            ),
        }
    }
}

pub(super) fn out_or(dir: Option<PathBuf>, fallback: &Path) -> PathBuf {
    dir.unwrap_or_else(|| fallback.to_path_buf())
}
