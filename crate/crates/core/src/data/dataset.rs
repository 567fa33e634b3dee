//! On-disk datasets: one directory per case holding `<modality>.nii`, plus a
//! `manifest.txt` with one line per case:
//!
//! ```text
//! phantom000 t1w=phantom000/t1w.nii flair=phantom000/flair.nii adc=phantom000/adc.nii mask=phantom000/mask.nii split=train
//! ```
//!
//! Paths are relative to the dataset directory. `mask=` is optional.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{nifti_read, nifti_write, Modality, PatientCase, Split, SplitManifest};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cases: Vec<PatientCase>,
    pub splits: SplitManifest,
}

impl Dataset {
    /// Every case must have exactly one split.
    pub fn new(cases: Vec<PatientCase>, splits: SplitManifest) -> Result<Self> {
        let missing: Vec<&str> = cases
            .iter()
            .filter(|c| splits.split_of(&c.id).is_none())
            .map(|c| c.id.as_str())
            .collect();
        let extra: Vec<&str> = splits
            .assignments()
            .iter()
            .filter(|(id, _)| !cases.iter().any(|c| &c.id == id))
            .map(|(id, _)| id.as_str())
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Pairing(format!(
                "cases without a split: {missing:?}; split ids without a case: {extra:?}"
            )));
        }
        Ok(Self { cases, splits })
    }

    pub fn split_cases(&self, split: Split) -> impl Iterator<Item = &PatientCase> {
        self.cases
            .iter()
            .filter(move |c| self.splits.split_of(&c.id) == Some(split))
    }

    pub fn case(&self, id: &str) -> Option<&PatientCase> {
        self.cases.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset directory.
    pub paths: Vec<(Modality, PathBuf)>,
    pub split: Split,
}

impl ManifestEntry {
    pub fn path(&self, m: Modality) -> Option<&Path> {
        self.paths
            .iter()
            .find(|(x, _)| *x == m)
            .map(|(_, p)| p.as_path())
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let err = |msg: String| Error::Config(format!("{MANIFEST_FILE} line {lineno}: {msg}"));
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .ok_or_else(|| err("missing case id".into()))?
            .to_string();
        let (mut paths, mut split) = (Vec::new(), None);
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| err(format!("field {f:?} is not key=value")))?;
            if k == "split" {
                split = Some(v.parse::<Split>().map_err(|e| err(e.to_string()))?);
                continue;
            }
            let m = k.parse::<Modality>().map_err(|e| err(e.to_string()))?;
            if paths.iter().any(|(x, _)| *x == m) {
                return Err(err(format!("{m} listed twice")));
            }
            paths.push((m, PathBuf::from(v)));
        }
        for m in [Modality::T1w, Modality::Flair, Modality::Adc] {
            if !paths.iter().any(|(x, _)| *x == m) {
                return Err(err(format!("case {id} has no {m} path")));
            }
        }
        let split = split.ok_or_else(|| err(format!("case {id} has no split")))?;
        Ok(Self { id, paths, split })
    }

    fn render(&self) -> String {
        let mut s = self.id.clone();
        for (m, p) in &self.paths {
            let _ = write!(s, " {m}={}", p.display());
        }
        let _ = write!(s, " split={}", self.split);
        s
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| ManifestEntry::parse(l, i + 1))
        .collect()
}

/// Writes every case and the manifest. Output bytes depend only on `ds`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<Vec<ManifestEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.cases.len());
    for case in &ds.cases {
        fs::create_dir_all(dir.join(&case.id))?;
        let mut paths = Vec::new();
        for m in Modality::ALL {
            if let Some(v) = case.volume(m) {
                let rel = PathBuf::from(&case.id).join(format!("{m}.nii"));
                nifti_write(dir.join(&rel), v)?;
                paths.push((m, rel));
            }
        }
        let split = ds
            .splits
            .split_of(&case.id)
            .expect("Dataset::new checks every case has a split");
        entries.push(ManifestEntry {
            id: case.id.clone(),
            paths,
            split,
        });
    }
    let mut text = String::new();
    for e in &entries {
        text.push_str(&e.render());
        text.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(entries)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir)?;
    let mut cases = Vec::with_capacity(entries.len());
    for e in &entries {
        let load = |m: Modality| -> Result<Option<_>> {
            e.path(m).map(|p| nifti_read(dir.join(p), m)).transpose()
        };
        let need =
            |m: Modality| load(m).map(|v| v.expect("manifest parsing requires intensity paths"));
        cases.push(PatientCase::new(
            e.id.clone(),
            need(Modality::T1w)?,
            need(Modality::Flair)?,
            need(Modality::Adc)?,
            load(Modality::Mask)?,
        )?);
    }
    let splits =
        SplitManifest::from_assignments(entries.iter().map(|e| (e.id.clone(), e.split)).collect())?;
    Dataset::new(cases, splits)
}
