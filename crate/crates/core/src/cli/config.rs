//! `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, keys are case-sensitive and may
//! appear once. `profile` (full, desk, tiny) is applied before every other key
//! wherever it appears, so a file can name a profile and override parts of it.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::Modalities;
use crate::error::{Error, Result};
use crate::metrics::SsimConstants;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Desk,
    Tiny,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
            Profile::Tiny => "tiny",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Profile::Full => ModelConfig::full(),
            Profile::Desk => ModelConfig::desk(),
            Profile::Tiny => ModelConfig::tiny(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Profile::Full => TrainConfig::default(),
            Profile::Desk | Profile::Tiny => TrainConfig::desk(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            "tiny" => Ok(Profile::Tiny),
            _ => Err(Error::Config(format!(
                "unknown profile {s:?}; use full, desk or tiny"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Train/val/test fractions for generated datasets.
    pub split: (f64, f64, f64),
    pub modalities: Modalities,
    pub ssim_constants: SsimConstants,
}

/// Fractions used when a dataset is generated without an explicit split.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.5, 0.2, 0.3);

impl RunConfig {
    pub fn from_profile(profile: Profile) -> Self {
        Self {
            profile,
            model: profile.model(),
            train: profile.train(),
            data: None,
            out: None,
            split: DEFAULT_SPLIT,
            modalities: Modalities::Both,
            ssim_constants: SsimConstants::PaperLiteral,
        }
    }

    /// Parses a config file; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {lineno}: expected `key = value`, got {line:?}"
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {lineno}: missing key")));
            }
            if let Some((first, _, _)) = entries.iter().find(|(_, key, _)| *key == k) {
                return Err(Error::Config(format!(
                    "line {lineno}: {k} already set on line {first}"
                )));
            }
            entries.push((lineno, k, v));
        }
        let profile = match entries.iter().find(|(_, k, _)| *k == "profile") {
            Some((n, _, v)) => v
                .parse()
                .map_err(|e: Error| Error::Config(format!("line {n}: {}", inner(e))))?,
            None => Profile::Desk,
        };
        let mut cfg = Self::from_profile(profile);
        let mut channels_set = false;
        for (n, k, v) in entries {
            if k == "profile" {
                continue;
            }
            channels_set |= k == "in_channels";
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {n}: {}", inner(e))))?;
        }
        if channels_set && cfg.model.in_channels != cfg.modalities.channels() {
            return Err(Error::Config(format!(
                "in_channels {} contradicts modalities {} ({} channels)",
                cfg.model.in_channels,
                cfg.modalities,
                cfg.modalities.channels()
            )));
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Applies one override. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        match key {
            "profile" => {
                let p: Profile = value.parse()?;
                let keep = (
                    self.data.clone(),
                    self.out.clone(),
                    self.split,
                    self.modalities,
                    self.ssim_constants,
                );
                *self = Self::from_profile(p);
                (
                    self.data,
                    self.out,
                    self.split,
                    self.modalities,
                    self.ssim_constants,
                ) = keep;
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "split" => self.split = parse_split(value)?,
            "modalities" => self.modalities = value.parse()?,
            "ssim_constants" => self.ssim_constants = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides, then re-resolves derived fields.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {p:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.resolve()
    }

    /// Derives `in_channels` from the modalities and validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        self.model.in_channels = self.modalities.channels();
        self.model.validate()?;
        self.train.validate()?;
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "split {:?} must be fractions summing to 1",
                self.split
            )));
        }
        Ok(())
    }

    /// Every key with its resolved value; [`parse`](Self::parse) reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = format!("profile = {}\n", self.profile.as_str());
        for (k, v) in self.model.entries().into_iter().chain(self.train.entries()) {
            if k == "in_channels" {
                continue;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        if let Some(o) = &self.out {
            let _ = writeln!(s, "out = {}", o.display());
        }
        let (a, b, c) = self.split;
        let _ = writeln!(s, "split = {a:?},{b:?},{c:?}");
        let _ = writeln!(s, "modalities = {}", self.modalities);
        let mode = match self.ssim_constants {
            SsimConstants::PaperLiteral => "paper_literal",
            SsimConstants::Standard => "standard",
        };
        let _ = writeln!(s, "ssim_constants = {mode}");
        s
    }
}

fn inner(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

pub fn parse_split(v: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("split: {p:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Config(format!("split {v:?} needs three fractions"))),
    }
}
