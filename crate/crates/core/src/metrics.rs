//! Image-similarity metrics on `[0, 1]` volumes and a paired two-sided t-test.
//!
//! SSIM is windowed: an 11×11 Gaussian (σ 1.5) slides over each axial slice
//! at every fully contained position, and local scores are averaged over all
//! positions of all slices. Background voxels count everywhere.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::data::Volume;
use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

fn check_pair(x: &Volume, y: &Volume) -> Result<()> {
    if x.extents() != y.extents() {
        return Err(Error::dim(format!(
            "volumes {:?} and {:?} differ in extents",
            x.extents(),
            y.extents()
        )));
    }
    Ok(())
}

pub fn mse(x: &Volume, y: &Volume) -> Result<f64> {
    check_pair(x, y)?;
    Ok(mse_values(x.data(), y.data()))
}

/// Mean squared difference of two equal-length buffers.
pub fn mse_values(x: &[f32], y: &[f32]) -> f64 {
    assert_eq!(x.len(), y.len());
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    s / x.len() as f64
}

/// `10·log₁₀(max²/mse)`; `+∞` when `mse` is 0.
pub fn psnr_from_mse(mse: f64, max_i: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_i * max_i / mse).log10()
    }
}

pub fn psnr(x: &Volume, y: &Volume, max_i: f64) -> Result<f64> {
    if !(max_i > 0.0) {
        return Err(Error::Contract(format!(
            "psnr peak {max_i} must be positive"
        )));
    }
    Ok(psnr_from_mse(mse(x, y)?, max_i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimConstants {
    /// `C1 = 0.01·L`, `C2 = 0.02·L`.
    #[default]
    PaperLiteral,
    /// `C1 = (0.01·L)²`, `C2 = (0.03·L)²`.
    Standard,
}

impl SsimConstants {
    pub fn values(self, l: f64) -> (f64, f64) {
        match self {
            SsimConstants::PaperLiteral => (0.01 * l, 0.02 * l),
            SsimConstants::Standard => ((0.01 * l).powi(2), (0.03 * l).powi(2)),
        }
    }
}

impl std::str::FromStr for SsimConstants {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_literal" => Ok(Self::PaperLiteral),
            "standard" => Ok(Self::Standard),
            _ => Err(Error::Config(format!(
                "unknown ssim constants {s:?}; use paper_literal or standard"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range `L`.
    pub range: f64,
    pub constants: SsimConstants,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            range: 1.0,
            constants: SsimConstants::PaperLiteral,
        }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a row-major `h×w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Sum of local SSIM scores and the number of window positions of one plane.
fn ssim_plane(
    a: &[f32],
    b: &[f32],
    h: usize,
    w: usize,
    taps: &[f64],
    c1: f64,
    c2: f64,
) -> (f64, usize) {
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, taps);
    let my = filter_valid(&y, h, w, taps);
    let sxx = filter_valid(&prod(&x, &x), h, w, taps);
    let syy = filter_valid(&prod(&y, &y), h, w, taps);
    let sxy = filter_valid(&prod(&x, &y), h, w, taps);
    let mut sum = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        // Written so that x == y gives numerator == denominator bit for bit.
        let num = (2.0 * (ux * uy) + c1) * (2.0 * cxy + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        sum += num / den;
    }
    (sum, mx.len())
}

pub fn ssim(x: &Volume, y: &Volume, opts: &SsimOptions) -> Result<f64> {
    check_pair(x, y)?;
    if !(opts.range > 0.0) || opts.window == 0 || !(opts.sigma > 0.0) {
        return Err(Error::Contract(format!("invalid ssim options {opts:?}")));
    }
    let [nx, ny, nz] = x.extents();
    if opts.window > nx || opts.window > ny {
        return Err(Error::dim(format!(
            "ssim window {} exceeds {nx}×{ny} slices",
            opts.window
        )));
    }
    let taps = gaussian_taps(opts.window, opts.sigma);
    let (c1, c2) = opts.constants.values(opts.range);
    let (sum, count) = (0..nz)
        .map(|z| ssim_plane(x.axial(z), y.axial(z), ny, nx, &taps, c1, c2))
        .fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p: f64,
}

impl TTest {
    pub fn significant(&self) -> bool {
        self.p < ALPHA
    }
}

/// Paired two-sided Student's t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract(format!(
            "paired t-test needs two equal samples of at least 2 (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "paired differences are not all finite".into(),
        ));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(var > (scale * 1e-12).powi(2)) {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let df = d.len() - 1;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom: `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        if v.len() < 2 || !mean.is_finite() {
            return Self { mean, sd: 0.0 };
        }
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        Self { mean, sd }
    }
}

impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(4);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Psnr, Metric::Ssim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }

    /// Whether a larger value is better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientMetrics {
    pub id: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl PatientMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Mse => self.mse,
            Metric::Psnr => self.psnr,
            Metric::Ssim => self.ssim,
        }
    }
}

/// A paired test of this report against another on one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub metric: Metric,
    /// `None` when the differences are degenerate (e.g. infinite PSNR).
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub patients: Vec<PatientMetrics>,
    pub comparison: Option<(String, Vec<MetricComparison>)>,
}

impl MetricsReport {
    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.patients.iter().map(|p| p.get(m)).collect()
    }

    pub fn summary(&self, m: Metric) -> MeanSd {
        MeanSd::of(&self.values(m))
    }

    /// Per-patient rows, then `mean` and `sd` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("patient,mse,psnr,ssim\n");
        for p in &self.patients {
            let _ = writeln!(s, "{},{:.6e},{:.4},{:.6}", p.id, p.mse, p.psnr, p.ssim);
        }
        let [a, b, c] = Metric::ALL.map(|m| self.summary(m));
        let _ = writeln!(s, "mean,{:.6e},{:.4},{:.6}", a.mean, b.mean, c.mean);
        let _ = writeln!(s, "sd,{:.6e},{:.4},{:.6}", a.sd, b.sd, c.sd);
        s
    }

    /// `label,mse_mean,mse_sd,psnr_mean,psnr_sd,ssim_mean,ssim_sd`.
    pub fn summary_csv_row(&self) -> String {
        let [a, b, c] = Metric::ALL.map(|m| self.summary(m));
        format!(
            "{},{:.6e},{:.6e},{:.4},{:.4},{:.6},{:.6}",
            self.label, a.mean, a.sd, b.mean, b.sd, c.mean, c.sd
        )
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("{} ({} patients)\n", self.label, self.patients.len());
        let _ = writeln!(s, "  MSE  {:.5}", self.summary(Metric::Mse));
        let _ = writeln!(s, "  PSNR {:.2} dB", self.summary(Metric::Psnr));
        let _ = writeln!(s, "  SSIM {:.4}", self.summary(Metric::Ssim));
        if let Some((against, tests)) = &self.comparison {
            let _ = writeln!(s, "  paired t-tests against {against} (alpha {ALPHA}):");
            for c in tests {
                match c.test {
                    Some(t) => {
                        let flag = if t.significant() {
                            "significant"
                        } else {
                            "not significant"
                        };
                        let _ = writeln!(
                            s,
                            "    {:<4} t = {:.4}, df = {}, p = {:.4e} ({flag})",
                            c.metric.name(),
                            t.t,
                            t.df,
                            t.p
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            "    {:<4} not testable (degenerate differences)",
                            c.metric.name()
                        );
                    }
                }
            }
        }
        s
    }

    /// Whether this report beats `other` on every metric by mean.
    pub fn better_than(&self, other: &MetricsReport) -> bool {
        Metric::ALL.into_iter().all(|m| {
            let (a, b) = (self.summary(m).mean, other.summary(m).mean);
            if m.higher_is_better() {
                a > b
            } else {
                a < b
            }
        })
    }
}

/// Per-patient metrics on `[0, 1]` volumes with peak 1, in `gt` order.
///
/// With `baseline`, adds paired t-tests of this report against it.
pub fn evaluate(
    label: &str,
    pred: &[(String, Volume)],
    gt: &[(String, Volume)],
    baseline: Option<&MetricsReport>,
    opts: &SsimOptions,
) -> Result<MetricsReport> {
    let missing: Vec<&str> = gt
        .iter()
        .filter(|(id, _)| !pred.iter().any(|(p, _)| p == id))
        .map(|(id, _)| id.as_str())
        .collect();
    let extra: Vec<&str> = pred
        .iter()
        .filter(|(id, _)| !gt.iter().any(|(g, _)| g == id))
        .map(|(id, _)| id.as_str())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Pairing(format!(
            "no prediction for {missing:?}; no ground truth for {extra:?}"
        )));
    }
    let patients = gt
        .par_iter()
        .map(|(id, g)| {
            let (_, p) = pred
                .iter()
                .find(|(x, _)| x == id)
                .expect("pairing checked above");
            let m = mse(p, g)?;
            Ok(PatientMetrics {
                id: id.clone(),
                mse: m,
                psnr: psnr_from_mse(m, 1.0),
                ssim: ssim(p, g, opts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport {
        label: label.into(),
        patients,
        comparison: None,
    };
    if let Some(base) = baseline {
        report.comparison = Some((base.label.clone(), compare(&report, base)?));
    }
    Ok(report)
}

/// Paired t-tests per metric; patient sets must match.
pub fn compare(report: &MetricsReport, base: &MetricsReport) -> Result<Vec<MetricComparison>> {
    let mut pairs = Vec::with_capacity(report.patients.len());
    for p in &report.patients {
        let q = base.patients.iter().find(|q| q.id == p.id).ok_or_else(|| {
            Error::Pairing(format!("patient {} missing from {}", p.id, base.label))
        })?;
        pairs.push((p, q));
    }
    if base.patients.len() != pairs.len() {
        return Err(Error::Pairing(format!(
            "{} has patients absent from {}",
            base.label, report.label
        )));
    }
    Ok(Metric::ALL
        .into_iter()
        .map(|m| {
            let a: Vec<f64> = pairs.iter().map(|(p, _)| p.get(m)).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, q)| q.get(m)).collect();
            MetricComparison {
                metric: m,
                test: paired_t_test(&a, &b).ok(),
            }
        })
        .collect())
}
