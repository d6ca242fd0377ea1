//! Patch-sweep experiment: resample, crop, scale to `[λ_min, λ_max]`, corrupt,
//! restore with each method and score against the clean source.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselines::{glbp_restore, median_filter_3x3, GlbpConfig};
use crate::channel::{poisson_sample, splitmix64};
use crate::error::{Error, Result};
use crate::exact::run_exact_em;
use crate::fieldio::write_atomic;
use crate::fixtures;
use crate::image::{resample_half_with_blur, scale_to_source, CountImage, IntensityImage};
use crate::lbp::Correlations;
use crate::metrics::{isnr, psnr, summarize, EvalRecord};
use crate::pgm;
use crate::restore::{restore, Diagnostics, RestoreConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ours,
    Exact,
    Glbp,
    Median,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::Exact, Method::Glbp, Method::Median];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Exact => "exact",
            Method::Glbp => "glbp",
            Method::Median => "median",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}' (expected ours, exact, glbp or median)")))
    }
}

/// Output of one restoration method.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub lambda: IntensityImage,
    pub diagnostics: Option<Diagnostics>,
}

/// GLBP settings mirroring the shared restore options.
pub fn glbp_config(cfg: &RestoreConfig) -> GlbpConfig {
    GlbpConfig {
        init: None,
        h: cfg.h,
        lbp: cfg.lbp,
        em_tol: cfg.em_tol,
        em_max_iter: cfg.em_max_iter,
    }
}

pub fn run_method(method: Method, z: &CountImage, cfg: &RestoreConfig) -> Result<MethodOutput> {
    Ok(match method {
        Method::Ours => {
            let r = restore(z, cfg)?;
            MethodOutput { lambda: r.lambda.into_grid(), diagnostics: Some(r.diagnostics) }
        }
        Method::Exact => {
            let r = run_exact_em(z, cfg)?;
            MethodOutput { lambda: r.lambda.into_grid(), diagnostics: Some(r.diagnostics) }
        }
        Method::Glbp => {
            let r = glbp_restore(z, &glbp_config(cfg))?;
            MethodOutput { lambda: r.lambda.into_grid(), diagnostics: Some(r.diagnostics) }
        }
        Method::Median => MethodOutput { lambda: median_filter_3x3(z), diagnostics: None },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    /// Built-in synthetic image, written `fixture:<name>` in plan files.
    Fixture(String),
}

impl ImageSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("fixture:") {
            Some(name) if fixtures::NAMES.contains(&name) => Ok(Self::Fixture(name.to_owned())),
            Some(name) => Err(Error::invalid(format!("unknown fixture '{name}'"))),
            None if s.is_empty() => Err(Error::invalid("empty image path")),
            None => Ok(Self::Path(PathBuf::from(s))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Fixture(name) => name.clone(),
            Self::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
        }
    }

    pub fn load(&self) -> Result<IntensityImage> {
        match self {
            Self::Path(p) => pgm::read(p),
            Self::Fixture(name) => Ok(fixtures::named(name, FIXTURE_SIZE, FIXTURE_SIZE).expect("validated fixture name")),
        }
    }
}

/// Side length of built-in fixtures before resampling.
pub const FIXTURE_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub images: Vec<ImageSource>,
    pub patches_per_image: usize,
    pub patch_size: usize,
    pub lambda_min: f64,
    pub lambda_max: Vec<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub blur_sigma: f64,
    pub restore: RestoreConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            patches_per_image: 10,
            patch_size: 64,
            lambda_min: 2.0,
            lambda_max: vec![20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0],
            methods: vec![Method::Ours, Method::Glbp, Method::Median],
            seed: 0,
            blur_sigma: 1.0,
            restore: RestoreConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse { format: "plan", msg: format!("bad value for {key}: '{v}'") })
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl ExperimentPlan {
    /// Parses a `key = value` plan over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                format: "plan",
                msg: format!("line {}: expected key = value", lineno + 1),
            })?;
            plan.set(key.trim(), value.trim())?;
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let r = &mut self.restore;
        match key {
            "images" => self.images = split_list(v).map(ImageSource::parse).collect::<Result<_>>()?,
            "patches_per_image" => self.patches_per_image = parse_value(key, v)?,
            "patch_size" => self.patch_size = parse_value(key, v)?,
            "lambda_min" => self.lambda_min = parse_value(key, v)?,
            "lambda_max" => self.lambda_max = split_list(v).map(|s| parse_value(key, s)).collect::<Result<_>>()?,
            "methods" => self.methods = split_list(v).map(Method::from_str).collect::<Result<_>>()?,
            "seed" => self.seed = parse_value(key, v)?,
            "blur_sigma" => self.blur_sigma = parse_value(key, v)?,
            "k" => r.k = Some(parse_value(key, v)?),
            "h" => r.h = parse_value(key, v)?,
            "alpha0" => r.alpha0 = parse_value(key, v)?,
            "xi0" => r.xi0 = parse_value(key, v)?,
            "lbp_tol" => r.lbp.tol = parse_value(key, v)?,
            "lbp_max_sweeps" => r.lbp.max_sweeps = parse_value(key, v)?,
            "damping" => r.lbp.damping = parse_value(key, v)?,
            "em_tol" => r.em_tol = parse_value(key, v)?,
            "em_max_iters" => r.em_max_iter = parse_value(key, v)?,
            "mean_field" => {
                let on: bool = parse_value(key, v)?;
                r.correlations = if on { Correlations::MeanField } else { Correlations::Pairwise };
            }
            _ => return Err(Error::Parse { format: "plan", msg: format!("unknown key '{key}'") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches_per_image == 0 || self.patch_size == 0 {
            return Err(Error::invalid("patches_per_image and patch_size must be >= 1"));
        }
        if !(self.lambda_min > 0.0) || self.lambda_max.is_empty() {
            return Err(Error::invalid("lambda_min must be > 0 and lambda_max non-empty"));
        }
        if let Some(bad) = self.lambda_max.iter().find(|&&l| !(l > self.lambda_min && l.is_finite())) {
            return Err(Error::invalid(format!("lambda_max {bad} must exceed lambda_min {}", self.lambda_min)));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::invalid("blur_sigma must be >= 0"));
        }
        self.restore.validate()
    }
}

/// 64-bit hash of a sequence of byte strings, stable across platforms and
/// toolchains (unlike `DefaultHasher`).
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut acc = 0x5EED_0F1A_u64;
    for part in parts {
        for &b in *part {
            acc = splitmix64(acc ^ u64::from(b));
        }
        acc = splitmix64(acc ^ 0xFF);
    }
    acc
}

/// Seed for the Poisson draw of one (image, patch, contrast) job.
pub fn job_seed(master: u64, image: &str, patch_id: usize, lambda_max: f64) -> u64 {
    stable_hash(&[
        &master.to_le_bytes(),
        image.as_bytes(),
        &(patch_id as u64).to_le_bytes(),
        &lambda_max.to_bits().to_le_bytes(),
    ])
}

/// Top-left corner of a patch; shared across contrasts of the same patch.
pub fn patch_origin(master: u64, image: &str, patch_id: usize, width: usize, height: usize, size: usize) -> (usize, usize) {
    let hx = stable_hash(&[&master.to_le_bytes(), image.as_bytes(), &(patch_id as u64).to_le_bytes(), b"x"]);
    let hy = stable_hash(&[&master.to_le_bytes(), image.as_bytes(), &(patch_id as u64).to_le_bytes(), b"y"]);
    ((hx % (width - size + 1) as u64) as usize, (hy % (height - size + 1) as u64) as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobFailure {
    pub image: String,
    pub patch_id: usize,
    pub lambda_max: f64,
    pub method: Option<Method>,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<JobFailure>,
}

struct Job<'a> {
    image: String,
    resampled: &'a IntensityImage,
    patch_id: usize,
    origin: (usize, usize),
    lambda_max: f64,
}

/// Runs the plan on up to `jobs` threads (`None` uses all cores). Results
/// do not depend on the thread count.
pub fn run_experiment(plan: &ExperimentPlan, jobs: Option<usize>) -> Result<ExperimentOutcome> {
    plan.validate()?;
    if plan.images.is_empty() {
        return Err(Error::invalid("plan lists no images"));
    }
    let mut prepared = Vec::with_capacity(plan.images.len());
    for src in &plan.images {
        let img = resample_half_with_blur(&src.load()?, plan.blur_sigma)?;
        if img.width() < plan.patch_size || img.height() < plan.patch_size {
            return Err(Error::invalid(format!(
                "{}: resampled size {}x{} is smaller than patch size {}",
                src.label(),
                img.width(),
                img.height(),
                plan.patch_size
            )));
        }
        prepared.push((src.label(), img));
    }

    let mut work = Vec::new();
    for (label, img) in &prepared {
        for patch_id in 0..plan.patches_per_image {
            let origin = patch_origin(plan.seed, label, patch_id, img.width(), img.height(), plan.patch_size);
            for &lambda_max in &plan.lambda_max {
                work.push(Job { image: label.clone(), resampled: img, patch_id, origin, lambda_max });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<(Vec<EvalRecord>, Vec<JobFailure>)> =
        pool.install(|| work.par_iter().map(|job| run_job(plan, job)).collect());

    let mut outcome = ExperimentOutcome::default();
    for (records, failures) in results {
        outcome.records.extend(records);
        outcome.failures.extend(failures);
    }
    Ok(outcome)
}

fn run_job(plan: &ExperimentPlan, job: &Job<'_>) -> (Vec<EvalRecord>, Vec<JobFailure>) {
    let fail = |method: Option<Method>, e: Error| JobFailure {
        image: job.image.clone(),
        patch_id: job.patch_id,
        lambda_max: job.lambda_max,
        method,
        error: e.to_string(),
    };
    let seed = job_seed(plan.seed, &job.image, job.patch_id, job.lambda_max);
    let (x0, y0) = job.origin;
    let source = match job
        .resampled
        .crop(x0, y0, plan.patch_size, plan.patch_size)
        .and_then(|p| scale_to_source(&p, plan.lambda_min, job.lambda_max))
    {
        Ok(s) => s,
        Err(e) => return (Vec::new(), vec![fail(None, e)]),
    };
    let z = poisson_sample(&source, seed);
    let corrupted = z.to_real();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &method in &plan.methods {
        let scored = run_method(method, &z, &plan.restore).and_then(|out| {
            Ok((psnr(&out.lambda, &source)?, isnr(&corrupted, &out.lambda, &source)?))
        });
        match scored {
            Ok((psnr_db, isnr_db)) => records.push(EvalRecord {
                image: job.image.clone(),
                patch_id: job.patch_id,
                seed,
                lambda_max: job.lambda_max,
                method: method.as_str().to_owned(),
                psnr_db,
                isnr_vs_corrupted_db: isnr_db,
            }),
            Err(e) => {
                log::warn!("{} patch {} lambda_max {} {method}: {e}", job.image, job.patch_id, job.lambda_max);
                failures.push(fail(Some(method), e));
            }
        }
    }
    (records, failures)
}

pub fn metrics_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "patch_id", "seed", "lambda_max", "method", "psnr_db", "isnr_vs_corrupted_db"])?;
    for r in records {
        w.write_record([
            r.image.clone(),
            r.patch_id.to_string(),
            r.seed.to_string(),
            r.lambda_max.to_string(),
            r.method.clone(),
            r.psnr_db.to_string(),
            r.isnr_vs_corrupted_db.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Per-(method, λ_max) quantiles of PSNR, ISNR against the corrupted input,
/// and ISNR of `ours` against each other method on the same jobs.
pub fn boxplot_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    type Cell = (String, u64);
    let key = |r: &EvalRecord| (r.method.clone(), r.lambda_max.to_bits());
    let mut cells: BTreeMap<(Cell, &'static str), Vec<f64>> = BTreeMap::new();
    let mut ours: BTreeMap<(&str, usize, u64), f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == "ours") {
        ours.insert((&r.image, r.patch_id, r.lambda_max.to_bits()), r.psnr_db);
    }
    for r in records {
        cells.entry((key(r), "psnr_db")).or_default().push(r.psnr_db);
        cells.entry((key(r), "isnr_vs_corrupted_db")).or_default().push(r.isnr_vs_corrupted_db);
        if r.method != "ours" {
            if let Some(p) = ours.get(&(r.image.as_str(), r.patch_id, r.lambda_max.to_bits())) {
                cells.entry((key(r), "isnr_ours_vs_method_db")).or_default().push(p - r.psnr_db);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "lambda_max", "metric", "count", "min", "q1", "median", "q3", "max"])?;
    for (((method, lmax), metric), values) in &cells {
        let s = summarize(values).expect("cells are non-empty");
        w.write_record([
            method.clone(),
            f64::from_bits(*lmax).to_string(),
            metric.to_string(),
            s.count.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

pub fn failures_csv(failures: &[JobFailure]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "patch_id", "lambda_max", "method", "error"])?;
    for f in failures {
        w.write_record([
            f.image.clone(),
            f.patch_id.to_string(),
            f.lambda_max.to_string(),
            f.method.map(|m| m.as_str().to_owned()).unwrap_or_default(),
            f.error.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Writes `metrics.csv`, `boxplot.csv` and `failures.csv` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(&outcome.records)?)?;
    write_atomic(&dir.join("boxplot.csv"), &boxplot_csv(&outcome.records)?)?;
    write_atomic(&dir.join("failures.csv"), &failures_csv(&outcome.failures)?)
}
