//! Batch evaluation, runtime benchmarking, leaderboards and gradient-check
//! reports.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, Image};
use crate::loss::gradcheck::{check_term, TermCheck, DEFAULT_EPS, DEFAULT_TOLERANCE};
use crate::loss::LossTerm;
use crate::metrics::{
    challenge_score, default_score_constant, psnr, ssim, LeaderboardRow, SsimParams,
};
use crate::tinynet::{unet_forward, NetSpec, WeightStore};

/// Process exit codes shared by the command-line front end.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const VALIDATION: i32 = 4;
    pub const GRADCHECK: i32 = 5;
}

pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_io() {
        exit::IO
    } else {
        exit::VALIDATION
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if jobs > 0 {
        b = b.num_threads(jobs);
    }
    b.build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub samples: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl RuntimeStats {
    /// Median (midpoint of the two central values for even counts), mean and
    /// nearest-rank 95th percentile.
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() || ms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "runtime samples must be non-empty, finite and non-negative".into(),
            ));
        }
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).max(1);
        Ok(Self {
            samples: n,
            median_ms: median,
            mean_ms: s.iter().sum::<f64>() / n as f64,
            p95_ms: s[rank - 1],
        })
    }
}

/// Times `iters` forward passes over a seeded random `size x size` input
/// after `warmup` discarded passes.
pub fn bench_forward(
    spec: &NetSpec,
    weights: &WeightStore,
    size: usize,
    warmup: usize,
    iters: usize,
    seed: u64,
) -> Result<RuntimeStats> {
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size * spec.image_channels;
    let input = Image::new(
        size,
        size,
        spec.image_channels,
        (0..n).map(|_| rng.gen()).collect(),
    )?;
    for _ in 0..warmup {
        unet_forward(&input, weights, spec)?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        let out = unet_forward(&input, weights, spec)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    RuntimeStats::from_samples(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub ssim: SsimParams,
    pub score_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub runtime: Option<RuntimeStats>,
    pub score: Option<f64>,
    /// Ground-truth files without a prediction.
    pub missing_pred: Vec<String>,
    /// Predictions without a ground-truth file.
    pub missing_gt: Vec<String>,
    pub config: EvalConfig,
}

impl EvalReport {
    /// Attaches runtime statistics; the score uses the mean PSNR and the
    /// median runtime.
    pub fn with_runtime(mut self, stats: RuntimeStats) -> Result<Self> {
        self.score = Some(challenge_score(
            self.mean_psnr,
            stats.median_ms,
            self.config.score_constant,
        )?);
        self.runtime = Some(stats);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Per-image rows followed by a `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        for r in &self.rows {
            w.serialize(r).map_err(ser)?;
        }
        w.serialize(EvalRow {
            id: "mean".into(),
            psnr: self.mean_psnr,
            ssim: self.mean_ssim,
        })
        .map_err(ser)?;
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_png = name
            .rsplit_once('.')
            .is_some_and(|(_, ext)| ext.eq_ignore_ascii_case("png"));
        if is_png && entry.path().is_file() {
            names.insert(name);
        }
    }
    Ok(names)
}

fn evaluate_one(name: &str, pred: &Path, gt: &Path, p: &SsimParams) -> Result<EvalRow> {
    let (a, b) = (load_image(pred)?, load_image(gt)?);
    let tagged = |e: Error| match e {
        Error::ShapeMismatch { expected, found } => Error::ShapeMismatch {
            expected: format!("{expected} ({name}, ground truth)"),
            found: format!("{found} (prediction)"),
        },
        other => other,
    };
    Ok(EvalRow {
        id: name.to_string(),
        psnr: psnr(&b, &a, 1.0).map_err(tagged)?,
        ssim: ssim(&b, &a, p).map_err(tagged)?,
    })
}

/// PSNR and SSIM for every file name present in both directories.
///
/// Pairs are evaluated on up to `jobs` threads (0 picks the default);
/// rows are ordered by file name and the means are summed in that order,
/// so the report does not depend on `jobs`.
pub fn evaluate_pairs(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    p: &SsimParams,
    jobs: usize,
) -> Result<EvalReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    p.validate()?;
    let (pred, gt) = (png_names(pred_dir)?, png_names(gt_dir)?);
    let matched: Vec<&String> = pred.intersection(&gt).collect();
    if matched.is_empty() {
        return Err(Error::NoMatchedPairs);
    }
    for name in gt.difference(&pred) {
        log::warn!("no prediction for {name}");
    }
    let rows = pool(jobs)?.install(|| {
        matched
            .par_iter()
            .map(|name| evaluate_one(name, &pred_dir.join(name), &gt_dir.join(name), p))
            .collect::<Result<Vec<_>>>()
    })?;
    let n = rows.len() as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
        runtime: None,
        score: None,
        missing_pred: gt.difference(&pred).cloned().collect(),
        missing_gt: pred.difference(&gt).cloned().collect(),
        config: EvalConfig {
            pred_dir: pred_dir.to_path_buf(),
            gt_dir: gt_dir.to_path_buf(),
            ssim: *p,
            score_constant: default_score_constant(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaderboardFormat {
    Csv,
    Markdown,
}

impl FromStr for LeaderboardFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::InvalidArgument(format!(
                "unknown leaderboard format `{other}`"
            ))),
        }
    }
}

/// Score descending, ties broken by team name.
pub fn rank_rows(rows: &[LeaderboardRow]) -> Vec<LeaderboardRow> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.team.cmp(&b.team))
    });
    sorted
}

pub fn emit_leaderboard(rows: &[LeaderboardRow], format: LeaderboardFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "leaderboard needs at least one row".into(),
        ));
    }
    for r in rows {
        r.validate()?;
    }
    let ranked = rank_rows(rows);
    match format {
        LeaderboardFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &ranked {
                w.serialize(r)
                    .map_err(|e| Error::Serialization(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Serialization(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
        }
        LeaderboardFormat::Markdown => {
            let mut out = String::from(
                "| Rank | Team | PSNR↑ | SSIM↑ | Runtime, ms | Final Score |\n|---:|---|---:|---:|---:|---:|\n",
            );
            for (i, r) in ranked.iter().enumerate() {
                out += &format!(
                    "| {} | {} | {:.2} | {:.4} | {} | {} |\n",
                    i + 1,
                    r.team,
                    r.psnr,
                    r.ssim,
                    r.runtime_ms,
                    r.score
                );
            }
            Ok(out)
        }
    }
}

/// Reads rows with the `team,psnr,ssim,runtime_ms,score` header.
pub fn read_leaderboard_csv(reader: impl Read) -> Result<Vec<LeaderboardRow>> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(reader).deserialize() {
        let row: LeaderboardRow = rec.map_err(|e| Error::Serialization(e.to_string()))?;
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Accepts tags or the word `all`.
pub fn parse_terms<S: AsRef<str>>(tags: &[S]) -> Result<Vec<LossTerm>> {
    if tags.is_empty() || tags.iter().any(|t| t.as_ref() == "all") {
        return Ok(LossTerm::ALL.to_vec());
    }
    let mut out = Vec::new();
    for t in tags {
        let term: LossTerm = t.as_ref().parse()?;
        if !out.contains(&term) {
            out.push(term);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: Vec<u64>,
    pub size: usize,
    /// Step at which pass/fail is decided.
    pub eps: f64,
    pub tolerance: f64,
    /// Extra steps reported for information.
    pub sweep: Vec<f64>,
    /// Negative control: corrupts the analytic gradient of this term.
    pub corrupt: Option<LossTerm>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            size: 16,
            eps: DEFAULT_EPS,
            tolerance: DEFAULT_TOLERANCE,
            sweep: vec![1e-4, 1e-5, 1e-6],
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TermReport {
    pub term: LossTerm,
    pub decisive: TermCheck,
    pub sweep: Vec<TermCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub terms: Vec<TermReport>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<LossTerm> {
        self.terms
            .iter()
            .filter(|t| !t.decisive.passed)
            .map(|t| t.term)
            .collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>8} {:>12} {:>6}  sweep",
            "term", "eps", "max_rel_err", "result"
        )?;
        for t in &self.terms {
            let sweep: Vec<String> = t
                .sweep
                .iter()
                .map(|c| format!("{:e}:{:.2e}", c.eps, c.max_relative_error))
                .collect();
            writeln!(
                f,
                "{:<14} {:>8.0e} {:>12.3e} {:>6}  {}",
                t.term.tag(),
                t.decisive.eps,
                t.decisive.max_relative_error,
                if t.decisive.passed { "PASS" } else { "FAIL" },
                sweep.join(" ")
            )?;
        }
        Ok(())
    }
}

fn corrupt_gradient(g: &Image) -> Image {
    g.map(|v| 1.1 * v + 1e-3).expect("finite gradient")
}

pub fn run_gradcheck(terms: &[LossTerm], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "gradcheck needs at least one seed".into(),
        ));
    }
    let mut reports = Vec::with_capacity(terms.len());
    for &term in terms {
        let hook: Option<&(dyn Fn(&Image) -> Image + Sync)> =
            (opts.corrupt == Some(term)).then_some(&corrupt_gradient as _);
        let check = |eps| check_term(term, &opts.seeds, opts.size, eps, opts.tolerance, hook);
        let decisive = check(opts.eps)?;
        let sweep = opts
            .sweep
            .iter()
            .map(|&eps| {
                if eps == opts.eps {
                    Ok(decisive.clone())
                } else {
                    check(eps)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(TermReport {
            term,
            decisive,
            sweep,
        });
    }
    let passed = reports.iter().all(|t| t.decisive.passed);
    Ok(GradcheckReport {
        terms: reports,
        passed,
    })
}
