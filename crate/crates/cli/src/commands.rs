use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bokeh_core::harness::{
    bench_forward, emit_leaderboard, evaluate_pairs, exit, parse_terms, read_leaderboard_csv,
    run_gradcheck, GradcheckOptions, LeaderboardFormat, RuntimeStats,
};
use bokeh_core::image::{load_image, save_image, BitDepth};
use bokeh_core::metrics::{challenge_score, default_score_constant, table1_rows};
use bokeh_core::prep::{
    align_manifest, prep_manifest, scan_pairs_with, PairManifest, PrepOptions, Split,
};
use bokeh_core::prep::{CANONICAL_HEIGHT, DEFAULT_SEARCH};
use bokeh_core::render::{render_bokeh_detailed, DisparityMap};
use bokeh_core::tinynet::{load_weights, random_weights, save_weights, unet_forward};
use bokeh_core::{LossTerm, NetSpec, RenderParams, SsimParams, WeightStore};

use crate::{
    AlignArgs, BenchArgs, EvaluateArgs, Globals, GradcheckArgs, InferArgs, LeaderboardArgs,
    NetArgs, PrepArgs, RenderArgs, ScoreArgs, UsageError,
};

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| UsageError(format!("missing --{flag}")).into())
}

fn depth(bits: Option<u32>) -> Result<BitDepth> {
    Ok(BitDepth::from_bits(bits.unwrap_or(8))?)
}

/// Writes to `out`, or standard output when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn net_spec(a: &NetArgs) -> Result<NetSpec> {
    let d = NetSpec::default();
    let spec = NetSpec {
        levels: a.levels.unwrap_or(d.levels),
        base_channels: a.base_channels.unwrap_or(d.base_channels),
        leaky_slope: a.leaky_slope.unwrap_or(d.leaky_slope),
        skip_connections: !a.no_skip,
        ..d
    };
    spec.validate()?;
    Ok(spec)
}

fn weights_for(path: &Option<PathBuf>, spec: &NetSpec, seed: u64) -> Result<WeightStore> {
    match path {
        Some(p) => Ok(load_weights(p)?),
        None => {
            log::warn!("no --weights given; using random weights from seed {seed}");
            Ok(random_weights(spec, seed)?)
        }
    }
}

pub fn render(a: &RenderArgs) -> Result<i32> {
    let d = RenderParams::default();
    let p = RenderParams {
        max_radius: a.max_radius.unwrap_or(d.max_radius),
        focal_disparity: a.focal_disparity.unwrap_or(d.focal_disparity),
        mask_threshold: a.mask_threshold.unwrap_or(d.mask_threshold),
        feather: a.feather.unwrap_or(d.feather),
    };
    let img = load_image(required(&a.image, "image")?)?;
    let disp = DisparityMap::load(required(&a.disparity, "disparity")?)?;
    let out = required(&a.out, "out")?;
    let bits = depth(a.bits)?;
    let r = render_bokeh_detailed(&img, &disp, &p)?;
    save_image(&r.image, out, bits)?;
    if let Some(m) = &a.mask_out {
        save_image(&r.mask.to_image(), m, bits)?;
    }
    log::info!(
        "rendered {} (max radius {:.2})",
        out.display(),
        r.radii.max_radius()
    );
    Ok(exit::OK)
}

pub fn infer(a: &InferArgs, g: &Globals) -> Result<i32> {
    let spec = net_spec(&a.net)?;
    let img = load_image(required(&a.image, "image")?)?;
    let out = required(&a.out, "out")?;
    let w = weights_for(&a.weights, &spec, g.seed)?;
    save_image(&unet_forward(&img, &w, &spec)?, out, depth(a.bits)?)?;
    Ok(exit::OK)
}

pub fn evaluate(a: &EvaluateArgs, g: &Globals) -> Result<i32> {
    let format = a.format.as_deref().unwrap_or("json");
    if !matches!(format, "json" | "csv") {
        return Err(UsageError(format!("unknown format `{format}` (json or csv)")).into());
    }
    let mut report = evaluate_pairs(
        required(&a.pred, "pred")?,
        required(&a.gt, "gt")?,
        &SsimParams::default(),
        g.jobs,
    )?;
    if !a.runtime_ms.is_empty() {
        report = report.with_runtime(RuntimeStats::from_samples(&a.runtime_ms)?)?;
    }
    let text = match format {
        "csv" => report.to_csv()?,
        _ => report.to_json()? + "\n",
    };
    emit(a.out.as_deref(), &text)?;
    Ok(exit::OK)
}

pub fn score(a: &ScoreArgs) -> Result<i32> {
    let s = challenge_score(
        *required(&a.psnr, "psnr")?,
        *required(&a.runtime_ms, "runtime-ms")?,
        a.c.unwrap_or_else(default_score_constant),
    )?;
    println!("{s}");
    Ok(exit::OK)
}

fn source_manifest(
    root: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
    split: &Option<String>,
    search: usize,
) -> Result<PairManifest> {
    let split: Split = split.as_deref().unwrap_or("train").parse()?;
    match (root, manifest) {
        (Some(r), None) => Ok(scan_pairs_with(r, split, search)?),
        (None, Some(m)) => {
            let m = PairManifest::load(m)?;
            m.check_paths()?;
            Ok(m)
        }
        _ => Err(UsageError("give exactly one of --root or --manifest".into()).into()),
    }
}

pub fn align(a: &AlignArgs) -> Result<i32> {
    let search = a.search.unwrap_or(DEFAULT_SEARCH);
    let mut m = source_manifest(&a.root, &a.manifest, &a.split, search)?;
    m.search = search;
    let m = align_manifest(&m)?;
    emit(a.out.as_deref(), &(m.to_json()? + "\n"))?;
    Ok(exit::OK)
}

pub fn prep(a: &PrepArgs) -> Result<i32> {
    let opts = PrepOptions {
        search: a.search.unwrap_or(DEFAULT_SEARCH),
        target_height: a.height.unwrap_or(CANONICAL_HEIGHT),
        depth: depth(a.bits)?,
    };
    let out_dir = required(&a.out_dir, "out-dir")?;
    let m = source_manifest(&a.root, &a.manifest, &a.split, opts.search)?;
    let done = prep_manifest(&m, &opts, out_dir)?;
    let path = a
        .manifest_out
        .clone()
        .unwrap_or_else(|| out_dir.join("manifest.json"));
    done.save(&path)?;
    log::info!("prepared {} pairs into {}", done.len(), out_dir.display());
    Ok(exit::OK)
}

pub fn gradcheck(a: &GradcheckArgs, g: &Globals) -> Result<i32> {
    let d = GradcheckOptions::default();
    let terms = parse_terms(&a.terms)?;
    let corrupt = a
        .corrupt
        .as_deref()
        .map(str::parse::<LossTerm>)
        .transpose()?;
    let n = a.samples.unwrap_or(d.seeds.len()) as u64;
    let opts = GradcheckOptions {
        seeds: (g.seed..g.seed + n).collect(),
        size: a.size.unwrap_or(d.size),
        eps: a.eps.unwrap_or(d.eps),
        tolerance: a.tolerance.unwrap_or(d.tolerance),
        sweep: if a.sweep.is_empty() {
            d.sweep
        } else {
            a.sweep.clone()
        },
        corrupt,
    };
    let report = run_gradcheck(&terms, &opts)?;
    let text = match a.format.as_deref().unwrap_or("text") {
        "text" => report.to_string(),
        "json" => serde_json::to_string_pretty(&report)? + "\n",
        other => return Err(UsageError(format!("unknown format `{other}` (text or json)")).into()),
    };
    emit(a.out.as_deref(), &text)?;
    if report.passed {
        Ok(exit::OK)
    } else {
        let failing: Vec<&str> = report.failing().iter().map(|t| t.tag()).collect();
        eprintln!("gradient check failed for: {}", failing.join(", "));
        Ok(exit::GRADCHECK)
    }
}

pub fn bench(a: &BenchArgs, g: &Globals) -> Result<i32> {
    let spec = net_spec(&a.net)?;
    let w = weights_for(&a.weights, &spec, g.seed)?;
    if let Some(p) = &a.save_weights {
        save_weights(&w, p)?;
    }
    let stats = bench_forward(
        &spec,
        &w,
        a.size.unwrap_or(256),
        a.warmup.unwrap_or(2),
        a.iters.unwrap_or(10),
        g.seed,
    )?;
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&stats)? + "\n"),
    )?;
    Ok(exit::OK)
}

pub fn leaderboard(a: &LeaderboardArgs) -> Result<i32> {
    let format: LeaderboardFormat = a.format.as_deref().unwrap_or("markdown").parse()?;
    let rows = match &a.input {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_leaderboard_csv(f)?
        }
        None => table1_rows(),
    };
    emit(a.out.as_deref(), &emit_leaderboard(&rows, format)?)?;
    Ok(exit::OK)
}
