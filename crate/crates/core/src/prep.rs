//! Wide/shallow pair preprocessing: discovery, translation alignment,
//! overlap cropping and downscaling to a canonical height.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    crop_rect, load_image, resize_bilinear, save_image, to_grayscale, BitDepth, Image, Rect,
};

/// Alignment method recorded in every manifest.
pub const ALIGN_METHOD: &str = "translation-zncc";
pub const CANONICAL_HEIGHT: usize = 1024;
pub const DEFAULT_SEARCH: usize = 32;
/// Smallest overlap (per side, full resolution) an offset may leave.
pub const MIN_OVERLAP: usize = 16;
const COARSE_FACTOR: usize = 4;
const REFINE_RADIUS: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub wide: PathBuf,
    pub shallow: PathBuf,
    /// `(dy, dx)` such that `shallow(y, x) ≈ wide(y - dy, x - dx)`.
    pub offset: Option<(i64, i64)>,
    /// `(height, width)` after cropping and downscaling.
    pub final_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairManifest {
    pub method: String,
    pub split: Split,
    pub search: usize,
    pub entries: Vec<PairEntry>,
    #[serde(default)]
    pub unpaired: Vec<PathBuf>,
}

impl PairManifest {
    pub fn new(split: Split, search: usize) -> Self {
        Self {
            method: ALIGN_METHOD.to_string(),
            split,
            search,
            entries: Vec::new(),
            unpaired: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unique ids and offsets inside the search window.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, &Path> = BTreeMap::new();
        let s = self.search as i64;
        for e in &self.entries {
            if let Some(first) = seen.insert(&e.id, &e.wide) {
                return Err(Error::DuplicateId {
                    id: e.id.clone(),
                    first: first.to_path_buf(),
                    second: e.wide.clone(),
                });
            }
            if let Some((dy, dx)) = e.offset {
                if dy.abs() > s || dx.abs() > s {
                    return Err(Error::InvalidArgument(format!(
                        "offset ({dy}, {dx}) of `{}` is outside the search window ±{s}",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.wide, &e.shallow] {
                if !p.is_file() {
                    return Err(Error::NotFound(p.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Orders strings so that embedded digit runs compare numerically
/// (`2 < 10`), falling back to plain byte order.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, p), (true, q)) => {
                let (p, q) = (p.trim_start_matches('0'), q.trim_start_matches('0'));
                p.len().cmp(&q.len()).then_with(|| p.cmp(q))
            }
            ((_, p), (_, q)) => p.cmp(q),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

enum Role {
    Wide,
    Shallow,
}

fn classify(name: &str) -> Option<(String, Role)> {
    let (stem, ext) = name.rsplit_once('.')?;
    if !ext.eq_ignore_ascii_case("png") {
        return None;
    }
    let (id, role) = if let Some(id) = stem.strip_suffix("_wide") {
        (id, Role::Wide)
    } else {
        let id = stem.strip_suffix("_shallow")?;
        (id, Role::Shallow)
    };
    (!id.is_empty()).then(|| (id.to_string(), role))
}

/// Scans `root` for `<id>_wide.png` / `<id>_shallow.png` pairs.
///
/// Files that do not follow the naming scheme, and halves without a
/// partner, end up in [`PairManifest::unpaired`] with a logged warning.
pub fn scan_pairs(root: impl AsRef<Path>) -> Result<PairManifest> {
    scan_pairs_with(root, Split::Train, DEFAULT_SEARCH)
}

pub fn scan_pairs_with(
    root: impl AsRef<Path>,
    split: Split,
    search: usize,
) -> Result<PairManifest> {
    let root = root.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyDirectory(root.to_path_buf()));
    }
    files.sort();

    let mut halves: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    let mut unpaired = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let Some((id, role)) = classify(name) else {
            log::warn!(
                "ignoring {}: not named <id>_wide.png or <id>_shallow.png",
                path.display()
            );
            unpaired.push(path);
            continue;
        };
        let slot = halves.entry(id.clone()).or_default();
        let slot = match role {
            Role::Wide => &mut slot.0,
            Role::Shallow => &mut slot.1,
        };
        if let Some(first) = slot.take() {
            return Err(Error::DuplicateId {
                id,
                first,
                second: path,
            });
        }
        *slot = Some(path);
    }

    let mut m = PairManifest::new(split, search);
    for (id, pair) in halves {
        match pair {
            (Some(wide), Some(shallow)) => m.entries.push(PairEntry {
                id,
                wide,
                shallow,
                offset: None,
                final_size: None,
            }),
            (Some(p), None) | (None, Some(p)) => {
                log::warn!("no partner for {}", p.display());
                unpaired.push(p);
            }
            (None, None) => unreachable!(),
        }
    }
    m.entries.sort_by(|a, b| natural_cmp(&a.id, &b.id));
    unpaired.sort();
    m.unpaired = unpaired;
    Ok(m)
}

fn pool(img: &Image, f: usize) -> Image {
    let (h, w) = (img.height() / f, img.width() / f);
    let src = img.plane(0);
    let sw = img.width();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for r in y * f..(y + 1) * f {
                s += src[r * sw + x * f..r * sw + (x + 1) * f]
                    .iter()
                    .sum::<f64>();
            }
            out[y * w + x] = s / (f * f) as f64;
        }
    }
    Image::new(
        h.max(1),
        w.max(1),
        1,
        if h * w == 0 { vec![0.0] } else { out },
    )
    .expect("pooled raster")
}

/// Zero-normalised cross-correlation of the overlap `a(y, x)` vs
/// `b(y + dy, x + dx)`; `None` if the overlap is below `min` per side.
fn zncc(a: &Image, b: &Image, dy: i64, dx: i64, min: usize) -> Option<f64> {
    let (h, w) = (a.height() as i64, a.width() as i64);
    let (oh, ow) = (h - dy.abs(), w - dx.abs());
    if oh < min as i64 || ow < min as i64 {
        return None;
    }
    let (ay, ax) = ((-dy).max(0) as usize, (-dx).max(0) as usize);
    let (by, bx) = (dy.max(0) as usize, dx.max(0) as usize);
    let (oh, ow, w) = (oh as usize, ow as usize, w as usize);
    let (pa, pb) = (a.plane(0), b.plane(0));
    let row = |y0: usize, x0: usize, i: usize| (y0 + i) * w + x0;
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in 0..oh {
        let (ra, rb) = (row(ay, ax, i), row(by, bx, i));
        sa += pa[ra..ra + ow].iter().sum::<f64>();
        sb += pb[rb..rb + ow].iter().sum::<f64>();
    }
    let n = (oh * ow) as f64;
    let (ma, mb) = (sa / n, sb / n);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for i in 0..oh {
        let (ra, rb) = (row(ay, ax, i), row(by, bx, i));
        for (u, v) in pa[ra..ra + ow].iter().zip(&pb[rb..rb + ow]) {
            let (u, v) = (u - ma, v - mb);
            cab += u * v;
            caa += u * u;
            cbb += v * v;
        }
    }
    let denom = (caa * cbb).sqrt();
    Some(if denom > 1e-12 { cab / denom } else { 0.0 })
}

fn better(cand: (f64, i64, i64), best: (f64, i64, i64)) -> bool {
    let key = |(_, dy, dx): (f64, i64, i64)| (dy.abs() + dx.abs(), dy, dx);
    match cand.0.partial_cmp(&best.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => key(cand) < key(best),
        _ => false,
    }
}

fn best_offset(
    a: &Image,
    b: &Image,
    ys: (i64, i64),
    xs: (i64, i64),
    min: usize,
) -> Option<(i64, i64)> {
    let offsets: Vec<(i64, i64)> = (ys.0..=ys.1)
        .flat_map(|dy| (xs.0..=xs.1).map(move |dx| (dy, dx)))
        .collect();
    let scores: Vec<Option<f64>> = offsets
        .par_iter()
        .map(|&(dy, dx)| zncc(a, b, dy, dx, min))
        .collect();
    let mut best: Option<(f64, i64, i64)> = None;
    for (&(dy, dx), s) in offsets.iter().zip(scores) {
        if let Some(s) = s {
            let cand = (s, dy, dx);
            if best.is_none_or(|b| better(cand, b)) {
                best = Some(cand);
            }
        }
    }
    best.map(|(_, dy, dx)| (dy, dx))
}

/// Integer translation `(dy, dx)` with `b(y, x) ≈ a(y - dy, x - dx)`,
/// maximising ZNCC of the grayscale overlap within `[-search, search]²`.
///
/// The search runs on a 4x average-pooled copy first and is then refined
/// within ±2 pixels at full resolution. Offsets that leave less than
/// [`MIN_OVERLAP`] pixels per side are skipped.
pub fn estimate_translation(a: &Image, b: &Image, search: usize) -> Result<(i64, i64)> {
    if !a.same_size(b) {
        return Err(Error::shape(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let (ga, gb) = (to_grayscale(a), to_grayscale(b));
    let s = search as i64;
    let coarse_min = MIN_OVERLAP / COARSE_FACTOR;
    let coarse =
        if a.height() >= MIN_OVERLAP && a.width() >= MIN_OVERLAP && search > REFINE_RADIUS as usize
        {
            let (pa, pb) = (pool(&ga, COARSE_FACTOR), pool(&gb, COARSE_FACTOR));
            let cs = (search.div_ceil(COARSE_FACTOR)) as i64;
            best_offset(&pa, &pb, (-cs, cs), (-cs, cs), coarse_min)
        } else {
            None
        };
    let found = match coarse {
        Some((cy, cx)) => {
            let f = COARSE_FACTOR as i64;
            let span = |c: i64| {
                (
                    (c * f - REFINE_RADIUS).max(-s),
                    (c * f + REFINE_RADIUS).min(s),
                )
            };
            best_offset(&ga, &gb, span(cy), span(cx), MIN_OVERLAP)
        }
        None => best_offset(&ga, &gb, (-s, s), (-s, s), MIN_OVERLAP),
    };
    found.ok_or_else(|| {
        Error::AlignmentFailed(format!(
            "no offset within ±{search} leaves a {MIN_OVERLAP}x{MIN_OVERLAP} overlap on a {}x{} image",
            a.height(),
            a.width()
        ))
    })
}

/// Windows of `a` and `b` that see the same scene region under `offset`.
pub fn overlap_rects(height: usize, width: usize, offset: (i64, i64)) -> Result<(Rect, Rect)> {
    let (dy, dx) = offset;
    if dy.unsigned_abs() as usize >= height || dx.unsigned_abs() as usize >= width {
        return Err(Error::ImageTooSmall {
            height,
            width,
            detail: format!("offset ({dy}, {dx}) leaves no overlap"),
        });
    }
    let (oh, ow) = (
        height - dy.unsigned_abs() as usize,
        width - dx.unsigned_abs() as usize,
    );
    let a = Rect::new((-dy).max(0) as usize, (-dx).max(0) as usize, oh, ow);
    let b = Rect::new(dy.max(0) as usize, dx.max(0) as usize, oh, ow);
    Ok((a, b))
}

/// Crops both images to their common region under `offset`.
pub fn crop_to_overlap(a: &Image, b: &Image, offset: (i64, i64)) -> Result<(Image, Image)> {
    if !a.same_size(b) {
        return Err(Error::shape(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    let (ra, rb) = overlap_rects(a.height(), a.width(), offset)?;
    Ok((crop_rect(a, &ra)?, crop_rect(b, &rb)?))
}

/// Bilinear resize to `target_h` rows, width scaled to keep the aspect ratio.
pub fn downscale_to_height(img: &Image, target_h: usize) -> Result<Image> {
    if target_h == 0 {
        return Err(Error::InvalidArgument("target height must be >= 1".into()));
    }
    if img.height() == target_h {
        return Ok(img.clone());
    }
    let w = ((img.width() * target_h) as f64 / img.height() as f64)
        .round()
        .max(1.0) as usize;
    resize_bilinear(img, target_h, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepOptions {
    pub search: usize,
    pub target_height: usize,
    pub depth: BitDepth,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            search: DEFAULT_SEARCH,
            target_height: CANONICAL_HEIGHT,
            depth: BitDepth::Eight,
        }
    }
}

/// Aligns, crops and downscales one pair in memory.
pub fn prepare_pair(
    wide: &Image,
    shallow: &Image,
    opts: &PrepOptions,
) -> Result<((i64, i64), Image, Image)> {
    let offset = estimate_translation(wide, shallow, opts.search)?;
    let (a, b) = crop_to_overlap(wide, shallow, offset)?;
    Ok((
        offset,
        downscale_to_height(&a, opts.target_height)?,
        downscale_to_height(&b, opts.target_height)?,
    ))
}

/// Fills in the offset of every entry.
pub fn align_manifest(m: &PairManifest) -> Result<PairManifest> {
    let entries = m
        .entries
        .par_iter()
        .map(|e| {
            let offset =
                estimate_translation(&load_image(&e.wide)?, &load_image(&e.shallow)?, m.search)?;
            Ok(PairEntry {
                offset: Some(offset),
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairManifest {
        entries,
        ..m.clone()
    })
}

/// Runs the full pipeline over a manifest, writing `<id>_wide.png` and
/// `<id>_shallow.png` into `out_dir`. Entries that already carry an offset
/// reuse it instead of searching. The returned manifest points at the
/// written files.
pub fn prep_manifest(
    m: &PairManifest,
    opts: &PrepOptions,
    out_dir: impl AsRef<Path>,
) -> Result<PairManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = m
        .entries
        .par_iter()
        .map(|e| {
            let (wide, shallow) = (load_image(&e.wide)?, load_image(&e.shallow)?);
            let offset = match e.offset {
                Some(o) => o,
                None => estimate_translation(&wide, &shallow, opts.search)?,
            };
            let (a, b) = crop_to_overlap(&wide, &shallow, offset)?;
            let (a, b) = (
                downscale_to_height(&a, opts.target_height)?,
                downscale_to_height(&b, opts.target_height)?,
            );
            let wide_out = out_dir.join(format!("{}_wide.png", e.id));
            let shallow_out = out_dir.join(format!("{}_shallow.png", e.id));
            save_image(&a, &wide_out, opts.depth)?;
            save_image(&b, &shallow_out, opts.depth)?;
            Ok(PairEntry {
                id: e.id.clone(),
                wide: wide_out,
                shallow: shallow_out,
                offset: Some(offset),
                final_size: Some((a.height(), a.width())),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairManifest {
        entries,
        search: opts.search.max(m.search),
        ..m.clone()
    })
}
