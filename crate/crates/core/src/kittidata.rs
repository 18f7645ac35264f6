//! KITTI-raw ingestion.
//!
//! Layout: `<root>/<date>/<drive>/image_0{2,3}/data/<frame:010>.png` with
//! `<root>/<date>/calib_cam_to_cam.txt`. Split files hold one
//! `<date>/<drive> <frame> [l|r]` entry per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::camgeom::{DepthMap, Intrinsics, PoseSE3};
use crate::error::{invalid, Error, Result};

/// Mean absolute inter-frame difference below which a frame counts as static.
pub const STATIC_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceRole {
    Prev,
    Next,
    Stereo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn camera_dir(self) -> &'static str {
        match self {
            Side::Left => "image_02",
            Side::Right => "image_03",
        }
    }

    fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    fn letter(self) -> char {
        match self {
            Side::Left => 'l',
            Side::Right => 'r',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId {
    /// `<date>/<drive>` relative to the dataset root.
    pub folder: String,
    pub frame: u32,
    pub side: Side,
}

impl FrameId {
    pub fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let folder = parts.next().ok_or_else(|| invalid(format!("empty split line {line:?}")))?;
        let frame = parts
            .next()
            .ok_or_else(|| invalid(format!("split line {line:?} has no frame index")))?
            .parse()
            .map_err(|e| invalid(format!("bad frame index in {line:?}: {e}")))?;
        let side = match parts.next() {
            None | Some("l") => Side::Left,
            Some("r") => Side::Right,
            Some(s) => return Err(invalid(format!("unknown side {s:?} in {line:?}"))),
        };
        Ok(Self {
            folder: folder.trim_end_matches('/').to_string(),
            frame,
            side,
        })
    }

    pub fn with_frame(&self, frame: u32) -> Self {
        Self { frame, ..self.clone() }
    }

    pub fn image_path(&self, root: &Path) -> PathBuf {
        root.join(&self.folder)
            .join(self.side.camera_dir())
            .join("data")
            .join(format!("{:010}.png", self.frame))
    }

    pub fn calib_path(&self, root: &Path) -> PathBuf {
        let date = Path::new(&self.folder).parent().unwrap_or(Path::new(""));
        root.join(date).join("calib_cam_to_cam.txt")
    }

    /// Flat file stem used for per-frame artifacts such as ground truth.
    pub fn file_stem(&self) -> String {
        format!("{}_{:010}_{}", self.folder.replace('/', "_"), self.frame, self.side.letter())
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.folder, self.frame, self.side.letter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub role: SplitRole,
    pub entries: Vec<FrameId>,
    /// Entries dropped because the camera did not move.
    pub static_filtered: Vec<FrameId>,
}

impl SplitIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn overlaps(&self, other: &SplitIndex) -> bool {
        let ids: std::collections::HashSet<_> = self.entries.iter().collect();
        other.entries.iter().any(|e| ids.contains(e))
    }
}

/// Rectified projection matrices of the two colour cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoCalib {
    pub p_left: [[f64; 4]; 3],
    pub p_right: [[f64; 4]; 3],
}

impl StereoCalib {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut mats = BTreeMap::new();
        for line in text.lines() {
            let Some((key, rest)) = line.split_once(':') else { continue };
            let key = key.trim();
            if key == "P_rect_02" || key == "P_rect_03" {
                let vals: Vec<f64> = rest
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Decode {
                        path: path.to_path_buf(),
                        reason: format!("{key}: {e}"),
                    })?;
                if vals.len() != 12 {
                    return Err(Error::Decode {
                        path: path.to_path_buf(),
                        reason: format!("{key} has {} values", vals.len()),
                    });
                }
                let m: [[f64; 4]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| vals[r * 4 + c]));
                mats.insert(key.to_string(), m);
            }
        }
        let get = |k: &str| {
            mats.get(k).copied().ok_or_else(|| Error::Decode {
                path: path.to_path_buf(),
                reason: format!("missing {k}"),
            })
        };
        Ok(Self {
            p_left: get("P_rect_02")?,
            p_right: get("P_rect_03")?,
        })
    }

    pub fn intrinsics(&self, side: Side, width: usize, height: usize) -> Result<Intrinsics> {
        let p = match side {
            Side::Left => &self.p_left,
            Side::Right => &self.p_right,
        };
        Intrinsics::new(p[0][0], p[1][1], p[0][2], p[1][2], width, height)
    }

    /// Transform from the `side` camera to the opposite camera.
    pub fn stereo_pose(&self, side: Side) -> PoseSE3 {
        let fx = self.p_left[0][0];
        let right_minus_left = (self.p_right[0][3] - self.p_left[0][3]) / fx;
        let tx = match side {
            Side::Left => right_minus_left,
            Side::Right => -right_minus_left,
        };
        PoseSE3::new([0.0; 3], [tx, 0.0, 0.0])
    }
}

/// Images the network sees after photometric jitter.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    pub target: Tensor,
    pub sources: Vec<(SourceRole, Tensor)>,
}

/// One training or evaluation example. `target` and `sources` hold the
/// unjittered colours the loss compares against.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub id: String,
    pub target: Tensor,
    pub sources: Vec<(SourceRole, Tensor)>,
    pub augmented: Option<AugmentedView>,
    /// One entry per pyramid scale; entry 0 is full resolution.
    pub intrinsics: Vec<Intrinsics>,
    pub stereo_pose: Option<PoseSE3>,
    pub gt_depth: Option<DepthMap>,
    /// Ground-truth target-to-source transforms when known.
    pub gt_poses: Vec<(SourceRole, PoseSE3)>,
}

impl FrameSample {
    pub fn height(&self) -> usize {
        self.target.dim(1)
    }

    pub fn width(&self) -> usize {
        self.target.dim(2)
    }

    pub fn source(&self, role: SourceRole) -> Option<&Tensor> {
        self.sources.iter().find(|(r, _)| *r == role).map(|(_, t)| t)
    }

    pub fn network_target(&self) -> &Tensor {
        self.augmented.as_ref().map_or(&self.target, |a| &a.target)
    }

    pub fn network_source(&self, role: SourceRole) -> Option<&Tensor> {
        match &self.augmented {
            Some(a) => a.sources.iter().find(|(r, _)| *r == role).map(|(_, t)| t),
            None => self.source(role),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.target.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(invalid(format!("target must be 3×H×W, got {shape:?}")));
        }
        for (role, s) in &self.sources {
            if s.shape() != shape {
                return Err(invalid(format!("{role:?} source shape {:?} vs {shape:?}", s.shape())));
            }
        }
        let k = self.intrinsics.first().ok_or_else(|| invalid("sample has no intrinsics"))?;
        if k.width != shape[2] || k.height != shape[1] {
            return Err(invalid("intrinsics disagree with image size"));
        }
        Ok(())
    }
}

/// Intrinsics for `num_scales` pyramid levels starting at `base`.
pub fn pyramid_intrinsics(base: &Intrinsics, num_scales: usize) -> Vec<Intrinsics> {
    (0..num_scales as u32).map(|l| base.scaled(l)).collect()
}

/// Decodes an 8- or 16-bit PNG into a `3×H×W` tensor in `[0, 1]`,
/// optionally resized.
pub fn load_image(path: &Path, size: Option<(usize, usize)>) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb32f();
    let img = match size {
        Some((h, w)) if (h as u32, w as u32) != (img.height(), img.width()) => {
            image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
        }
        _ => img,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(vec![3, h, w], |k| {
        let (c, rest) = (k / (h * w), k % (h * w));
        f64::from(img.get_pixel((rest % w) as u32, (rest / w) as u32)[c])
    }))
}

pub fn rgb_to_tensor(img: &image::RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(vec![3, h, w], |k| {
        let (c, p) = (k / (h * w), k % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    })
}

pub fn tensor_to_rgb(t: &Tensor) -> image::RgbImage {
    let (h, w) = (t.dim(1), t.dim(2));
    let d = t.data();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

fn image_size(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((h as usize, w as usize))
}

pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64
}

fn drive_frames(root: &Path, folder: &str, side: Side) -> Result<Vec<u32>> {
    let dir = root.join(folder).join(side.camera_dir()).join("data");
    let mut frames = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|_| Error::MissingFile(dir.clone()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(f) = stem.parse() {
                frames.push(f);
            }
        }
    }
    frames.sort_unstable();
    Ok(frames)
}

/// Every `<date>/<drive>` folder below `root`, sorted.
fn drive_folders(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for date in fs::read_dir(root)? {
        let date = date?;
        if !date.file_type()?.is_dir() {
            continue;
        }
        for drive in fs::read_dir(date.path())? {
            let drive = drive?;
            if drive.path().join(Side::Left.camera_dir()).is_dir() {
                out.push(format!(
                    "{}/{}",
                    date.file_name().to_string_lossy(),
                    drive.file_name().to_string_lossy()
                ));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Builds a split. With `split_file`, its entries are the candidates;
/// otherwise every left-camera frame under `root` is. Training and
/// validation splits keep only frames whose neighbours exist and whose
/// camera moved; the test split keeps every candidate present on disk.
pub fn index_sequences(root: &Path, split_file: Option<&Path>, role: SplitRole) -> Result<SplitIndex> {
    let candidates: Vec<FrameId> = match split_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(FrameId::parse)
                .collect::<Result<_>>()?
        }
        None => {
            let mut all = Vec::new();
            for folder in drive_folders(root)? {
                for f in drive_frames(root, &folder, Side::Left)? {
                    all.push(FrameId { folder: folder.clone(), frame: f, side: Side::Left });
                }
            }
            all
        }
    };

    let mut checked_calib = std::collections::HashSet::new();
    let mut entries = Vec::new();
    let mut static_filtered = Vec::new();
    for id in candidates {
        let calib = id.calib_path(root);
        if checked_calib.insert(calib.clone()) && !calib.is_file() {
            return Err(Error::MissingFile(calib));
        }
        if !id.image_path(root).is_file() {
            continue;
        }
        if role == SplitRole::Test {
            entries.push(id);
            continue;
        }
        if id.frame == 0 {
            continue;
        }
        let prev = id.with_frame(id.frame - 1);
        let next = id.with_frame(id.frame + 1);
        if !prev.image_path(root).is_file() || !next.image_path(root).is_file() {
            continue;
        }
        let t = load_image(&id.image_path(root), None)?;
        let moved = [prev, next].iter().all(|n| {
            load_image(&n.image_path(root), None)
                .map(|s| mean_abs_diff(&t, &s) >= STATIC_THRESHOLD)
                .unwrap_or(false)
        });
        if moved {
            entries.push(id);
        } else {
            static_filtered.push(id);
        }
    }
    Ok(SplitIndex { role, entries, static_filtered })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Output `(height, width)`.
    pub resolution: (usize, usize),
    pub roles: Vec<SourceRole>,
    pub num_scales: usize,
    /// Evaluation duplicates a missing previous frame instead of failing.
    pub evaluation: bool,
}

pub fn load_sample(root: &Path, id: &FrameId, opts: &LoadOptions) -> Result<FrameSample> {
    let (h, w) = opts.resolution;
    let target_path = id.image_path(root);
    let (native_h, native_w) = image_size(&target_path)?;
    let calib = StereoCalib::load(&id.calib_path(root))?;
    let base = calib.intrinsics(id.side, native_w, native_h)?.resized(w, h);
    let target = load_image(&target_path, Some((h, w)))?;

    let mut sources = Vec::new();
    let mut stereo_pose = None;
    for &role in &opts.roles {
        let img = match role {
            SourceRole::Prev | SourceRole::Next => {
                let frame = match role {
                    SourceRole::Prev => id.frame.checked_sub(1),
                    _ => Some(id.frame + 1),
                };
                let path = frame.map(|f| id.with_frame(f).image_path(root));
                match path {
                    Some(p) if p.is_file() => load_image(&p, Some((h, w)))?,
                    _ if opts.evaluation => target.clone(),
                    _ => return Err(invalid(format!("{id} has no {role:?} frame"))),
                }
            }
            SourceRole::Stereo => {
                let other = FrameId { side: id.side.other(), ..id.clone() };
                stereo_pose = Some(calib.stereo_pose(id.side));
                load_image(&other.image_path(root), Some((h, w)))?
            }
        };
        sources.push((role, img));
    }

    Ok(FrameSample {
        id: id.to_string(),
        target,
        sources,
        augmented: None,
        intrinsics: pyramid_intrinsics(&base, opts.num_scales),
        stereo_pose,
        gt_depth: None,
        gt_poses: Vec::new(),
    })
}

/// Loads a split, skipping unreadable training frames with a warning.
pub fn load_split(root: &Path, index: &SplitIndex, opts: &LoadOptions) -> Result<Vec<FrameSample>> {
    let mut out = Vec::with_capacity(index.len());
    for id in &index.entries {
        match load_sample(root, id, opts) {
            Ok(s) => out.push(s),
            Err(e) if !opts.evaluation => warn!("skipping {id}: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Per-channel gain jitter.
    pub color: f64,
    pub flip_probability: f64,
    /// Upper bound of the random zoom factor applied before cropping back.
    pub max_zoom: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            color: 0.05,
            flip_probability: 0.5,
            max_zoom: 1.15,
        }
    }
}

/// FNV-1a, used to derive per-sample augmentation streams.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn flip_image(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.dim(0), t.dim(1), t.dim(2));
    let d = t.data();
    Tensor::from_fn(vec![c, h, w], |k| {
        let j = k % w;
        d[k - j + (w - 1 - j)]
    })
}

/// Mirrors every image left to right and adjusts intrinsics, stereo pose,
/// ground truth and known poses to match.
pub fn hflip(sample: &FrameSample) -> FrameSample {
    let mut out = sample.clone();
    out.target = flip_image(&sample.target);
    for (_, s) in &mut out.sources {
        *s = flip_image(s);
    }
    if let Some(a) = &mut out.augmented {
        a.target = flip_image(&a.target);
        for (_, s) in &mut a.sources {
            *s = flip_image(s);
        }
    }
    for k in &mut out.intrinsics {
        k.cx = (k.width - 1) as f64 - k.cx;
    }
    let mirror = |p: &PoseSE3| PoseSE3::new([p.rotation.x, -p.rotation.y, -p.rotation.z], [
        -p.translation.x,
        p.translation.y,
        p.translation.z,
    ]);
    out.stereo_pose = sample.stereo_pose.as_ref().map(mirror);
    for (_, p) in &mut out.gt_poses {
        *p = mirror(p);
    }
    if let Some(d) = &sample.gt_depth {
        let (h, w) = (d.height(), d.width());
        let vals = (0..h * w).map(|k| d.values()[k - k % w + (w - 1 - k % w)]).collect();
        out.gt_depth = DepthMap::sparse(h, w, vals).ok();
    }
    out
}

fn zoom_crop(t: &Tensor, zoom: f64, ox: f64, oy: f64) -> Tensor {
    let (c, h, w) = (t.dim(0), t.dim(1), t.dim(2));
    let d = t.data();
    Tensor::from_fn(vec![c, h, w], |k| {
        let ch = k / (h * w);
        let (i, j) = ((k % (h * w)) / w, k % w);
        let x = ((j as f64 + ox) / zoom).clamp(0.0, (w - 1) as f64);
        let y = ((i as f64 + oy) / zoom).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (ax, ay) = (x - x0 as f64, y - y0 as f64);
        let at = |yy: usize, xx: usize| d[ch * h * w + yy * w + xx];
        (at(y0, x0) * (1.0 - ax) + at(y0, x1) * ax) * (1.0 - ay) + (at(y1, x0) * (1.0 - ax) + at(y1, x1) * ax) * ay
    })
}

struct Jitter {
    brightness: f64,
    contrast: f64,
    saturation: f64,
    gains: [f64; 3],
}

impl Jitter {
    fn apply(&self, t: &Tensor) -> Tensor {
        let (h, w) = (t.dim(1), t.dim(2));
        let n = h * w;
        let d = t.data();
        let mut out = t.clone();
        let od = out.data_mut();
        let mean = d.iter().sum::<f64>() / d.len() as f64 * self.brightness;
        for p in 0..n {
            let rgb: [f64; 3] = std::array::from_fn(|c| d[c * n + p] * self.brightness);
            let rgb: [f64; 3] = std::array::from_fn(|c| (rgb[c] - mean) * self.contrast + mean);
            let grey = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for c in 0..3 {
                let v = (grey + (rgb[c] - grey) * self.saturation) * self.gains[c];
                od[c * n + p] = v.clamp(0.0, 1.0);
            }
        }
        out
    }
}

/// Training augmentation. Geometry changes (zoom-crop and flip) apply to
/// both the loss images and the network images; photometric jitter applies
/// only to the network images, identically across target and sources.
pub fn augment(sample: &FrameSample, cfg: &AugmentConfig, seed: u64) -> FrameSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(sample.id.as_bytes()));
    let mut uniform = |spread: f64| if spread > 0.0 { rng.random_range(1.0 - spread..=1.0 + spread) } else { 1.0 };
    let jitter = Jitter {
        brightness: uniform(cfg.brightness),
        contrast: uniform(cfg.contrast),
        saturation: uniform(cfg.saturation),
        gains: [uniform(cfg.color), uniform(cfg.color), uniform(cfg.color)],
    };
    let zoom = if cfg.max_zoom > 1.0 { rng.random_range(1.0..=cfg.max_zoom) } else { 1.0 };
    let (h, w) = (sample.height(), sample.width());
    let ox = rng.random_range(0.0..=(zoom - 1.0) * w as f64);
    let oy = rng.random_range(0.0..=(zoom - 1.0) * h as f64);
    let flip = rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0));

    let mut out = sample.clone();
    if zoom > 1.0 {
        out.target = zoom_crop(&sample.target, zoom, ox, oy);
        for (_, s) in &mut out.sources {
            *s = zoom_crop(s, zoom, ox, oy);
        }
        let base = sample.intrinsics[0];
        let zoomed = Intrinsics {
            fx: base.fx * zoom,
            fy: base.fy * zoom,
            cx: (base.cx * zoom - ox).clamp(0.0, (w - 1) as f64),
            cy: (base.cy * zoom - oy).clamp(0.0, (h - 1) as f64),
            ..base
        };
        out.intrinsics = pyramid_intrinsics(&zoomed, sample.intrinsics.len());
        out.gt_depth = None;
    }
    out.augmented = Some(AugmentedView {
        target: jitter.apply(&out.target),
        sources: out.sources.iter().map(|(r, s)| (*r, jitter.apply(s))).collect(),
    });
    if flip {
        out = hflip(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FrameSample {
        let k = Intrinsics::new(50.0, 50.0, 20.5, 11.0, 40, 24).unwrap();
        let img = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            Tensor::from_fn(vec![3, 24, 40], |_| rng.random_range(0.0..1.0))
        };
        FrameSample {
            id: "x 1 l".into(),
            target: img(1),
            sources: vec![(SourceRole::Prev, img(2)), (SourceRole::Next, img(3))],
            augmented: None,
            intrinsics: pyramid_intrinsics(&k, 4),
            stereo_pose: None,
            gt_depth: None,
            gt_poses: vec![],
        }
    }

    #[test]
    fn flip_is_an_involution_and_mirrors_cx() {
        let s = sample();
        let f = hflip(&s);
        assert_eq!(f.intrinsics[0].cx, 39.0 - 20.5);
        assert_eq!(hflip(&f), s);
    }

    #[test]
    fn augmentation_is_seeded_and_bounded() {
        let s = sample();
        let cfg = AugmentConfig::default();
        let a = augment(&s, &cfg, 7);
        assert_eq!(a, augment(&s, &cfg, 7));
        let view = a.augmented.as_ref().unwrap();
        assert_eq!(view.target.shape(), s.target.shape());
        assert!(view.target.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.target.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn split_line_parsing() {
        let id = FrameId::parse("2011_09_26/2011_09_26_drive_0002_sync 69 r").unwrap();
        assert_eq!(id.frame, 69);
        assert_eq!(id.side, Side::Right);
        assert_eq!(id.file_stem(), "2011_09_26_2011_09_26_drive_0002_sync_0000000069_r");
        assert!(FrameId::parse("folder x").is_err());
    }
}
