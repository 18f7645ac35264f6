//! Procedural scenes of textured fronto-parallel planes with exact ground
//! truth, a per-pixel reprojection reference, and the on-disk format for
//! rendered pairs and raw depth arrays.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Matrix4, Translation3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::camgeom::{DepthMap, Intrinsics, PoseSE3};
use crate::error::{invalid, Error, Result};
use crate::kittidata::{load_image, pyramid_intrinsics, FrameSample, SourceRole};

pub const DEPTH_MAGIC: [u8; 4] = *b"DPTH";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// Distance along the target camera's optical axis.
    pub depth: f64,
    /// `[x_min, x_max, y_min, y_max]` in target-camera coordinates on the
    /// plane; `None` makes the plane unbounded.
    #[serde(default)]
    pub extent: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingPatch {
    pub plane: Plane,
    /// Displacement of the patch between the target and source instants,
    /// in target-camera coordinates.
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub planes: Vec<Plane>,
    /// Target-to-source transform.
    pub camera_motion: PoseSE3,
    #[serde(default)]
    pub moving_object: Option<MovingPatch>,
    pub texture_seed: u64,
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        if !self.planes.iter().any(|p| p.extent.is_none()) {
            return Err(invalid("scene needs an unbounded background plane"));
        }
        let mut depths: Vec<f64> = self.planes.iter().map(|p| p.depth).collect();
        if let Some(m) = &self.moving_object {
            depths.push(m.plane.depth);
            if m.plane.depth + m.translation[2] <= 0.0 {
                return Err(invalid("moving patch passes behind the camera"));
            }
        }
        if depths.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid("plane depths must be positive"));
        }
        depths.sort_by(f64::total_cmp);
        if depths.windows(2).any(|w| w[1] - w[0] < 1e-9) {
            return Err(invalid("planes at equal depth overlap ambiguously"));
        }
        if let Some(m) = &self.moving_object {
            let (lo, hi) = (m.plane.depth.min(m.plane.depth + m.translation[2]), m.plane.depth.max(m.plane.depth + m.translation[2]));
            if self.planes.iter().any(|p| p.depth >= lo && p.depth <= hi) {
                return Err(invalid("moving patch crosses a static plane"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Wave {
    freq: [f64; 2],
    phase: f64,
    amplitude: [f64; 3],
}

/// Band-limited colour texture: a base colour plus a few sinusoids.
#[derive(Clone, Debug, PartialEq)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    /// Image-space wavelengths fall between 9 and 22 pixels when the plane
    /// is seen from the target camera at `depth`.
    fn random(rng: &mut ChaCha8Rng, depth: f64, focal: f64) -> Self {
        let base = std::array::from_fn(|_| rng.random_range(0.35..0.65));
        let waves = (0..4)
            .map(|_| {
                let wavelength_px = rng.random_range(9.0..22.0);
                let k = std::f64::consts::TAU * focal / (wavelength_px * depth);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Wave {
                    freq: [k * angle.cos(), k * angle.sin()],
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: std::array::from_fn(|_| rng.random_range(0.03..0.1)),
                }
            })
            .collect();
        Self { base, waves }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (w.freq[0] * x + w.freq[1] * y + w.phase).sin();
            for (ch, a) in c.iter_mut().zip(w.amplitude) {
                *ch += a * s;
            }
        }
        c
    }
}

struct Surface<'a> {
    depth: f64,
    extent: Option<[f64; 4]>,
    offset: [f64; 3],
    texture: &'a Texture,
    moving: bool,
}

struct Hit {
    /// Depth along the viewing camera's optical axis.
    z: f64,
    color: [f64; 3],
    surface: usize,
    moving: bool,
}

struct Scene {
    spec: SceneSpec,
    k: Intrinsics,
    textures: Vec<Texture>,
}

impl Scene {
    fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
        let mut textures: Vec<Texture> = spec.planes.iter().map(|p| Texture::random(&mut rng, p.depth, spec.fx)).collect();
        if let Some(m) = &spec.moving_object {
            textures.push(Texture::random(&mut rng, m.plane.depth, spec.fx));
        }
        Ok(Self { spec: spec.clone(), k: spec.intrinsics()?, textures })
    }

    /// Surfaces as they are at the source instant (`moved`) or the target one.
    fn surfaces(&self, moved: bool) -> Vec<Surface<'_>> {
        let mut out: Vec<Surface> = self
            .spec
            .planes
            .iter()
            .zip(&self.textures)
            .map(|(p, t)| Surface { depth: p.depth, extent: p.extent, offset: [0.0; 3], texture: t, moving: false })
            .collect();
        if let Some(m) = &self.spec.moving_object {
            out.push(Surface {
                depth: m.plane.depth,
                extent: m.plane.extent,
                offset: if moved { m.translation } else { [0.0; 3] },
                texture: self.textures.last().expect("patch texture"),
                moving: true,
            });
        }
        out
    }

    /// Casts the ray through continuous pixel `(x, y)` of a camera whose
    /// target-to-camera transform is `pose`.
    fn cast(&self, surfaces: &[Surface<'_>], pose: &PoseSE3, x: f64, y: f64) -> Option<Hit> {
        let rt = pose.rotation_matrix().transpose();
        let origin = -(rt * pose.translation);
        let ray = Vector3::new((x - self.k.cx) / self.k.fx, (y - self.k.cy) / self.k.fy, 1.0);
        let dir = rt * ray;
        let mut best: Option<Hit> = None;
        for (idx, s) in surfaces.iter().enumerate() {
            let plane_z = s.depth + s.offset[2];
            if dir.z.abs() < 1e-15 {
                continue;
            }
            let lambda = (plane_z - origin.z) / dir.z;
            if lambda <= 0.0 || best.as_ref().is_some_and(|b| b.z <= lambda) {
                continue;
            }
            let px = origin.x + lambda * dir.x - s.offset[0];
            let py = origin.y + lambda * dir.y - s.offset[1];
            if let Some([x0, x1, y0, y1]) = s.extent {
                if !(px >= x0 && px <= x1 && py >= y0 && py <= y1) {
                    continue;
                }
            }
            best = Some(Hit { z: lambda, color: s.texture.color(px, py), surface: idx, moving: s.moving });
        }
        best
    }

    fn render(&self, pose: &PoseSE3, moved: bool) -> Result<(Tensor, Vec<Hit>)> {
        let (h, w) = (self.k.height, self.k.width);
        let surfaces = self.surfaces(moved);
        let mut img = Tensor::zeros(vec![3, h, w]);
        let mut hits = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let hit = self
                    .cast(&surfaces, pose, j as f64, i as f64)
                    .ok_or_else(|| invalid(format!("pixel ({i}, {j}) sees no surface")))?;
                for c in 0..3 {
                    img.data_mut()[(c * h + i) * w + j] = hit.color[c];
                }
                hits.push(hit);
            }
        }
        Ok((img, hits))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub target: Tensor,
    pub source: Tensor,
    pub depth: DepthMap,
    pub pose: PoseSE3,
    pub intrinsics: Intrinsics,
    /// Pixels where the moving patch is visible in either frame.
    pub motion_mask: Vec<bool>,
    /// Target pixels whose static reprojection lands inside the source
    /// frame with all four bilinear taps on the same surface.
    pub warp_consistent: Vec<bool>,
}

pub fn render_pair(spec: &SceneSpec) -> Result<RenderedPair> {
    let scene = Scene::new(spec)?;
    let k = scene.k;
    let (h, w) = (k.height, k.width);
    let (target, t_hits) = scene.render(&PoseSE3::identity(), false)?;
    let (source, s_hits) = scene.render(&spec.camera_motion, true)?;
    let depth = DepthMap::new(h, w, t_hits.iter().map(|h| h.z).collect())?;

    let static_surfaces = scene.surfaces(false);
    let mut motion_mask = vec![false; h * w];
    let mut warp_consistent = vec![false; h * w];
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let hit = &t_hits[p];
            motion_mask[p] = hit.moving || s_hits[p].moving;
            let Some((x, y)) = brute_force_reproject((i, j), hit.z, &k, &spec.camera_motion) else {
                continue;
            };
            let inside = crate::camgeom::within_frame(x, y, w, h);
            let (x0, y0) = (x.clamp(0.0, (w - 1) as f64).floor() as usize, y.clamp(0.0, (h - 1) as f64).floor() as usize);
            let taps = [(y0, x0), (y0, (x0 + 1).min(w - 1)), ((y0 + 1).min(h - 1), x0), ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1))];
            let patch_in_source = taps.iter().any(|&(a, b)| s_hits[a * w + b].moving);
            if inside && !motion_mask[p] && !patch_in_source {
                warp_consistent[p] = taps.iter().all(|&(a, b)| {
                    scene
                        .cast(&static_surfaces, &spec.camera_motion, b as f64, a as f64)
                        .is_some_and(|s| s.surface == hit.surface)
                });
            }
        }
    }
    Ok(RenderedPair {
        target,
        source,
        depth,
        pose: spec.camera_motion,
        intrinsics: k,
        motion_mask,
        warp_consistent,
    })
}

/// Renders `spec` from the camera at `pose` (target-to-camera) with the
/// scene frozen at the target instant.
pub fn render_view(spec: &SceneSpec, pose: &PoseSE3) -> Result<Tensor> {
    let scene = Scene::new(spec)?;
    Ok(scene.render(pose, false)?.0)
}

/// Reference reprojection of one pixel using explicit homogeneous 4×4
/// matrices. Returns `None` when the point lands behind the source camera.
pub fn brute_force_reproject(pixel: (usize, usize), depth: f64, k: &Intrinsics, pose: &PoseSE3) -> Option<(f64, f64)> {
    let (i, j) = pixel;
    #[rustfmt::skip]
    let k4 = Matrix4::new(
        k.fx, 0.0, k.cx, 0.0,
        0.0, k.fy, k.cy, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let k4_inv = k4.try_inverse()?;
    let iso = Isometry3::from_parts(
        Translation3::from(pose.translation),
        UnitQuaternion::from_scaled_axis(pose.rotation),
    );
    let t4 = iso.to_homogeneous();
    let homog = Vector4::new(j as f64 * depth, i as f64 * depth, depth, 1.0);
    let q = k4 * (t4 * (k4_inv * homog));
    if q.z <= 0.0 {
        return None;
    }
    Some((q.x / q.z, q.y / q.z))
}

/// Parameters for drawing random scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenerator {
    pub width: usize,
    pub height: usize,
    /// Focal length as a fraction of the image width.
    pub focal_ratio: f64,
    pub background_depth: (f64, f64),
    pub foreground_planes: usize,
    pub foreground_depth: (f64, f64),
    /// Mean camera translation per frame; each scene perturbs it.
    pub translation: [f64; 3],
    pub translation_jitter: f64,
    pub max_rotation: f64,
    pub moving_object: bool,
}

impl Default for SceneGenerator {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            focal_ratio: 0.8,
            background_depth: (6.0, 9.0),
            foreground_planes: 2,
            foreground_depth: (2.0, 4.0),
            translation: [0.25, 0.0, 0.25],
            translation_jitter: 0.1,
            max_rotation: 0.01,
            moving_object: false,
        }
    }
}

impl SceneGenerator {
    pub fn scene(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = self.focal_ratio * self.width as f64;
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let mut planes = vec![Plane {
            depth: rng.random_range(self.background_depth.0..self.background_depth.1),
            extent: None,
        }];
        let half_w = 0.5 * self.width as f64 / f;
        let half_h = 0.5 * self.height as f64 / f;
        for _ in 0..self.foreground_planes {
            let depth = rng.random_range(self.foreground_depth.0..self.foreground_depth.1);
            let (sx, sy) = (half_w * depth, half_h * depth);
            let wx = rng.random_range(0.4..0.9) * sx;
            let wy = rng.random_range(0.4..0.9) * sy;
            let ox = rng.random_range(-sx..sx - wx);
            let oy = rng.random_range(-sy..sy - wy);
            planes.push(Plane { depth, extent: Some([ox, ox + wx, oy, oy + wy]) });
        }
        let jitter = |rng: &mut ChaCha8Rng, v: f64| v + rng.random_range(-self.translation_jitter..=self.translation_jitter);
        let translation = [
            jitter(&mut rng, self.translation[0]),
            jitter(&mut rng, self.translation[1]),
            jitter(&mut rng, self.translation[2]),
        ];
        let rotation: [f64; 3] = std::array::from_fn(|_| rng.random_range(-self.max_rotation..=self.max_rotation));
        let moving_object = self.moving_object.then(|| {
            let depth = 0.5 * self.foreground_depth.0 + 0.5 * rng.random_range(0.0..0.5);
            let (sx, sy) = (half_w * depth, half_h * depth);
            // The patch travels with the camera, so it stays fixed in the image.
            MovingPatch {
                plane: Plane { depth, extent: Some([-0.3 * sx, 0.3 * sx, -0.3 * sy, 0.3 * sy]) },
                translation: translation.map(|v| -v),
            }
        });
        let rotation = if moving_object.is_some() { [0.0; 3] } else { rotation };
        let camera_motion = PoseSE3::new(rotation, translation);
        SceneSpec {
            width: self.width,
            height: self.height,
            fx: f,
            fy: f,
            cx,
            cy,
            planes,
            camera_motion,
            moving_object,
            texture_seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        }
    }
}

/// Builds a training sample with the previous and next frames of a camera
/// moving at constant velocity. The next frame is `camera_motion` away and
/// the previous frame its inverse.
pub fn synth_sample(spec: &SceneSpec, id: &str, num_scales: usize) -> Result<FrameSample> {
    let pair = render_pair(spec)?;
    let prev_pose = spec.camera_motion.inverse();
    let prev = render_view(spec, &prev_pose)?;
    Ok(FrameSample {
        id: id.to_string(),
        target: pair.target,
        sources: vec![(SourceRole::Prev, prev), (SourceRole::Next, pair.source)],
        augmented: None,
        intrinsics: pyramid_intrinsics(&pair.intrinsics, num_scales),
        stereo_pose: None,
        gt_depth: Some(pair.depth),
        gt_poses: vec![(SourceRole::Prev, prev_pose), (SourceRole::Next, spec.camera_motion)],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthDtype {
    F32 = 0,
    F64 = 1,
}

/// Writes a depth array: magic, dtype, H, W (little-endian `u32`s), then
/// row-major values.
pub fn write_depth_array(path: &Path, height: usize, width: usize, values: &[f64], dtype: DepthDtype) -> Result<()> {
    if values.len() != height * width {
        return Err(invalid(format!("{} values for {height}x{width}", values.len())));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&DEPTH_MAGIC)?;
    for v in [dtype as u32, height as u32, width as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in values {
        match dtype {
            DepthDtype::F32 => out.write_all(&(v as f32).to_le_bytes())?,
            DepthDtype::F64 => out.write_all(&v.to_le_bytes())?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_depth_array(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.to_path_buf()))?
        .read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Decode { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < 16 || bytes[..4] != DEPTH_MAGIC {
        return Err(bad("missing depth header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (dtype, h, w) = (word(0), word(1), word(2));
    let size = match dtype {
        0 => 4,
        1 => 8,
        _ => return Err(bad("unknown dtype")),
    };
    let body = &bytes[16..];
    if body.len() != h * w * size {
        return Err(bad("payload size does not match header"));
    }
    let values = body
        .chunks_exact(size)
        .map(|c| match size {
            4 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            _ => f64::from_le_bytes(c.try_into().unwrap()),
        })
        .collect();
    DepthMap::sparse(h, w, values)
}

/// Saves a `3×H×W` tensor as a 16-bit RGB PNG.
pub fn save_png16(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = (t.dim(1), t.dim(2));
    let d = t.data();
    let img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|c| (d[c * h * w + p].clamp(0.0, 1.0) * 65535.0).round() as u16))
    });
    img.save(path).map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
}

fn save_mask(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
}

/// Contents of a `render-synth` spec file: explicit scenes, generated ones,
/// or both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSpecFile {
    #[serde(default)]
    pub scenes: Vec<SceneSpec>,
    #[serde(default)]
    pub generate: Option<GenerateSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub generator: SceneGenerator,
}

impl SynthSpecFile {
    /// Reads a TOML spec file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn all_scenes(&self) -> Vec<SceneSpec> {
        let mut out = self.scenes.clone();
        if let Some(g) = &self.generate {
            out.extend((0..g.count).map(|k| g.generator.scene(g.seed.wrapping_add(k as u64))));
        }
        out
    }
}

pub const MANIFEST_HEADER: &str =
    "# index target source depth motion_mask fx fy cx cy width height tx ty tz qx qy qz qw";

/// Writes each rendered pair as 16-bit PNGs, a raw depth array and a motion
/// mask, and lists them in `manifest.txt`.
pub fn write_dataset(dir: &Path, pairs: &[RenderedPair]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (idx, p) in pairs.iter().enumerate() {
        let names = [
            format!("{idx:04}_target.png"),
            format!("{idx:04}_source.png"),
            format!("{idx:04}_depth.bin"),
            format!("{idx:04}_motion.png"),
        ];
        save_png16(&dir.join(&names[0]), &p.target)?;
        save_png16(&dir.join(&names[1]), &p.source)?;
        write_depth_array(&dir.join(&names[2]), p.depth.height(), p.depth.width(), p.depth.values(), DepthDtype::F64)?;
        save_mask(&dir.join(&names[3]), &p.motion_mask, p.intrinsics.width, p.intrinsics.height)?;
        let k = &p.intrinsics;
        let pose: Vec<String> = p.pose.to_seven().iter().map(|v| format!("{v:.17e}")).collect();
        manifest.push_str(&format!(
            "{idx} {} {} {} {} {:.17e} {:.17e} {:.17e} {:.17e} {} {} {}\n",
            names[0], names[1], names[2], names[3], k.fx, k.fy, k.cx, k.cy, k.width, k.height, pose.join(" ")
        ));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// One manifest row read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub target: String,
    pub source: String,
    pub depth: String,
    pub motion_mask: String,
    pub intrinsics: Intrinsics,
    pub pose: PoseSE3,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingFile(path.clone()))?;
    let bad = |line: &str| Error::Decode { path: path.clone(), reason: format!("bad manifest line {line:?}") };
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 18 {
            return Err(bad(line));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(line));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(line));
        let seven: [f64; 7] = std::array::from_fn(|k| num(11 + k).unwrap_or(f64::NAN));
        if seven.iter().any(|v| v.is_nan()) {
            return Err(bad(line));
        }
        out.push(ManifestEntry {
            target: f[1].into(),
            source: f[2].into(),
            depth: f[3].into(),
            motion_mask: f[4].into(),
            intrinsics: Intrinsics::new(num(5)?, num(6)?, num(7)?, num(8)?, int(9)?, int(10)?)?,
            pose: PoseSE3::from_seven(seven),
        });
    }
    Ok(out)
}

/// Loads a written dataset as evaluation samples whose single source is the
/// `Next` frame, with ground-truth depth and pose attached.
pub fn read_dataset_samples(dir: &Path, num_scales: usize) -> Result<Vec<FrameSample>> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| {
            let (w, h) = (e.intrinsics.width, e.intrinsics.height);
            let target = load_image(&dir.join(&e.target), Some((h, w)))?;
            let source = load_image(&dir.join(&e.source), Some((h, w)))?;
            let depth = read_depth_array(&dir.join(&e.depth))?;
            Ok(FrameSample {
                id: e.target.trim_end_matches("_target.png").to_string(),
                target,
                sources: vec![(SourceRole::Next, source)],
                augmented: None,
                intrinsics: pyramid_intrinsics(&e.intrinsics, num_scales),
                stereo_pose: None,
                gt_depth: Some(depth),
                gt_poses: vec![(SourceRole::Next, e.pose)],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_plane(motion: PoseSE3) -> SceneSpec {
        SceneSpec {
            width: 16,
            height: 12,
            fx: 14.0,
            fy: 14.0,
            cx: 7.5,
            cy: 5.5,
            planes: vec![Plane { depth: 4.0, extent: None }],
            camera_motion: motion,
            moving_object: None,
            texture_seed: 3,
        }
    }

    #[test]
    fn zero_motion_renders_identical_frames() {
        let pair = render_pair(&single_plane(PoseSE3::identity())).unwrap();
        assert_eq!(pair.target, pair.source);
        assert!(pair.motion_mask.iter().all(|&m| !m));
    }

    #[test]
    fn forward_translation_doubles_offsets_about_principal_point() {
        let k = Intrinsics::new(10.0, 10.0, 3.5, 2.5, 8, 6).unwrap();
        let pose = PoseSE3::new([0.0; 3], [0.0, 0.0, -1.0]);
        let (x, y) = brute_force_reproject((0, 0), 2.0, &k, &pose).unwrap();
        assert!((x - (3.5 - 2.0 * 3.5)).abs() < 1e-12);
        assert!((y - (2.5 - 2.0 * 2.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_crossing_patch() {
        let mut spec = single_plane(PoseSE3::identity());
        spec.moving_object = Some(MovingPatch {
            plane: Plane { depth: 3.0, extent: Some([-0.5, 0.5, -0.5, 0.5]) },
            translation: [0.0, 0.0, 1.5],
        });
        assert!(render_pair(&spec).is_err());
    }

    #[test]
    fn depth_array_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let vals = vec![1.5, 0.0, 2.25, 80.0, -1.0, 3.0];
        write_depth_array(&path, 2, 3, &vals, DepthDtype::F64).unwrap();
        let d = read_depth_array(&path).unwrap();
        assert_eq!(d.values(), &vals[..]);
        assert_eq!(d.valid(), &[true, false, true, true, false, true]);
    }
}
