//! Video clips, the synthetic two-stream benchmark, and on-disk clip layout.
//!
//! The generator produces two kinds of categories:
//!
//! * **motion** categories all show the same sprite; only its trajectory
//!   (rightward, downward, circular, ...) differs, so a single frame carries
//!   no class information;
//! * **appearance** categories each show their own static sprite (a square,
//!   disk, cross, ... in its own color) with the same small random jitter,
//!   so the motion carries no class information.
//!
//! A clip directory holds `frame_NNN.ppm` files plus a one-line `label.txt`;
//! a dataset manifest lists one clip directory and split tag per line.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ClipError, Error, Result};
use crate::image::RgbImage;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    pub label: usize,
    pub fps: f64,
    pub frames: Vec<RgbImage>,
}

impl VideoClip {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(ClipError::TooFewFrames(PathBuf::from(&self.id)).into());
        }
        let (w, h) = (self.frames[0].width, self.frames[0].height);
        for (i, f) in self.frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(ClipError::MixedDimensions {
                    path: PathBuf::from(&self.id),
                    frame: i.to_string(),
                    got_w: f.width,
                    got_h: f.height,
                    want_w: w,
                    want_h: h,
                }
                .into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trajectory {
    Rightward,
    Downward,
    Circular,
    Leftward,
    Upward,
    Diagonal,
}

impl Trajectory {
    pub const ALL: [Trajectory; 6] = [
        Trajectory::Rightward,
        Trajectory::Downward,
        Trajectory::Circular,
        Trajectory::Leftward,
        Trajectory::Upward,
        Trajectory::Diagonal,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Diamond,
    Square,
    Disk,
    Cross,
    Ring,
    Triangle,
    Bar,
}

impl Shape {
    /// Shapes used by appearance categories, in category order.
    pub const APPEARANCE: [Shape; 6] = [
        Shape::Square,
        Shape::Disk,
        Shape::Cross,
        Shape::Ring,
        Shape::Triangle,
        Shape::Bar,
    ];

    fn color(self) -> [f64; 3] {
        match self {
            Shape::Diamond => MOTION_COLOR,
            Shape::Square => [0.95, 0.25, 0.2],
            Shape::Disk => [0.3, 0.9, 0.35],
            Shape::Cross => [0.3, 0.45, 1.0],
            Shape::Ring => [0.95, 0.35, 0.95],
            Shape::Triangle => [0.3, 0.95, 0.95],
            Shape::Bar => [1.0, 0.6, 0.1],
        }
    }

    /// Membership of the integer offset `(dx, dy)` from the sprite centre.
    fn covers(self, dx: i32, dy: i32) -> bool {
        let r2 = dx * dx + dy * dy;
        match self {
            Shape::Diamond => dx.abs() + dy.abs() <= SPRITE_RADIUS,
            Shape::Square => dx.abs() <= 3 && dy.abs() <= 3,
            Shape::Disk => r2 <= 16,
            Shape::Cross => (dx.abs() <= 1 && dy.abs() <= 4) || (dy.abs() <= 1 && dx.abs() <= 4),
            Shape::Ring => (8..=18).contains(&r2),
            Shape::Triangle => dy.abs() <= 3 && 2 * dx.abs() <= dy + 4,
            Shape::Bar => dx.abs() <= 1 && dy.abs() <= 4,
        }
    }
}

const SPRITE_RADIUS: i32 = 4;
const MOTION_COLOR: [f64; 3] = [1.0, 0.85, 0.3];
const JITTER: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Category {
    Motion(Trajectory),
    Appearance(Shape),
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Motion(t) => write!(f, "motion-{}", format!("{t:?}").to_lowercase()),
            Category::Appearance(s) => write!(f, "appearance-{}", format!("{s:?}").to_lowercase()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_motion_categories: usize,
    pub num_appearance_categories: usize,
    pub train_clips_per_category: usize,
    pub test_clips_per_category: usize,
    pub frame_size: usize,
    pub frames_per_clip: usize,
    pub noise_std: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_motion_categories: 3,
            num_appearance_categories: 3,
            train_clips_per_category: 40,
            test_clips_per_category: 10,
            frame_size: 32,
            frames_per_clip: 8,
            noise_std: 0.02,
            fps: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_categories(&self) -> usize {
        self.num_motion_categories + self.num_appearance_categories
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_categories() < 2 {
            return bad("synthetic dataset needs at least 2 categories".into());
        }
        if self.num_motion_categories > Trajectory::ALL.len()
            || self.num_appearance_categories > Shape::APPEARANCE.len()
        {
            return bad(format!(
                "at most {} motion and {} appearance categories are available",
                Trajectory::ALL.len(),
                Shape::APPEARANCE.len()
            ));
        }
        if self.frames_per_clip < 4 {
            return bad(format!(
                "frames_per_clip must be ≥ 4, got {}",
                self.frames_per_clip
            ));
        }
        if self.frame_size < 24 {
            return bad(format!("frame_size must be ≥ 24, got {}", self.frame_size));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be ≥ 0, got {}", self.noise_std));
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<Category> {
        Trajectory::ALL[..self.num_motion_categories]
            .iter()
            .map(|&t| Category::Motion(t))
            .chain(
                Shape::APPEARANCE[..self.num_appearance_categories]
                    .iter()
                    .map(|&s| Category::Appearance(s)),
            )
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub categories: Vec<Category>,
    pub train: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

/// Random quantities that fix one clip's sprite path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

impl Phase {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            x: rng.random(),
            y: rng.random(),
            angle: rng.random_range(0.0..2.0 * PI),
        }
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(base, parts...)`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn background(x: usize, y: usize) -> [f64; 3] {
    let (xf, yf) = (x as f64, y as f64);
    let t = 0.08 * (0.7 * xf + 0.3 * yf).sin() * (0.5 * yf).cos();
    [0.25 + t, 0.22 + t, 0.3 + t]
}

/// Sprite centre for frame `t` of `frames`.
fn sprite_centre(
    category: Category,
    phase: &Phase,
    t: usize,
    frames: usize,
    size: usize,
) -> (f64, f64) {
    let s = size as f64;
    let margin = SPRITE_RADIUS as f64 + 2.0;
    let travel = 0.375 * s;
    let speed = travel / (frames - 1) as f64;
    let span = s - 2.0 * margin;
    let tf = t as f64;
    match category {
        Category::Motion(traj) => {
            let along = margin + phase.x * (span - travel);
            let across = margin + phase.y * span;
            match traj {
                Trajectory::Rightward => (along + speed * tf, across),
                Trajectory::Leftward => (s - along - speed * tf, across),
                Trajectory::Downward => (across, along + speed * tf),
                Trajectory::Upward => (across, s - along - speed * tf),
                Trajectory::Diagonal => {
                    let d = speed / std::f64::consts::SQRT_2;
                    let start = margin + phase.x * (span - travel / std::f64::consts::SQRT_2);
                    let start_y = margin + phase.y * (span - travel / std::f64::consts::SQRT_2);
                    (start + d * tf, start_y + d * tf)
                }
                Trajectory::Circular => {
                    let radius = 0.22 * s;
                    let omega = speed / radius;
                    let centre = s / 2.0 + (phase.x - 0.5) * 2.0;
                    let centre_y = s / 2.0 + (phase.y - 0.5) * 2.0;
                    let a = phase.angle + omega * tf;
                    (centre + radius * a.cos(), centre_y + radius * a.sin())
                }
            }
        }
        Category::Appearance(_) => (
            margin + 1.0 + phase.x * (span - 2.0),
            margin + 1.0 + phase.y * (span - 2.0),
        ),
    }
}

/// Renders one frame with the sprite at a sub-pixel position, splatting the
/// binary shape mask bilinearly over the four surrounding integer offsets.
fn render_frame(shape: Shape, color: [f64; 3], centre: (f64, f64), size: usize) -> Vec<f64> {
    let (ix, iy) = (centre.0.floor(), centre.1.floor());
    let (fx, fy) = (centre.0 - ix, centre.1 - iy);
    let (ix, iy) = (ix as i32, iy as i32);
    let taps = [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ];
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let coverage: f64 = taps
                .iter()
                .filter(|(ox, oy, _)| shape.covers(x as i32 - ix - ox, y as i32 - iy - oy))
                .map(|(_, _, w)| w)
                .sum();
            let bg = background(x, y);
            for c in 0..3 {
                out.push(bg[c] * (1.0 - coverage) + color[c] * coverage);
            }
        }
    }
    out
}

fn quantize(values: &[f64], size: usize) -> RgbImage {
    let data = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::new(size, size, data).expect("rendered buffer matches size")
}

/// Renders one clip. All randomness beyond `phase` (appearance jitter and
/// pixel noise) comes from `rng`.
pub fn render_clip<R: Rng>(
    config: &SynthConfig,
    category: Category,
    label: usize,
    phase: &Phase,
    id: String,
    rng: &mut R,
) -> VideoClip {
    let size = config.frame_size;
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let shape = match category {
        Category::Motion(_) => Shape::Diamond,
        Category::Appearance(s) => s,
    };
    let frames = (0..config.frames_per_clip)
        .map(|t| {
            let mut centre = sprite_centre(category, phase, t, config.frames_per_clip, size);
            if matches!(category, Category::Appearance(_)) {
                centre.0 += rng.random_range(-JITTER..JITTER);
                centre.1 += rng.random_range(-JITTER..JITTER);
            }
            let mut pixels = render_frame(shape, shape.color(), centre, size);
            if config.noise_std > 0.0 {
                for p in pixels.iter_mut() {
                    *p += noise.sample(rng);
                }
            }
            quantize(&pixels, size)
        })
        .collect();
    VideoClip {
        id,
        label,
        fps: config.fps,
        frames,
    }
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

/// Deterministic train/test clips; every clip draws from its own derived
/// seed, and the two splits use disjoint seed streams.
pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let categories = config.categories();
    let make_split = |split: u64, per_category: usize, tag: &str| -> Vec<VideoClip> {
        let mut clips = Vec::with_capacity(categories.len() * per_category);
        for (label, &category) in categories.iter().enumerate() {
            for i in 0..per_category {
                let seed = derive_seed(config.seed, &[split, label as u64, i as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phase = Phase::sample(&mut rng);
                let id = format!("{tag}_c{label:02}_{i:04}");
                clips.push(render_clip(config, category, label, &phase, id, &mut rng));
            }
        }
        clips
    };
    Ok(SyntheticDataset {
        train: make_split(SPLIT_TRAIN, config.train_clips_per_category, "train"),
        test: make_split(SPLIT_TEST, config.test_clips_per_category, "test"),
        categories,
    })
}

/// Writes `dir/frame_NNN.ppm` and `dir/label.txt`.
pub fn write_clip(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in clip.frames.iter().enumerate() {
        frame.write_ppm(dir.join(format!("frame_{i:03}.ppm")))?;
    }
    let label = dir.join("label.txt");
    fs::write(&label, format!("{}\n", clip.label)).map_err(|e| Error::io(&label, e))
}

fn frame_number(name: &str) -> Option<u64> {
    name.strip_prefix("frame_")?
        .strip_suffix(".ppm")?
        .parse()
        .ok()
}

/// Loads a clip directory written by [`write_clip`] (or by hand).
pub fn load_clip_ppm_sequence(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = frame_number(&name) {
            numbered.push((n, name));
        }
    }
    numbered.sort();
    if numbered.len() < 2 {
        return Err(ClipError::TooFewFrames(dir.to_path_buf()).into());
    }

    let label_path = dir.join("label.txt");
    let text = match fs::read_to_string(&label_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ClipError::MissingLabel(dir.to_path_buf()).into())
        }
        Err(e) => return Err(Error::io(&label_path, e)),
    };
    let label = text
        .lines()
        .next()
        .map(str::trim)
        .and_then(|l| l.parse::<usize>().ok())
        .ok_or_else(|| ClipError::BadLabel {
            path: dir.to_path_buf(),
            text: text.clone(),
        })?;

    let mut frames: Vec<RgbImage> = Vec::with_capacity(numbered.len());
    for (_, name) in &numbered {
        let img = RgbImage::read_ppm(dir.join(name))?;
        if let Some(first) = frames.first() {
            if img.width != first.width || img.height != first.height {
                return Err(ClipError::MixedDimensions {
                    path: dir.to_path_buf(),
                    frame: name.clone(),
                    got_w: img.width,
                    got_h: img.height,
                    want_w: first.width,
                    want_h: first.height,
                }
                .into());
            }
        }
        frames.push(img);
    }
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(VideoClip {
        id,
        label,
        fps: SynthConfig::default().fps,
        frames,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Clip directory, resolved against the manifest's directory.
    pub path: PathBuf,
    pub split: Split,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes every clip under `out_dir/<clip_id>/` plus `out_dir/manifest.txt`
/// (`<clip_id>\t<split>` per line). Returns the manifest path.
pub fn write_dataset(dataset: &SyntheticDataset, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    for (clips, split) in [(&dataset.train, Split::Train), (&dataset.test, Split::Test)] {
        for clip in clips {
            write_clip(clip, out_dir.join(&clip.id))?;
            manifest.push_str(&format!("{}\t{}\n", clip.id, split.as_str()));
        }
    }
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(clip), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected `<clip path>\\t<split>`",
                path.display(),
                n + 1
            )));
        };
        entries.push(ManifestEntry {
            path: base.join(clip),
            split: split.parse()?,
        });
    }
    Ok(entries)
}
