//! Synthetic turntable dataset: rendering, persistence, distance splits,
//! augmentation and shuffled mini-batches.
//!
//! Each object is a flat textured silhouette. A view condition places it at a
//! camera distance (apparent scale `REFERENCE_DISTANCE / distance`), a camera
//! height (vertical offset plus foreshortening) and a turntable angle (in-plane
//! rotation). Images are stored on disk as
//! `<root>/<object>/<distance>/<height>/<angle>.pgm` next to a `manifest.csv`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{crop, hflip, read_pgm, resize_bilinear, write_pgm, GrayImage};
use crate::nn::Tensor;

/// Camera distances of the physical rig, in cm.
pub const STANDARD_DISTANCES: [f64; 4] = [39.5, 47.0, 54.5, 62.0];
/// Camera heights of the physical rig, in cm (6 cm apart).
pub const STANDARD_HEIGHTS: [f64; 5] = [10.0, 16.0, 22.0, 28.0, 34.0];
/// Distance at which an object's radius is `OBJECT_RADIUS` of the short image side.
pub const REFERENCE_DISTANCE: f64 = 39.5;
pub const OBJECT_RADIUS: f64 = 0.34;
/// Height at which the object sits on the vertical centre line.
pub const REFERENCE_HEIGHT: f64 = 22.0;
pub const NOISE_SIGMA: f64 = 0.02;
pub const BACKGROUND: f64 = 0.1;
/// Training crop side as a fraction of the short image side (110 of 120 px).
pub const CROP_RATIO: f64 = 110.0 / 120.0;
pub const MANIFEST: &str = "manifest.csv";

const VERTICAL_SHIFT_PER_CM: f64 = 0.006;

/// Where and how one image was taken. Lengths in cm, angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewCondition {
    pub object_id: usize,
    pub distance: f64,
    pub height: f64,
    pub angle: f64,
}

impl ViewCondition {
    pub fn new(object_id: usize, distance: f64, height: f64, angle: f64) -> Self {
        Self {
            object_id,
            distance,
            height,
            angle,
        }
    }

    /// Seed for this condition's noise, independent of generation order.
    pub fn seed(&self, global: u64) -> u64 {
        derive_seed(
            global,
            &[
                self.object_id as u64,
                self.distance.to_bits(),
                self.height.to_bits(),
                self.angle.rem_euclid(360.0).to_bits(),
            ],
        )
    }
}

/// Folds `parts` into `base` with a SplitMix64 finalizer per part.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ p))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub objects: usize,
    pub distances: Vec<f64>,
    pub heights: Vec<f64>,
    pub angles: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl DatasetConfig {
    /// 10 objects x 4 distances x 5 heights x 42 angles = 8400 images of 160x120.
    pub fn full() -> Self {
        Self {
            objects: 10,
            distances: STANDARD_DISTANCES.to_vec(),
            heights: STANDARD_HEIGHTS.to_vec(),
            angles: 42,
            width: 160,
            height: 120,
        }
    }

    /// 4 objects x 3 distances x 2 heights x 24 angles = 576 images of 32x32.
    pub fn desk() -> Self {
        Self {
            objects: 4,
            distances: STANDARD_DISTANCES[..3].to_vec(),
            heights: STANDARD_HEIGHTS[..2].to_vec(),
            angles: 24,
            width: 32,
            height: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.objects == 0
            || self.distances.is_empty()
            || self.heights.is_empty()
            || self.angles == 0
        {
            return bad(
                "objects, distances, heights and angles all need at least one entry".into(),
            );
        }
        if self.distances.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("distances must be positive".into());
        }
        if self.heights.iter().any(|h| !h.is_finite()) {
            return bad("heights must be finite".into());
        }
        if distinct(&self.distances) != self.distances.len()
            || distinct(&self.heights) != self.heights.len()
        {
            return bad("distances and heights must not repeat".into());
        }
        if self.width.min(self.height) < 16 {
            return Err(Error::TooSmall(self.width.min(self.height)));
        }
        Ok(())
    }

    pub fn angle_list(&self) -> Vec<f64> {
        (0..self.angles)
            .map(|i| 360.0 * i as f64 / self.angles as f64)
            .collect()
    }

    pub fn total(&self) -> usize {
        self.objects * self.distances.len() * self.heights.len() * self.angles
    }

    /// Every condition, ordered object, distance, height, angle.
    pub fn conditions(&self) -> Vec<ViewCondition> {
        let angles = self.angle_list();
        let mut out = Vec::with_capacity(self.total());
        for o in 0..self.objects {
            for &d in &self.distances {
                for &h in &self.heights {
                    for &a in &angles {
                        out.push(ViewCondition::new(o, d, h, a));
                    }
                }
            }
        }
        out
    }
}

fn distinct(v: &[f64]) -> usize {
    v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len()
}

// ---------------------------------------------------------------------------
// Rendering

/// Silhouette test and texture in object coordinates (unit radius).
fn object_shape(id: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    let phi = v.atan2(u);
    let polygon = |n: f64| -> bool {
        let sector = 2.0 * PI / n;
        let local = phi.rem_euclid(sector) - sector / 2.0;
        r * local.cos() <= (PI / n).cos()
    };
    match id % 10 {
        0 => polygon(3.0),
        1 => polygon(4.0),
        2 => (u / 1.0).powi(2) + (v / 0.55).powi(2) <= 1.0,
        3 => {
            // five-pointed star: radius alternates between 1 and 0.45
            let sector = 2.0 * PI / 5.0;
            let t = (phi.rem_euclid(sector) / sector - 0.5).abs() * 2.0;
            r <= 0.45 + 0.55 * t
        }
        4 => polygon(6.0),
        5 => r <= 0.7 || ((u - 0.62).powi(2) + (v + 0.45).powi(2)).sqrt() <= 0.38,
        6 => (u.abs() <= 0.32 && v.abs() <= 1.0) || (v.abs() <= 0.32 && u.abs() <= 1.0),
        7 => (0.5..=1.0).contains(&r),
        8 => r <= 1.0 && ((u - 0.45).powi(2) + (v - 0.2).powi(2)).sqrt() > 0.7,
        _ => u.abs() <= 1.0 && v.abs() <= 0.5 && r > 0.22,
    }
}

fn object_texture(id: usize, u: f64, v: f64) -> f64 {
    let freq = 1.0 + 0.5 * (id % 4) as f64;
    let tau = 0.7 * id as f64 + 0.3 * (id / 10) as f64;
    (2.0 * PI * freq * (u * tau.cos() + v * tau.sin())).cos()
}

/// Renders one view at `width x height`. See the module docs for the geometry.
pub fn render_view_wh(
    cond: &ViewCondition,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<GrayImage> {
    if width.min(height) < 16 {
        return Err(Error::TooSmall(width.min(height)));
    }
    if !(cond.distance > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "distance must be positive, got {}",
            cond.distance
        )));
    }
    let short = width.min(height) as f64;
    let radius = OBJECT_RADIUS * short * REFERENCE_DISTANCE / cond.distance;
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0 + VERTICAL_SHIFT_PER_CM * short * (cond.height - REFERENCE_HEIGHT);
    let squash = (cond.height / cond.distance).atan().cos();
    let (sin_a, cos_a) = cond.angle.rem_euclid(360.0).to_radians().sin_cos();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    const SUB: [f64; 2] = [0.25, 0.75];
    let mut data = Vec::with_capacity(width * height);
    for py in 0..height {
        for px in 0..width {
            let mut acc = 0.0;
            for sy in SUB {
                for sx in SUB {
                    let dx = px as f64 + sx - cx;
                    let dy = (py as f64 + sy - cy) / squash;
                    let u = (dx * cos_a + dy * sin_a) / radius;
                    let v = (-dx * sin_a + dy * cos_a) / radius;
                    acc += if object_shape(cond.object_id, u, v) {
                        0.6 + 0.25 * object_texture(cond.object_id, u, v)
                    } else {
                        BACKGROUND
                    };
                }
            }
            let value = acc / 4.0 + noise.sample(&mut rng);
            data.push(value.clamp(0.0, 1.0));
        }
    }
    GrayImage::new(width, height, data)
}

/// Square rendering, `size x size`.
pub fn render_view(cond: &ViewCondition, size: usize, seed: u64) -> Result<GrayImage> {
    render_view_wh(cond, size, size, seed)
}

// ---------------------------------------------------------------------------
// Dataset

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cond: ViewCondition,
    pub image: Arc<GrayImage>,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.cond.object_id
    }
}

/// Images for the full Cartesian product of conditions, in
/// object / distance / height / angle order.
#[derive(Debug, Clone, PartialEq)]
pub struct TurntableDataset {
    pub objects: usize,
    pub distances: Vec<f64>,
    pub heights: Vec<f64>,
    pub angles: Vec<f64>,
    pub width: usize,
    pub height: usize,
    samples: Vec<Sample>,
}

impl TurntableDataset {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, cond: &ViewCondition) -> Option<&Sample> {
        self.samples.iter().find(|s| s.cond == *cond)
    }

    /// Assembles a dataset, checking that every condition of the product
    /// appears exactly once.
    pub fn from_samples(mut samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let (width, height) = (first.image.width(), first.image.height());
        let sorted = |f: fn(&ViewCondition) -> f64, s: &[Sample]| -> Vec<f64> {
            let set: BTreeSet<u64> = s.iter().map(|x| f(&x.cond).to_bits()).collect();
            let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let distances = sorted(|c| c.distance, &samples);
        let heights = sorted(|c| c.height, &samples);
        let angles = sorted(|c| c.angle, &samples);
        let objects = samples.iter().map(|s| s.cond.object_id).max().unwrap_or(0) + 1;
        let expected = objects * distances.len() * heights.len() * angles.len();
        samples.sort_by(|a, b| {
            a.cond
                .object_id
                .cmp(&b.cond.object_id)
                .then(a.cond.distance.total_cmp(&b.cond.distance))
                .then(a.cond.height.total_cmp(&b.cond.height))
                .then(a.cond.angle.total_cmp(&b.cond.angle))
        });
        let duplicate = samples.windows(2).any(|w| w[0].cond == w[1].cond);
        if samples.len() != expected || duplicate {
            return Err(Error::InvalidConfig(format!(
                "{} images do not form the {objects}x{}x{}x{} condition grid",
                samples.len(),
                distances.len(),
                heights.len(),
                angles.len()
            )));
        }
        if samples
            .iter()
            .any(|s| s.image.width() != width || s.image.height() != height)
        {
            return Err(Error::InvalidConfig("images differ in size".into()));
        }
        Ok(Self {
            objects,
            distances,
            heights,
            angles,
            width,
            height,
            samples,
        })
    }
}

/// Renders every condition of `cfg` in memory.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<TurntableDataset> {
    cfg.validate()?;
    let samples = cfg
        .conditions()
        .into_iter()
        .map(|cond| {
            let img = render_view_wh(&cond, cfg.width, cfg.height, cond.seed(seed))?;
            Ok(Sample {
                cond,
                image: Arc::new(img),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TurntableDataset::from_samples(samples)
}

/// Relative path of a condition's image inside a dataset root.
pub fn image_path(cond: &ViewCondition) -> PathBuf {
    PathBuf::from(cond.object_id.to_string())
        .join(format!("{:.1}", cond.distance))
        .join(format!("{:.1}", cond.height))
        .join(format!("{:.3}.pgm", cond.angle))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    object_id: usize,
    distance: f64,
    height: f64,
    angle: f64,
    path: String,
}

fn write_one(root: &Path, cond: &ViewCondition, img: &GrayImage) -> Result<ManifestRow> {
    let rel = image_path(cond);
    let full = root.join(&rel);
    if let Some(dir) = full.parent() {
        fs::create_dir_all(dir)?;
    }
    write_pgm(&full, img)?;
    Ok(ManifestRow {
        object_id: cond.object_id,
        distance: cond.distance,
        height: cond.height,
        angle: cond.angle,
        path: rel.to_string_lossy().replace('\\', "/"),
    })
}

fn write_manifest(root: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(root.join(MANIFEST))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the images and manifest of an in-memory dataset.
pub fn save_dataset(ds: &TurntableDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let rows = ds
        .samples()
        .iter()
        .map(|s| write_one(root, &s.cond, &s.image))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(root, &rows)
}

/// Renders straight to disk one image at a time; returns the image count.
pub fn generate_to_dir(cfg: &DatasetConfig, seed: u64, root: impl AsRef<Path>) -> Result<usize> {
    cfg.validate()?;
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let mut rows = Vec::with_capacity(cfg.total());
    for cond in cfg.conditions() {
        let img = render_view_wh(&cond, cfg.width, cfg.height, cond.seed(seed))?;
        rows.push(write_one(root, &cond, &img)?);
    }
    write_manifest(root, &rows)?;
    Ok(rows.len())
}

/// Loads a dataset written by [`save_dataset`] or [`generate_to_dir`].
pub fn load_dataset(root: impl AsRef<Path>) -> Result<TurntableDataset> {
    let root = root.as_ref();
    let mut rdr = csv::Reader::from_path(root.join(MANIFEST))?;
    let mut samples = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let image = read_pgm(root.join(&row.path))?;
        samples.push(Sample {
            cond: ViewCondition::new(row.object_id, row.distance, row.height, row.angle),
            image: Arc::new(image),
        });
    }
    TurntableDataset::from_samples(samples)
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_distance: f64,
    pub test_distances: Vec<f64>,
}

const DISTANCE_TOL: f64 = 1e-6;

fn same_distance(a: f64, b: f64) -> bool {
    (a - b).abs() <= DISTANCE_TOL
}

impl SplitSpec {
    /// Train on `distance`, test on every other distance in `ds`.
    pub fn train_on(ds: &TurntableDataset, distance: f64) -> Result<Self> {
        if !ds.distances.iter().any(|&d| same_distance(d, distance)) {
            return Err(Error::UnknownDistance(distance));
        }
        Ok(Self {
            train_distance: distance,
            test_distances: ds
                .distances
                .iter()
                .copied()
                .filter(|&d| !same_distance(d, distance))
                .collect(),
        })
    }
}

/// Partitions the dataset by camera distance.
pub fn split_by_distance(
    ds: &TurntableDataset,
    spec: &SplitSpec,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    for &d in std::iter::once(&spec.train_distance).chain(&spec.test_distances) {
        if !ds.distances.iter().any(|&x| same_distance(x, d)) {
            return Err(Error::UnknownDistance(d));
        }
    }
    if spec
        .test_distances
        .iter()
        .any(|&d| same_distance(d, spec.train_distance))
    {
        return Err(Error::InvalidConfig(
            "training distance also listed as a test distance".into(),
        ));
    }
    let covered = |d: f64| {
        same_distance(d, spec.train_distance)
            || spec.test_distances.iter().any(|&t| same_distance(t, d))
    };
    if !ds.distances.iter().all(|&d| covered(d)) {
        return Err(Error::InvalidConfig(
            "split does not cover every dataset distance".into(),
        ));
    }
    let (train, test): (Vec<Sample>, Vec<Sample>) = ds
        .samples()
        .iter()
        .cloned()
        .partition(|s| same_distance(s.cond.distance, spec.train_distance));
    if test.is_empty() {
        log::warn!(
            "split at {} cm leaves no test images (single-distance dataset)",
            spec.train_distance
        );
    }
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Augmentation

/// Side of the square training crop for a `w x h` image.
pub fn crop_side(w: usize, h: usize) -> usize {
    (w.min(h) as f64 * CROP_RATIO).round() as usize
}

/// Deterministic core of [`augment_train`]: optional flip, crop at `(x0, y0)`,
/// resize to `net_size`.
pub fn augment_with(
    img: &GrayImage,
    flip: bool,
    x0: usize,
    y0: usize,
    net_size: usize,
) -> Result<GrayImage> {
    let side = crop_side(img.width(), img.height());
    if side == 0 || side > img.width().min(img.height()) {
        return Err(Error::CropLargerThanImage {
            side,
            width: img.width(),
            height: img.height(),
        });
    }
    let flipped;
    let src = if flip {
        flipped = hflip(img);
        &flipped
    } else {
        img
    };
    resize_bilinear(&crop(src, x0, y0, side, side)?, net_size, net_size)
}

/// Random flip (p = 0.5), random square crop, bilinear resize to `net_size`.
pub fn augment_train<R: Rng>(img: &GrayImage, rng: &mut R, net_size: usize) -> Result<GrayImage> {
    let side = crop_side(img.width(), img.height());
    if side == 0 || side > img.width().min(img.height()) {
        return Err(Error::CropLargerThanImage {
            side,
            width: img.width(),
            height: img.height(),
        });
    }
    let flip = rng.random_bool(0.5);
    let x0 = rng.random_range(0..=img.width() - side);
    let y0 = rng.random_range(0..=img.height() - side);
    augment_with(img, flip, x0, y0, net_size)
}

/// Centre square crop of side `min(W, H)`, resized to `net_size`.
pub fn eval_transform(img: &GrayImage, net_size: usize) -> Result<GrayImage> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let side = img.width().min(img.height());
    let x0 = (img.width() - side) / 2;
    let y0 = (img.height() - side) / 2;
    resize_bilinear(&crop(img, x0, y0, side, side)?, net_size, net_size)
}

// ---------------------------------------------------------------------------
// Batching

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `N x C x H x W`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    /// Positions of the batch members in the sample list.
    pub indices: Vec<usize>,
}

/// One epoch over `samples`: a seeded shuffle cut into batches, the last of
/// which may be short. `transform` turns a sample into its `C x H x W` input.
pub struct BatchIter<'a, R, F> {
    samples: &'a [Sample],
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: &'a mut R,
    transform: F,
}

pub fn batch_iter<'a, R, F>(
    samples: &'a [Sample],
    batch: usize,
    rng: &'a mut R,
    transform: F,
) -> Result<BatchIter<'a, R, F>>
where
    R: Rng,
    F: FnMut(&Sample, &mut R) -> Result<Tensor>,
{
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    Ok(BatchIter {
        samples,
        order,
        pos: 0,
        batch,
        rng,
        transform,
    })
}

impl<R, F> Iterator for BatchIter<'_, R, F>
where
    R: Rng,
    F: FnMut(&Sample, &mut R) -> Result<Tensor>,
{
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut inputs = Vec::with_capacity(indices.len());
        for &i in &indices {
            match (self.transform)(&self.samples[i], self.rng) {
                Ok(t) => inputs.push(t),
                Err(e) => return Some(Err(e)),
            }
        }
        let labels = indices.iter().map(|&i| self.samples[i].label()).collect();
        Some(Tensor::stack(&inputs).map(|inputs| Batch {
            inputs,
            labels,
            indices,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> DatasetConfig {
        DatasetConfig {
            objects: 2,
            distances: vec![39.5, 62.0],
            heights: vec![10.0],
            angles: 3,
            width: 16,
            height: 16,
        }
    }

    /// Horizontal extent of pixels brighter than the midpoint between
    /// background and the darkest object shade.
    fn silhouette_width(img: &GrayImage) -> usize {
        let thr = (BACKGROUND + 0.35) / 2.0;
        let mut lo = usize::MAX;
        let mut hi = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) > thr {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        hi + 1 - lo
    }

    #[test]
    fn render_is_deterministic_and_periodic() {
        let c = ViewCondition::new(3, 47.0, 16.0, 30.0);
        let a = render_view(&c, 32, 9).unwrap();
        assert_eq!(a, render_view(&c, 32, 9).unwrap());
        let c0 = ViewCondition::new(1, 47.0, 16.0, 0.0);
        let c360 = ViewCondition::new(1, 47.0, 16.0, 360.0);
        assert_eq!(c0.seed(4), c360.seed(4));
        assert_eq!(
            render_view(&c0, 32, c0.seed(4)).unwrap(),
            render_view(&c360, 32, c360.seed(4)).unwrap()
        );
        assert!(matches!(render_view(&c, 15, 0), Err(Error::TooSmall(15))));
    }

    #[test]
    fn doubling_distance_halves_width() {
        for id in 0..10 {
            let near = render_view(&ViewCondition::new(id, 40.0, 22.0, 0.0), 128, 1).unwrap();
            let far = render_view(&ViewCondition::new(id, 80.0, 22.0, 0.0), 128, 1).unwrap();
            let (wn, wf) = (
                silhouette_width(&near) as f64,
                silhouette_width(&far) as f64,
            );
            assert!((wf - wn / 2.0).abs() <= 1.0, "object {id}: {wn} vs {wf}");
        }
    }

    #[test]
    fn apparent_size_shrinks_with_distance() {
        let widths: Vec<usize> = STANDARD_DISTANCES
            .iter()
            .map(|&d| {
                silhouette_width(&render_view(&ViewCondition::new(1, d, 22.0, 0.0), 96, 2).unwrap())
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]), "{widths:?}");
    }

    #[test]
    fn dataset_counts() {
        assert_eq!(DatasetConfig::full().total(), 8400);
        assert_eq!(DatasetConfig::desk().total(), 576);
        let one = DatasetConfig {
            objects: 1,
            distances: vec![50.0],
            heights: vec![20.0],
            angles: 1,
            width: 16,
            height: 16,
        };
        assert_eq!(generate_dataset(&one, 0).unwrap().len(), 1);
        let ds = generate_dataset(&tiny_cfg(), 5).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds, generate_dataset(&tiny_cfg(), 5).unwrap());
        let bad = DatasetConfig {
            angles: 0,
            ..tiny_cfg()
        };
        assert!(matches!(
            generate_dataset(&bad, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn full_split_arithmetic() {
        // counts only; no rendering needed
        let cfg = DatasetConfig::full();
        let per_distance = cfg.total() / cfg.distances.len();
        assert_eq!((per_distance, cfg.total() - per_distance), (2100, 6300));
    }

    #[test]
    fn split_partitions() {
        let ds = generate_dataset(&tiny_cfg(), 1).unwrap();
        let spec = SplitSpec::train_on(&ds, 39.5).unwrap();
        let (train, test) = split_by_distance(&ds, &spec).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        assert!(train.iter().all(|s| s.cond.distance == 39.5));
        assert!(test.iter().all(|s| s.cond.distance == 62.0));
        assert!(matches!(
            SplitSpec::train_on(&ds, 50.0),
            Err(Error::UnknownDistance(_))
        ));
        let overlapping = SplitSpec {
            train_distance: 39.5,
            test_distances: vec![39.5, 62.0],
        };
        assert!(split_by_distance(&ds, &overlapping).is_err());
    }

    #[test]
    fn single_distance_split_has_empty_test() {
        let cfg = DatasetConfig {
            distances: vec![47.0],
            ..tiny_cfg()
        };
        let ds = generate_dataset(&cfg, 1).unwrap();
        let (train, test) =
            split_by_distance(&ds, &SplitSpec::train_on(&ds, 47.0).unwrap()).unwrap();
        assert_eq!(train.len(), ds.len());
        assert!(test.is_empty());
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&tiny_cfg(), 3).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert!(dir.path().join("1/62.0/10.0/120.000.pgm").exists());
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.distances, ds.distances);
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.cond, b.cond);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        let streamed = tempfile::tempdir().unwrap();
        assert_eq!(
            generate_to_dir(&tiny_cfg(), 3, streamed.path()).unwrap(),
            12
        );
        assert_eq!(
            fs::read(streamed.path().join(MANIFEST)).unwrap(),
            fs::read(dir.path().join(MANIFEST)).unwrap()
        );
    }

    #[test]
    fn crop_geometry() {
        assert_eq!(crop_side(160, 120), 110);
        assert_eq!(crop_side(48, 48), 44);
        let img = GrayImage::filled(160, 120, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_train(&img, &mut rng, 224).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        let small = GrayImage::filled(48, 48, 0.5);
        let out = augment_train(&small, &mut rng, 32).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
    }

    #[test]
    fn degenerate_augmentation_is_plain_resize() {
        // crop side equals the image side, so the only offset is (0, 0)
        let data: Vec<f64> = (0..11 * 11).map(|i| (i % 13) as f64 / 13.0).collect();
        let img = GrayImage::new(11, 11, data).unwrap();
        assert_eq!(crop_side(11, 11), 10);
        let img12 = resize_bilinear(&img, 12, 12).unwrap();
        assert_eq!(crop_side(12, 12), 11);
        let out = augment_with(&img12, false, 0, 0, 8).unwrap();
        let expected = resize_bilinear(&crop(&img12, 0, 0, 11, 11).unwrap(), 8, 8).unwrap();
        assert_eq!(out, expected);
        let one = GrayImage::filled(1, 1, 0.3);
        assert_eq!(crop_side(1, 1), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            augment_train(&one, &mut rng, 4).unwrap(),
            resize_bilinear(&one, 4, 4).unwrap()
        );
        let flipped = augment_with(&img12, true, 1, 1, 11).unwrap();
        assert_eq!(flipped, crop(&hflip(&img12), 1, 1, 11, 11).unwrap());
    }

    #[test]
    fn eval_transform_centre_crop() {
        let data: Vec<f64> = (0..160 * 120).map(|i| (i % 160) as f64 / 160.0).collect();
        let img = GrayImage::new(160, 120, data).unwrap();
        let out = eval_transform(&img, 224).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        let centre = crop(&img, 20, 0, 120, 120).unwrap();
        assert_eq!(out, resize_bilinear(&centre, 224, 224).unwrap());
        assert_eq!(out, eval_transform(&img, 224).unwrap());
        let sq = GrayImage::filled(20, 20, 0.2);
        assert_eq!(eval_transform(&sq, 20).unwrap(), sq);
    }

    #[test]
    fn batches_cover_epoch_once() {
        let samples: Vec<Sample> = (0..130)
            .map(|i| Sample {
                cond: ViewCondition::new(i % 4, 40.0, 10.0, i as f64),
                image: Arc::new(GrayImage::filled(2, 2, 0.0)),
            })
            .collect();
        let run = |seed: u64| -> Vec<Vec<usize>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            batch_iter(&samples, 64, &mut rng, |s, _| {
                Ok(Tensor::from_image(&s.image))
            })
            .unwrap()
            .map(|b| b.unwrap().indices)
            .collect()
        };
        let batches = run(7);
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
        assert_eq!(batches, run(7));
        assert_ne!(batches, run(8));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty: Vec<Sample> = Vec::new();
        assert!(matches!(
            batch_iter(&empty, 64, &mut rng, |s, _| Ok(Tensor::from_image(
                &s.image
            ))),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn epochs_reshuffle() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample {
                cond: ViewCondition::new(0, 40.0, 10.0, i as f64),
                image: Arc::new(GrayImage::filled(1, 1, 0.0)),
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let epoch = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            batch_iter(&samples, 8, rng, |s, _| Ok(Tensor::from_image(&s.image)))
                .unwrap()
                .flat_map(|b| b.unwrap().indices)
                .collect()
        };
        let first = epoch(&mut rng);
        let second = epoch(&mut rng);
        assert_ne!(first, second);
    }
}
