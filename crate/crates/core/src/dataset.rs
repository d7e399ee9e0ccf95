//! Training samples from equirectangular panoramas: four compass views at a
//! shared random FOV, the three-level ground-truth pyramid, and the on-disk
//! manifest.
//!
//! Layout written by [`build_dataset`]:
//!
//! ```text
//! out/manifest.jsonl
//! out/{train,test}/<id>/view_{n,w,s,e}.png
//! out/{train,test}/<id>/gt_{s,m,l}.png
//! ```
//!
//! The manifest is JSON Lines: one header object, then one record per line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fov::FovClassSpec;
use crate::geometry::{render_view, EquirectPanorama, FaceKey, FovScaleLaw, ValueRange, ViewSet};
use crate::image::Image;
use crate::{Error, Result, Stage};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MANIFEST_FORMAT: &str = "pano360-manifest/1";
const VIEW_FILES: [&str; 4] = ["view_n.png", "view_w.png", "view_s.png", "view_e.png"];

/// `[0, 255]` → `[-1, 1]`
pub fn normalize(img: &Image) -> Image {
    img.map(|v| v / 127.5 - 1.0)
}

/// `[-1, 1]` → `[0, 255]`
pub fn denormalize(img: &Image) -> Image {
    img.map(|v| (v + 1.0) * 127.5)
}

/// Normalized ground truth at the three training resolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePyramid {
    pub small: Image,
    pub medium: Image,
    pub large: Image,
}

impl ScalePyramid {
    pub fn level(&self, stage: Stage) -> &Image {
        match stage {
            Stage::Small => &self.small,
            Stage::Medium => &self.medium,
            Stage::Large => &self.large,
        }
    }
}

/// Area-downsampled 512×1024, 256×512 and 128×256 levels. Panoramas of any
/// other size are resampled to 512×1024 first.
pub fn make_pyramid(p: &EquirectPanorama) -> ScalePyramid {
    let clamp = |img: Image| match p.range() {
        ValueRange::Normalized => img.map(|v| v.clamp(-1.0, 1.0)),
        ValueRange::Unit8 => img,
    };
    let (h, w) = (Stage::Large.height(), 2 * Stage::Large.height());
    let large = clamp(p.image().resize(w, h));
    let medium = clamp(large.resize_area(w / 2, h / 2));
    let small = clamp(large.resize_area(w / 4, h / 4));
    ScalePyramid { small, medium, large }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// One generated sample, in memory.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub id: String,
    pub views: ViewSet,
    pub fov_deg: f64,
    pub gt: ScalePyramid,
    pub split: Split,
}

/// Render the four compass views at `fov_deg` and the ground-truth pyramid.
/// `p` may be in either value range; the sample is always normalized.
pub fn generate_sample(
    p: &EquirectPanorama,
    fov_deg: f64,
    view_size: usize,
    id: &str,
    split: Split,
) -> Result<SampleRecord> {
    let norm = match p.range() {
        ValueRange::Unit8 => {
            EquirectPanorama::new(normalize(p.image()).map(|v| v.clamp(-1.0, 1.0)), ValueRange::Normalized)?
        }
        ValueRange::Normalized => p.clone(),
    };
    let views = FaceKey::SIDES.map(|k| {
        let (yaw, pitch) = k.yaw_pitch();
        render_view(&norm, yaw, pitch, fov_deg, view_size)
    });
    let [n, w, s, e] = views;
    let views = ViewSet::new([n?, w?, s?, e?], Some(fov_deg))?;
    Ok(SampleRecord {
        id: id.to_string(),
        views,
        fov_deg,
        gt: make_pyramid(&norm),
        split,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub file: String,
    pub reason: String,
}

/// First line of the manifest: how the records were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub seed: u64,
    pub split_ratio: f64,
    pub fov_min: f64,
    pub fov_max: f64,
    pub fov_classes: FovClassSpec,
    pub fov_law: FovScaleLaw,
    pub fill_value: f32,
    pub view_size: usize,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPaths {
    pub s: String,
    pub m: String,
    pub l: String,
}

/// One sample on disk. Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub fov_deg: f64,
    pub fov_class: usize,
    pub views: [String; 4],
    pub gt: GtPaths,
}

impl ManifestRecord {
    pub fn gt_path(&self, stage: Stage) -> &str {
        match stage {
            Stage::Small => &self.gt.s,
            Stage::Medium => &self.gt.m,
            Stage::Large => &self.gt.l,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.header)?;
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Read a manifest file, or `manifest.jsonl` inside a directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path.push(MANIFEST_FILE);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::Data(format!("{}: bad manifest header: {e}", path.display())))?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::Data(format!(
                "{}: unsupported manifest format `{}`",
                path.display(),
                header.format
            )));
        }
        let records = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Data(format!("{}: record {}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { header, records, root })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    fn load_image(&self, rel: &str) -> Result<Image> {
        let path = self.root.join(rel);
        if !path.exists() {
            return Err(Error::Data(format!("missing file {}", path.display())));
        }
        Image::load(&path)
    }

    /// The record's views, normalized, tagged with the recorded FOV.
    pub fn load_views(&self, r: &ManifestRecord) -> Result<ViewSet> {
        let v: Vec<Image> = r
            .views
            .iter()
            .map(|p| self.load_image(p).map(|i| normalize(&i)))
            .collect::<Result<_>>()?;
        let [n, w, s, e]: [Image; 4] = v.try_into().expect("four views");
        ViewSet::new([n, w, s, e], Some(r.fov_deg))
    }

    /// Ground truth at `stage` in `[0, 255]`.
    pub fn load_gt(&self, r: &ManifestRecord, stage: Stage) -> Result<Image> {
        let img = self.load_image(r.gt_path(stage))?;
        let h = stage.height();
        if img.height() != h || img.width() != 2 * h {
            return Err(Error::Data(format!(
                "ground truth for `{}` at the {stage} scale is {}x{}, expected {}x{h}",
                r.id,
                img.width(),
                img.height(),
                2 * h
            )));
        }
        Ok(img)
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub src: PathBuf,
    pub out: PathBuf,
    pub split_ratio: f64,
    pub fov_min: f64,
    pub fov_max: f64,
    pub seed: u64,
    pub view_size: usize,
    pub fov_classes: FovClassSpec,
    pub fov_law: FovScaleLaw,
    pub fill_value: f32,
}

impl BuildOptions {
    pub fn new(src: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            src: src.into(),
            out: out.into(),
            split_ratio: 0.8,
            fov_min: 45.0,
            fov_max: 75.0,
            seed: 0,
            view_size: 256,
            fov_classes: FovClassSpec::default(),
            fov_law: FovScaleLaw::Tangent,
            fill_value: 0.0,
        }
    }

    fn validate(&self) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::InvalidArgument(format!(
                "split ratio must lie in [0, 1], got {}",
                self.split_ratio
            )));
        }
        if !(self.fov_min > 0.0 && self.fov_min <= self.fov_max && self.fov_max <= 90.0) {
            return Err(Error::InvalidArgument(format!(
                "fov range [{}, {}] must satisfy 0 < min <= max <= 90",
                self.fov_min, self.fov_max
            )));
        }
        if self.view_size < 2 {
            return Err(Error::InvalidArgument("view size must be at least 2".into()));
        }
        if !(-1.0..=1.0).contains(&self.fill_value) {
            return Err(Error::InvalidArgument("fill value must lie in [-1, 1]".into()));
        }
        let centers: Vec<f64> = self
            .fov_classes
            .bin_centers()
            .iter()
            .copied()
            .filter(|c| (self.fov_min..=self.fov_max).contains(c))
            .collect();
        if centers.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no fov class center lies in [{}, {}]",
                self.fov_min, self.fov_max
            )));
        }
        Ok(centers)
    }
}

/// Nearest allowed center, lower one on ties.
fn snap_to(centers: &[f64], fov: f64) -> f64 {
    let mut best = centers[0];
    for &c in centers {
        if (c - fov).abs() < (best - fov).abs() {
            best = c;
        }
    }
    best
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sanitize(stem: &str) -> String {
    let s: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "pano".into()
    } else {
        s
    }
}

/// Build the dataset: deterministic shuffle and split by `seed`, one FOV per
/// panorama drawn uniformly from the range and snapped to the nearest class
/// center inside it. Unreadable or non-2:1 files are skipped and listed in
/// the manifest header.
pub fn build_dataset(opts: &BuildOptions) -> Result<DatasetManifest> {
    let centers = opts.validate()?;
    let entries = std::fs::read_dir(&opts.src).map_err(|e| Error::io(&opts.src, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG or JPEG files in {}", opts.src.display())));
    }

    let loaded: Vec<(PathBuf, Result<EquirectPanorama>)> = files
        .into_par_iter()
        .map(|f| {
            let p = Image::load(&f).and_then(|img| EquirectPanorama::new(img, ValueRange::Unit8));
            (f, p)
        })
        .collect();
    let mut skipped = Vec::new();
    let mut good = Vec::new();
    for (f, p) in loaded {
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match p {
            Ok(p) => good.push((name, f, p)),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                skipped.push(SkippedFile {
                    file: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    if good.is_empty() {
        return Err(Error::Data(format!(
            "no readable equirect panoramas in {}",
            opts.src.display()
        )));
    }

    // unique ids in sorted file order, before shuffling
    let mut seen = BTreeSet::new();
    let mut items: Vec<(String, EquirectPanorama)> = good
        .into_iter()
        .map(|(_, f, p)| {
            let base = sanitize(&f.file_stem().unwrap_or_default().to_string_lossy());
            let mut id = base.clone();
            let mut k = 1;
            while !seen.insert(id.clone()) {
                k += 1;
                id = format!("{base}_{k}");
            }
            (id, p)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    items.shuffle(&mut rng);
    let n_train = (items.len() as f64 * opts.split_ratio).round() as usize;
    let plan: Vec<(String, EquirectPanorama, Split, f64)> = items
        .into_iter()
        .enumerate()
        .map(|(i, (id, p))| {
            let raw = if opts.fov_max > opts.fov_min {
                rng.random_range(opts.fov_min..=opts.fov_max)
            } else {
                opts.fov_min
            };
            let split = if i < n_train { Split::Train } else { Split::Test };
            (id, p, split, snap_to(&centers, raw))
        })
        .collect();

    std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    let records = plan
        .par_iter()
        .map(|(id, p, split, fov)| {
            let sample = generate_sample(p, *fov, opts.view_size, id, *split)?;
            let rel = format!("{}/{}", split.name(), id);
            let dir = opts.out.join(&rel);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (img, file) in sample.views.views().iter().zip(VIEW_FILES) {
                denormalize(img).save(dir.join(file))?;
            }
            for stage in Stage::ALL {
                denormalize(sample.gt.level(stage)).save(dir.join(format!("gt_{}.png", stage.suffix())))?;
            }
            Ok(ManifestRecord {
                id: id.clone(),
                split: *split,
                fov_deg: *fov,
                fov_class: opts.fov_classes.class_of(*fov),
                views: VIEW_FILES.map(|f| format!("{rel}/{f}")),
                gt: GtPaths {
                    s: format!("{rel}/gt_s.png"),
                    m: format!("{rel}/gt_m.png"),
                    l: format!("{rel}/gt_l.png"),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        header: ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            seed: opts.seed,
            split_ratio: opts.split_ratio,
            fov_min: opts.fov_min,
            fov_max: opts.fov_max,
            fov_classes: opts.fov_classes.clone(),
            fov_law: opts.fov_law,
            fill_value: opts.fill_value,
            view_size: opts.view_size,
            skipped,
        },
        records,
        root: opts.out.clone(),
    };
    let path = opts.out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
