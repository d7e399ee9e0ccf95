//! Spherical image geometry.
//!
//! Conventions used throughout the crate:
//! - azimuth 0° looks at the north view, azimuth grows toward the west view
//!   (`+x`), `+y` is up and `+z` is north;
//! - equirect `u` grows with azimuth and is 0.5 at north, `v` is 0 at the
//!   zenith and 1 at the nadir;
//! - a face or view image has `u` growing toward higher azimuth and `v`
//!   growing downward, so the north, west, south and east faces concatenate
//!   left to right into a contiguous horizontal band;
//! - all sampling is bilinear with pixel centers at half-integers. Equirect
//!   lookups wrap horizontally and clamp vertically; face lookups clamp.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{bilerp, Image};
use crate::{Error, Result};

/// A unit vector on the viewing sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    x: f64,
    y: f64,
    z: f64,
}

impl Direction {
    /// Normalize an arbitrary non-zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidArgument(format!("cannot normalize ({x}, {y}, {z})")));
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    fn from_unnormalized(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Self {
            x: v[0] / n,
            y: v[1] / n,
            z: v[2] / n,
        }
    }

    pub fn from_angles(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let (sa, ca) = sin_cos_deg(azimuth_deg);
        let (se, ce) = sin_cos_deg(elevation_deg);
        Self {
            x: sa * ce,
            y: se,
            z: ca * ce,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Angle to another direction in radians, stable for tiny angles.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let c = [
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        ];
        let cross = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        cross.atan2(self.dot(other))
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.x.atan2(self.z).to_degrees()
    }

    pub fn elevation_deg(&self) -> f64 {
        self.y.atan2(self.x.hypot(self.z)).to_degrees()
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// `tan(fov / 2)`, exactly 1 for a 90° field of view.
pub fn half_fov_tan(fov_deg: f64) -> f64 {
    if fov_deg == 90.0 {
        1.0
    } else {
        (fov_deg.to_radians() * 0.5).tan()
    }
}

pub fn dir_to_equirect_uv(d: Direction) -> (f64, f64) {
    let horiz = d.x.hypot(d.z);
    if horiz < 1e-15 {
        return (0.0, if d.y > 0.0 { 0.0 } else { 1.0 });
    }
    let mut u = d.x.atan2(d.z) / std::f64::consts::TAU + 0.5;
    if u >= 1.0 {
        u -= 1.0;
    }
    let v = 0.5 - d.y.atan2(horiz) / std::f64::consts::PI;
    (u, v)
}

pub fn equirect_uv_to_dir(u: f64, v: f64) -> Direction {
    let az = (u - 0.5) * std::f64::consts::TAU;
    let el = (0.5 - v) * std::f64::consts::PI;
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Direction {
        x: sa * ce,
        y: se,
        z: ca * ce,
    }
}

/// Orthonormal camera frame: `forward` is the principal ray, `right` the
/// direction of growing image `u`, `up` the direction of shrinking `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraBasis {
    pub forward: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
}

impl CameraBasis {
    pub fn from_yaw_pitch(yaw_deg: f64, pitch_deg: f64) -> Self {
        let (sy, cy) = sin_cos_deg(yaw_deg);
        let (sp, cp) = sin_cos_deg(pitch_deg);
        Self {
            forward: [sy * cp, sp, cy * cp],
            right: [cy, 0.0, -sy],
            up: [-sy * sp, cp, -cy * sp],
        }
    }

    /// Ray through image coordinates `(u, v) ∈ [0,1]²` for a square pinhole
    /// camera with `tan(fov/2) = half_tan`.
    #[inline]
    pub fn ray(&self, half_tan: f64, u: f64, v: f64) -> Direction {
        let a = half_tan * (2.0 * u - 1.0);
        let b = half_tan * (1.0 - 2.0 * v);
        let f = self.forward;
        let r = self.right;
        let up = self.up;
        Direction::from_unnormalized([
            f[0] + a * r[0] + b * up[0],
            f[1] + a * r[1] + b * up[1],
            f[2] + a * r[2] + b * up[2],
        ])
    }

    /// Inverse of [`CameraBasis::ray`] for a 90° camera; `None` behind it.
    #[inline]
    fn project(&self, d: &Direction) -> Option<(f64, f64)> {
        let dot = |w: [f64; 3]| d.x * w[0] + d.y * w[1] + d.z * w[2];
        let depth = dot(self.forward);
        if depth <= 0.0 {
            return None;
        }
        let a = dot(self.right) / depth;
        let b = dot(self.up) / depth;
        Some(((a + 1.0) * 0.5, (1.0 - b) * 0.5))
    }
}

/// Cube faces in their fixed serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceKey {
    North,
    West,
    South,
    East,
    Up,
    Down,
}

impl FaceKey {
    pub const ALL: [FaceKey; 6] = [
        FaceKey::North,
        FaceKey::West,
        FaceKey::South,
        FaceKey::East,
        FaceKey::Up,
        FaceKey::Down,
    ];

    /// The four horizontal faces, in compass-rose input order.
    pub const SIDES: [FaceKey; 4] = [FaceKey::North, FaceKey::West, FaceKey::South, FaceKey::East];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FaceKey::North => "north",
            FaceKey::West => "west",
            FaceKey::South => "south",
            FaceKey::East => "east",
            FaceKey::Up => "up",
            FaceKey::Down => "down",
        }
    }

    /// Yaw and pitch of the face's principal ray in degrees.
    pub fn yaw_pitch(self) -> (f64, f64) {
        match self {
            FaceKey::North => (0.0, 0.0),
            FaceKey::West => (90.0, 0.0),
            FaceKey::South => (180.0, 0.0),
            FaceKey::East => (270.0, 0.0),
            FaceKey::Up => (0.0, 90.0),
            FaceKey::Down => (0.0, -90.0),
        }
    }

    pub fn basis(self) -> CameraBasis {
        let (yaw, pitch) = self.yaw_pitch();
        CameraBasis::from_yaw_pitch(yaw, pitch)
    }

    /// The face a direction exits the cube through.
    pub fn for_direction(d: &Direction) -> FaceKey {
        let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
        if az >= ax && az >= ay {
            if d.z > 0.0 {
                FaceKey::North
            } else {
                FaceKey::South
            }
        } else if ax >= ay {
            if d.x > 0.0 {
                FaceKey::West
            } else {
                FaceKey::East
            }
        } else if d.y > 0.0 {
            FaceKey::Up
        } else {
            FaceKey::Down
        }
    }
}

impl std::str::FromStr for FaceKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FaceKey::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown face `{s}`")))
    }
}

pub fn face_uv_to_dir(face: FaceKey, u: f64, v: f64, fov_deg: f64) -> Result<Direction> {
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(Error::InvalidArgument(format!(
            "face fov must lie in (0°, 180°), got {fov_deg}"
        )));
    }
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "face coordinates ({u}, {v}) outside [0,1]²"
        )));
    }
    Ok(face.basis().ray(half_fov_tan(fov_deg), u, v))
}

/// Tag recording which value range an image lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRange {
    /// `[0, 255]`
    Unit8,
    /// `[-1, 1]`
    Normalized,
}

/// A full-sphere equirectangular image with `width = 2 · height`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectPanorama {
    image: Image,
    range: ValueRange,
}

impl EquirectPanorama {
    pub fn new(image: Image, range: ValueRange) -> Result<Self> {
        if image.height() < 2 || image.width() != 2 * image.height() {
            return Err(Error::InvalidArgument(format!(
                "equirect panorama must be W = 2H, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        if range == ValueRange::Normalized && image.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "normalized panorama has values outside [-1, 1]".into(),
            ));
        }
        Ok(Self { image, range })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn into_image(self) -> Image {
        self.image
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Bilinear lookup at equirect coordinates, wrapping in azimuth.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> [f32; 3] {
        let w = self.image.width();
        let h = self.image.height();
        let px = u * w as f64 - 0.5;
        let py = v * h as f64 - 0.5;
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = (px - x0) as f32;
        let fy = (py - y0) as f32;
        let xa = (x0 as i64).rem_euclid(w as i64) as usize;
        let xb = (xa + 1) % w;
        let clamp_y = |v: f64| v.clamp(0.0, (h - 1) as f64) as usize;
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        bilerp(
            self.image.get(xa, ya),
            self.image.get(xb, ya),
            self.image.get(xa, yb),
            self.image.get(xb, yb),
            fx,
            fy,
        )
    }

    /// Direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Direction {
        equirect_uv_to_dir(
            (x as f64 + 0.5) / self.width() as f64,
            (y as f64 + 0.5) / self.height() as f64,
        )
    }
}

/// Six square faces in [`FaceKey::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeMapFaces {
    faces: Vec<Image>,
    face_size: usize,
    range: ValueRange,
}

impl CubeMapFaces {
    pub fn new(faces: Vec<Image>, range: ValueRange) -> Result<Self> {
        if faces.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "a cube map has 6 faces, got {}",
                faces.len()
            )));
        }
        let face_size = faces[0].width();
        if face_size < 2 || faces.iter().any(|f| f.width() != face_size || f.height() != face_size) {
            return Err(Error::ShapeMismatch(
                "cube faces must be square, at least 2 px, and share one size".into(),
            ));
        }
        Ok(Self {
            faces,
            face_size,
            range,
        })
    }

    pub fn face(&self, key: FaceKey) -> &Image {
        &self.faces[key.index()]
    }

    pub fn faces(&self) -> &[Image] {
        &self.faces
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }
}

/// Four square views in north, west, south, east order.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    views: [Image; 4],
    fov_deg: Option<f64>,
}

impl ViewSet {
    pub fn new(views: [Image; 4], fov_deg: Option<f64>) -> Result<Self> {
        let k = views[0].width();
        if k == 0 || views.iter().any(|v| v.width() != k || v.height() != k) {
            return Err(Error::ShapeMismatch(
                "the four views must be square and identically sized".into(),
            ));
        }
        if let Some(f) = fov_deg {
            check_embed_fov(f)?;
        }
        Ok(Self { views, fov_deg })
    }

    pub fn views(&self) -> &[Image; 4] {
        &self.views
    }

    pub fn view(&self, face: FaceKey) -> &Image {
        &self.views[face.index()]
    }

    pub fn view_size(&self) -> usize {
        self.views[0].width()
    }

    pub fn fov_deg(&self) -> Option<f64> {
        self.fov_deg
    }

    pub fn with_fov(mut self, fov_deg: Option<f64>) -> Result<Self> {
        if let Some(f) = fov_deg {
            check_embed_fov(f)?;
        }
        self.fov_deg = fov_deg;
        Ok(self)
    }
}

fn render_with_basis(p: &EquirectPanorama, basis: &CameraBasis, half_tan: f64, size: usize) -> Image {
    let mut out = Image::new(size, size);
    let inv = 1.0 / size as f64;
    out.data_mut()
        .par_chunks_mut(size * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let v = (y as f64 + 0.5) * inv;
            for x in 0..size {
                let u = (x as f64 + 0.5) * inv;
                let (eu, ev) = dir_to_equirect_uv(basis.ray(half_tan, u, v));
                row[x * 3..x * 3 + 3].copy_from_slice(&p.sample(eu, ev));
            }
        });
    out
}

pub fn equirect_to_cubemap(p: &EquirectPanorama, face_size: usize) -> Result<CubeMapFaces> {
    if face_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "face size must be at least 2, got {face_size}"
        )));
    }
    let faces = FaceKey::ALL
        .iter()
        .map(|k| render_with_basis(p, &k.basis(), half_fov_tan(90.0), face_size))
        .collect();
    CubeMapFaces::new(faces, p.range())
}

/// Face and continuous face-pixel coordinates hit by a direction.
#[inline]
fn cube_lookup(d: &Direction, face_size: usize) -> (FaceKey, f64, f64) {
    let key = FaceKey::for_direction(d);
    let (u, v) = key
        .basis()
        .project(d)
        .expect("the selected face is always in front of the ray");
    (key, u * face_size as f64, v * face_size as f64)
}

pub fn cubemap_to_equirect(f: &CubeMapFaces, height: usize) -> Result<EquirectPanorama> {
    if height < 2 {
        return Err(Error::InvalidArgument(format!(
            "equirect height must be at least 2, got {height}"
        )));
    }
    let width = 2 * height;
    let mut img = Image::new(width, height);
    img.data_mut()
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let v = (y as f64 + 0.5) / height as f64;
            for x in 0..width {
                let d = equirect_uv_to_dir((x as f64 + 0.5) / width as f64, v);
                let (key, fx, fy) = cube_lookup(&d, f.face_size);
                row[x * 3..x * 3 + 3].copy_from_slice(&f.face(key).sample_clamped(fx, fy));
            }
        });
    EquirectPanorama::new(img, f.range())
}

/// Equirect mask of pixels whose bilinear lookup touches at least one
/// covered face pixel with non-zero weight. `coverage` holds one row-major
/// boolean mask per face in [`FaceKey::ALL`] order.
pub fn cubemap_coverage_to_equirect(coverage: &[Vec<bool>], face_size: usize, height: usize) -> Vec<bool> {
    let width = 2 * height;
    let mut out = vec![false; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let v = (y as f64 + 0.5) / height as f64;
        for (x, slot) in row.iter_mut().enumerate() {
            let d = equirect_uv_to_dir((x as f64 + 0.5) / width as f64, v);
            let (key, fx, fy) = cube_lookup(&d, face_size);
            let mask = &coverage[key.index()];
            let px = fx - 0.5;
            let py = fy - 0.5;
            let x0 = px.floor();
            let y0 = py.floor();
            let wx = (px - x0) as f32;
            let wy = (py - y0) as f32;
            let cl = |v: f64| v.clamp(0.0, (face_size - 1) as f64) as usize;
            let taps = [
                (cl(x0), cl(y0), wx < 1.0 && wy < 1.0),
                (cl(x0 + 1.0), cl(y0), wx > 0.0 && wy < 1.0),
                (cl(x0), cl(y0 + 1.0), wx < 1.0 && wy > 0.0),
                (cl(x0 + 1.0), cl(y0 + 1.0), wx > 0.0 && wy > 0.0),
            ];
            *slot = taps.iter().any(|&(tx, ty, live)| live && mask[ty * face_size + tx]);
        }
    });
    out
}

pub fn render_view(p: &EquirectPanorama, yaw_deg: f64, pitch_deg: f64, fov_deg: f64, out_size: usize) -> Result<Image> {
    if !(fov_deg > 0.0 && fov_deg <= 120.0) {
        return Err(Error::InvalidArgument(format!(
            "view fov must lie in (0°, 120°], got {fov_deg}"
        )));
    }
    if out_size == 0 {
        return Err(Error::InvalidArgument("view size must be positive".into()));
    }
    Ok(render_with_basis(
        p,
        &CameraBasis::from_yaw_pitch(yaw_deg, pitch_deg),
        half_fov_tan(fov_deg),
        out_size,
    ))
}

/// How a view's field of view maps to the side length of its block inside
/// a 90° face.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovScaleLaw {
    /// `s = S · tan(fov/2) / tan(45°)`: exact perspective containment.
    #[default]
    Tangent,
    /// `s = S · fov / 90°`
    Linear,
}

impl FovScaleLaw {
    pub fn block_size(self, fov_deg: f64, face_size: usize) -> Result<usize> {
        check_embed_fov(fov_deg)?;
        let ratio = match self {
            FovScaleLaw::Tangent => half_fov_tan(fov_deg) / half_fov_tan(90.0),
            FovScaleLaw::Linear => fov_deg / 90.0,
        };
        Ok(((face_size as f64 * ratio).round() as usize).min(face_size))
    }
}

impl std::str::FromStr for FovScaleLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangent" => Ok(FovScaleLaw::Tangent),
            "linear" => Ok(FovScaleLaw::Linear),
            other => Err(Error::InvalidArgument(format!("unknown fov scale law `{other}`"))),
        }
    }
}

impl std::fmt::Display for FovScaleLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FovScaleLaw::Tangent => "tangent",
            FovScaleLaw::Linear => "linear",
        })
    }
}

fn check_embed_fov(fov_deg: f64) -> Result<()> {
    if fov_deg > 0.0 && fov_deg <= 90.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "embedded view fov must lie in (0°, 90°], got {fov_deg}"
        )))
    }
}

/// A view placed in the center of a cube face.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedFace {
    pub face: Image,
    /// Row-major, `true` inside the view block.
    pub coverage: Vec<bool>,
    /// Side length `s` of the view block.
    pub block: usize,
    /// Offset of the block's top-left corner on both axes.
    pub offset: usize,
}

impl EmbeddedFace {
    pub fn fill_count(&self) -> usize {
        self.coverage.iter().filter(|c| !**c).count()
    }
}

pub fn embed_view_with_fov(
    img: &Image,
    fov_deg: f64,
    face_size: usize,
    fill_value: f32,
    law: FovScaleLaw,
) -> Result<EmbeddedFace> {
    if img.width() != img.height() || img.width() == 0 {
        return Err(Error::ShapeMismatch("embedded views must be square".into()));
    }
    let block = law.block_size(fov_deg, face_size)?;
    let offset = (face_size - block) / 2;
    let mut face = Image::filled(face_size, face_size, [fill_value; 3]);
    let mut coverage = vec![false; face_size * face_size];
    if block > 0 {
        let scaled = img.resize(block, block);
        for y in 0..block {
            for x in 0..block {
                face.set(offset + x, offset + y, scaled.get(x, y));
                coverage[(offset + y) * face_size + offset + x] = true;
            }
        }
    }
    Ok(EmbeddedFace {
        face,
        coverage,
        block,
        offset,
    })
}
