//! Procedural outdoor panoramas: sky with clouds and a sun, a mountain
//! ridge and textured ground. Every feature is a function of the view
//! direction, so the images wrap seamlessly and have no pole artifacts.
//! Used for test corpora and the CLI's `synth` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{equirect_uv_to_dir, Direction, EquirectPanorama, ValueRange};
use crate::image::Image;
use crate::{Error, Result};

/// Seeded 3-D value noise on the integer lattice.
#[derive(Clone, Debug)]
struct Noise {
    salt: u64,
}

impl Noise {
    fn lattice(&self, x: i64, y: i64, z: i64) -> f64 {
        // splitmix-style integer hash
        let mut h = self.salt
            ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn value(&self, p: [f64; 3]) -> f64 {
        let f = p.map(f64::floor);
        let t = [p[0] - f[0], p[1] - f[1], p[2] - f[2]].map(|t| t * t * (3.0 - 2.0 * t));
        let (x, y, z) = (f[0] as i64, f[1] as i64, f[2] as i64);
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                        * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                        * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                    acc += w * self.lattice(x + dx, y + dy, z + dz);
                }
            }
        }
        acc
    }

    /// Fractal sum in `[0, 1]`.
    fn fbm(&self, p: [f64; 3], octaves: usize) -> f64 {
        let (mut sum, mut amp, mut norm, mut freq) = (0.0, 1.0, 0.0, 1.0);
        for _ in 0..octaves {
            sum += amp * self.value(p.map(|v| v * freq));
            norm += amp;
            amp *= 0.5;
            freq *= 2.03;
        }
        sum / norm
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Palette and layout drawn once per scene.
#[derive(Clone, Debug)]
struct Scene {
    noise: Noise,
    zenith: [f64; 3],
    horizon: [f64; 3],
    rock: [f64; 3],
    ground: [f64; 3],
    ground_alt: [f64; 3],
    sun: Direction,
    ridge_base: f64,
    ridge_amp: f64,
    cloud_cover: f64,
}

impl Scene {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut color = |lo: [f64; 3], hi: [f64; 3]| [0, 1, 2].map(|i| rng.random_range(lo[i]..hi[i]));
        let zenith = color([20.0, 50.0, 120.0], [70.0, 110.0, 200.0]);
        let horizon = color([150.0, 160.0, 170.0], [230.0, 220.0, 240.0]);
        let rock = color([60.0, 60.0, 60.0], [130.0, 120.0, 140.0]);
        let ground = color([40.0, 70.0, 20.0], [120.0, 140.0, 70.0]);
        let ground_alt = color([90.0, 70.0, 40.0], [170.0, 140.0, 100.0]);
        Self {
            noise: Noise { salt: rng.random() },
            zenith,
            horizon,
            rock,
            ground,
            ground_alt,
            sun: Direction::from_angles(rng.random_range(-180.0..180.0), rng.random_range(15.0..60.0)),
            ridge_base: rng.random_range(0.02..0.08),
            ridge_amp: rng.random_range(0.1..0.35),
            cloud_cover: rng.random_range(0.35..0.65),
        }
    }

    fn shade(&self, d: Direction) -> [f64; 3] {
        let [x, y, z] = d.to_array();
        let n = &self.noise;
        // ridge height depends on azimuth only (noise on the horizontal circle)
        let h = (x * x + z * z).sqrt().max(1e-12);
        let ring = [x / h * 1.7, 0.0, z / h * 1.7];
        let ridge = self.ridge_base + self.ridge_amp * n.fbm([ring[0] + 11.0, 3.0, ring[2] - 5.0], 5).powf(1.5);
        if y > ridge {
            let mut c = lerp3(self.horizon, self.zenith, smoothstep(0.0, 0.8, y));
            let cloud = n.fbm([x * 2.5 + 40.0, y * 2.5, z * 2.5], 5);
            let k = smoothstep(self.cloud_cover, self.cloud_cover + 0.2, cloud) * smoothstep(ridge, ridge + 0.3, y);
            c = lerp3(c, [235.0, 235.0, 240.0], 0.85 * k);
            let glow = d.dot(&self.sun).max(0.0).powi(64);
            lerp3(c, [255.0, 245.0, 210.0], glow)
        } else if y > 0.0 {
            let tex = n.fbm([x * 12.0, y * 12.0 + 7.0, z * 12.0], 4);
            let snow = smoothstep(0.75 * ridge, ridge, y) * smoothstep(0.15, 0.25, ridge);
            let c = lerp3(
                self.rock,
                [0.8 * self.rock[0], 0.8 * self.rock[1], 0.85 * self.rock[2]],
                tex,
            );
            lerp3(c, [225.0, 228.0, 235.0], 0.8 * snow * tex)
        } else {
            let patches = n.fbm([x * 4.0 - 20.0, y * 4.0, z * 4.0], 4);
            let grain = n.fbm([x * 24.0, y * 24.0 - 9.0, z * 24.0], 3);
            let c = lerp3(self.ground, self.ground_alt, smoothstep(0.4, 0.6, patches));
            let haze = smoothstep(-0.25, 0.0, y);
            lerp3(c.map(|v| v * (0.85 + 0.3 * grain)), self.horizon, 0.5 * haze)
        }
    }
}

/// A `height × 2·height` panorama in `[0, 255]`, fully determined by `seed`.
pub fn natural_panorama(height: usize, seed: u64) -> Result<EquirectPanorama> {
    if height < 2 {
        return Err(Error::InvalidArgument(format!("panorama height {height} is too small")));
    }
    let scene = Scene::new(seed);
    let (w, h) = (2 * height, height);
    let img = Image::from_fn(w, h, |x, y| {
        let d = equirect_uv_to_dir((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        scene.shade(d).map(|v| v.clamp(0.0, 255.0).round() as f32)
    });
    EquirectPanorama::new(img, ValueRange::Unit8)
}

/// `count` panoramas written as `pano_###.png` into `dir`, seeds `seed..`.
pub fn write_corpus(dir: &std::path::Path, count: usize, height: usize, seed: u64) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let p = dir.join(format!("pano_{i:03}.png"));
            natural_panorama(height, seed.wrapping_add(i as u64))?
                .image()
                .save(&p)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = natural_panorama(32, 1).unwrap();
        assert_eq!(a.image(), natural_panorama(32, 1).unwrap().image());
        assert_ne!(a.image(), natural_panorama(32, 2).unwrap().image());
        assert_eq!((a.width(), a.height()), (64, 32));
    }

    #[test]
    fn integer_valued_and_varied() {
        let p = natural_panorama(64, 3).unwrap();
        let d = p.image().data();
        assert!(d.iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(var.sqrt() > 20.0, "std {}", var.sqrt());
    }

    #[test]
    fn wraps_horizontally() {
        // the first and last columns are neighbours on the sphere
        let p = natural_panorama(128, 4).unwrap();
        let img = p.image();
        let w = img.width();
        let col_diff = |a: usize, b: usize| -> f64 {
            (0..img.height())
                .map(|y| {
                    (0..3)
                        .map(|c| (img.get(a, y)[c] - img.get(b, y)[c]).abs() as f64)
                        .sum::<f64>()
                })
                .sum()
        };
        let seam = col_diff(0, w - 1);
        let inner = (1..w).map(|x| col_diff(x, x - 1)).sum::<f64>() / (w - 1) as f64;
        assert!(seam < 2.0 * inner + 1.0, "seam {seam} vs inner {inner}");
    }
}
