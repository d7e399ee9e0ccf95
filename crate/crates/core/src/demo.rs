//! Cube-map vs equirect output format, side by side.
//!
//! Two tiny small-scale generators are fit with the pixel loss on the same
//! panoramas. One maps each constrained cube face to its ground-truth face
//! independently, and its six outputs are then warped to an equirect; the
//! other works on the equirect directly. Faces that never see each other
//! disagree along their shared edges, which shows up as visible seams after
//! warping. The seam score quantifies this loosely: the mean neighbour
//! difference across cube-face boundaries divided by the same quantity
//! elsewhere. It is a qualitative aid, not a benchmark.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{denormalize, generate_sample, normalize, Split};
use crate::fov::constrain_views;
use crate::generator::{Generator, GeneratorConfig};
use crate::geometry::{
    cubemap_to_equirect, embed_view_with_fov, equirect_to_cubemap, equirect_uv_to_dir, CubeMapFaces, EquirectPanorama,
    FaceKey, FovScaleLaw, ValueRange, ViewSet,
};
use crate::image::Image;
use crate::nn::loss::l1;
use crate::nn::{Adam, AdamConfig, Module, Tensor};
use crate::{Error, Result, Stage};

#[derive(Clone, Debug)]
pub struct SeamDemoOptions {
    /// Face side; the equirect height is twice this. Must be a multiple of 16.
    pub face_size: usize,
    pub fov_deg: f64,
    pub steps: u64,
    pub base_channels: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SeamDemoOptions {
    fn default() -> Self {
        Self {
            face_size: 32,
            fov_deg: 75.0,
            steps: 300,
            base_channels: 8,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeamDemo {
    /// Ground truth, `[0, 255]`, for the first panorama.
    pub truth: Image,
    /// Six per-face predictions warped to equirect.
    pub cubemap_warped: Image,
    /// Direct equirect prediction.
    pub equirect: Image,
    pub truth_seam: f64,
    pub cubemap_seam: f64,
    pub equirect_seam: f64,
}

impl SeamDemo {
    /// Truth, cube-map result and equirect result stacked vertically.
    pub fn montage(&self) -> Image {
        let (w, h) = (self.truth.width(), self.truth.height());
        Image::from_fn(w, 3 * h, |x, y| match y / h {
            0 => self.truth.get(x, y),
            1 => self.cubemap_warped.get(x, y - h),
            _ => self.equirect.get(x, y - 2 * h),
        })
    }
}

/// Neighbour-difference ratio across cube-face boundaries.
pub fn seam_score(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    let face = |x: usize, y: usize| {
        FaceKey::for_direction(&equirect_uv_to_dir(
            (x as f64 + 0.5) / w as f64,
            (y as f64 + 0.5) / h as f64,
        ))
    };
    let keys: Vec<FaceKey> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| face(x, y))
        .collect();
    let diff = |a: [f32; 3], b: [f32; 3]| (0..3).map(|c| (a[c] - b[c]).abs() as f64).sum::<f64>() / 3.0;
    let (mut across, mut n_across, mut inside, mut n_inside) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let here = img.get(x, y);
            let mut pairs = vec![((x + 1) % w, y)];
            if y + 1 < h {
                pairs.push((x, y + 1));
            }
            for (nx, ny) in pairs {
                let d = diff(here, img.get(nx, ny));
                if keys[y * w + x] != keys[ny * w + nx] {
                    across += d;
                    n_across += 1;
                } else {
                    inside += d;
                    n_inside += 1;
                }
            }
        }
    }
    (across / n_across.max(1) as f64) / (inside / n_inside.max(1) as f64).max(1e-12)
}

/// Fit a small-scale generator on `(input, target)` pairs with the L1 loss.
fn fit(
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    wrap: bool,
    opts: &SeamDemoOptions,
    stream: u64,
) -> Result<Generator<f32>> {
    let config = GeneratorConfig {
        base_channels: opts.base_channels,
        skip_connections: true,
        horizontal_wrap: wrap,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut g = Generator::new(config, Stage::Small, &mut rng);
    let mut adam = Adam::new(AdamConfig {
        lr: opts.lr,
        ..AdamConfig::default()
    });
    for step in 0..opts.steps {
        let (x, y) = &pairs[step as usize % pairs.len()];
        g.zero_grad();
        let out = g.forward_active_train(Stage::Small, std::slice::from_ref(x))?;
        let (_, grad) = l1(&out, y)?;
        g.backward_active(Stage::Small, &grad);
        adam.step(g.scale_mut(Stage::Small).expect("small scale"), "");
    }
    Ok(g)
}

fn to_unit8(t: &Tensor<f32>) -> Result<Image> {
    Ok(denormalize(&Image::from_tensor(t)?).map(|v| v.clamp(0.0, 255.0).round()))
}

/// Train both formats on `panoramas` (`[0, 255]`) and render the first one.
pub fn seam_demo(panoramas: &[EquirectPanorama], opts: &SeamDemoOptions) -> Result<SeamDemo> {
    let s = opts.face_size;
    if s == 0 || !s.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "face size must be a positive multiple of 16, got {s}"
        )));
    }
    if panoramas.is_empty() {
        return Err(Error::InvalidArgument("the demo needs at least one panorama".into()));
    }
    let h = 2 * s;
    let law = FovScaleLaw::Tangent;
    let mut face_pairs = Vec::new();
    let mut pano_pairs = Vec::new();
    let mut face_inputs = Vec::new();
    for (i, p) in panoramas.iter().enumerate() {
        let sample = generate_sample(p, opts.fov_deg, s, &format!("demo{i}"), Split::Train)?;
        let views: &ViewSet = &sample.views;
        let gt = normalize(&p.image().resize(2 * h, h));
        let gt_pano = EquirectPanorama::new(gt.clone(), ValueRange::Normalized)?;
        let gt_faces = equirect_to_cubemap(&gt_pano, s)?;
        let mut inputs = Vec::new();
        for key in FaceKey::ALL {
            let face = if FaceKey::SIDES.contains(&key) {
                embed_view_with_fov(views.view(key), opts.fov_deg, s, 0.0, law)?.face
            } else {
                Image::filled(s, s, [0.0; 3])
            };
            let x: Tensor<f32> = face.to_tensor();
            face_pairs.push((x.clone(), gt_faces.face(key).to_tensor()));
            inputs.push(x);
        }
        face_inputs.push(inputs);
        let c = constrain_views(views, opts.fov_deg, s, 0.0, h, law)?;
        pano_pairs.push((c.panorama.image().to_tensor(), gt.to_tensor()));
    }
    let cube_net = fit(&face_pairs, false, opts, 1)?;
    let pano_net = fit(&pano_pairs, true, opts, 2)?;

    let faces = face_inputs[0]
        .iter()
        .map(|x| Image::from_tensor(&cube_net.forward(Stage::Small, std::slice::from_ref(x))?.remove(0)))
        .collect::<Result<Vec<_>>>()?;
    let warped = cubemap_to_equirect(&CubeMapFaces::new(faces, ValueRange::Normalized)?, h)?;
    let cubemap_warped = to_unit8(&warped.image().to_tensor())?;
    let equirect = to_unit8(
        &pano_net
            .forward(Stage::Small, std::slice::from_ref(&pano_pairs[0].0))?
            .remove(0),
    )?;
    let truth = denormalize(&Image::from_tensor(&pano_pairs[0].1)?).map(|v| v.round());
    Ok(SeamDemo {
        truth_seam: seam_score(&truth),
        cubemap_seam: seam_score(&cubemap_warped),
        equirect_seam: seam_score(&equirect),
        truth,
        cubemap_warped,
        equirect,
    })
}
