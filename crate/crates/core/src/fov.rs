//! Relative field-of-view classifier and the FOV-constrained network input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    cubemap_coverage_to_equirect, cubemap_to_equirect, embed_view_with_fov, CubeMapFaces, EquirectPanorama, FaceKey,
    FovScaleLaw, ValueRange, ViewSet,
};
use crate::image::Image;
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{join, Conv2d, ConvBlock, Init, Linear, Module, Param, Scalar, Tensor};
use crate::{Error, Result};

pub const FOV_GROUP: &str = "fov";
const SLOPE: f64 = 0.2;
const WIDTHS: [usize; 5] = [32, 64, 128, 256, 256];
/// Conv biases start uniform in ±BIAS_SPREAD/√fan_in. With zero biases the
/// trunk is positively homogeneous, so on near-flat views every unit switches
/// at brightness 0 and brightness levels of one sign are only told apart by
/// the head bias; spread biases move the switching points across [-1, 1].
const BIAS_SPREAD: f64 = 6.0;

/// The discrete FOV classes the network predicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovClassSpec {
    bin_centers: Vec<f64>,
}

impl Default for FovClassSpec {
    /// 45°, 50°, ..., 75°.
    fn default() -> Self {
        Self {
            bin_centers: (0..7).map(|i| 45.0 + 5.0 * i as f64).collect(),
        }
    }
}

impl FovClassSpec {
    pub fn new(bin_centers: Vec<f64>) -> Result<Self> {
        if bin_centers.is_empty() {
            return Err(Error::InvalidArgument("at least one fov bin is required".into()));
        }
        if bin_centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "fov bin centers must be strictly increasing".into(),
            ));
        }
        if bin_centers.iter().any(|c| !(45.0..=90.0).contains(c)) {
            return Err(Error::InvalidArgument("fov bin centers must lie in [45°, 90°]".into()));
        }
        Ok(Self { bin_centers })
    }

    pub fn n_classes(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn bin_centers(&self) -> &[f64] {
        &self.bin_centers
    }

    pub fn center(&self, class: usize) -> f64 {
        self.bin_centers[class]
    }

    /// Nearest bin center; ties go to the lower class.
    pub fn class_of(&self, fov_deg: f64) -> usize {
        let mut best = 0;
        for (i, c) in self.bin_centers.iter().enumerate() {
            if (c - fov_deg).abs() < (self.bin_centers[best] - fov_deg).abs() {
                best = i;
            }
        }
        best
    }

    pub fn snap(&self, fov_deg: f64) -> f64 {
        self.center(self.class_of(fov_deg))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FovPrediction {
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub predicted_fov: f64,
}

impl FovPrediction {
    pub fn from_logits(logits: Vec<f64>, spec: &FovClassSpec) -> Self {
        let predicted_class = argmax(&logits);
        Self {
            predicted_fov: spec.center(predicted_class),
            predicted_class,
            logits,
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Four views stacked on channels, five stride-2 conv blocks, global average
/// pooling and a linear head.
#[derive(Clone, Debug)]
pub struct FovNet<T: Scalar = f32> {
    blocks: Vec<ConvBlock<T>>,
    head: Linear<T>,
    spec: FovClassSpec,
    input_size: usize,
    pooled_from: Option<(usize, usize)>,
}

impl<T: Scalar> FovNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: FovClassSpec, input_size: usize, rng: &mut R) -> Self {
        Self::with_widths(spec, input_size, &WIDTHS, rng)
    }

    /// Same layout with custom block widths; used for tiny test models.
    pub fn with_widths<R: Rng + ?Sized>(spec: FovClassSpec, input_size: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c = 12;
        for &w in widths {
            let mut conv = Conv2d::new(c, w, 3, 2, 1, false, Init::Kaiming { negative_slope: SLOPE }, rng);
            let bound = BIAS_SPREAD / ((c * 9) as f64).sqrt();
            for b in conv.bias.value.data_mut() {
                *b = T::lit(rng.random_range(-bound..bound));
            }
            blocks.push(ConvBlock::new(conv, false, Some(SLOPE)));
            c = w;
        }
        let head = Linear::new(c, spec.n_classes(), Init::Normal(0.02), rng);
        Self {
            blocks,
            head,
            spec,
            input_size,
            pooled_from: None,
        }
    }

    pub fn spec(&self) -> &FovClassSpec {
        &self.spec
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn head_mut(&mut self) -> &mut Linear<T> {
        &mut self.head
    }

    /// Resize the four views to the network input size and stack them as
    /// `[12, n, n]` in north, west, south, east order.
    pub fn prepare(&self, views: &ViewSet) -> Tensor<T> {
        let n = self.input_size;
        let parts: Vec<Tensor<T>> = views.views().iter().map(|v| v.resize(n, n).to_tensor()).collect();
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Tensor::concat_channels(&refs).expect("views share a size")
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h);
        }
        self.head.forward(&global_avg_pool(&h))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward_train(&h);
        }
        let (_, ph, pw) = h.chw();
        self.pooled_from = Some((ph, pw));
        self.head.forward_train(&global_avg_pool(&h))
    }

    pub fn backward(&mut self, g_logits: &Tensor<T>) -> Tensor<T> {
        let (ph, pw) = self.pooled_from.take().expect("backward without forward_train");
        let g = self.head.backward(g_logits);
        let mut g = global_avg_pool_backward(&g, ph, pw);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        g
    }

    pub fn predict(&self, views: &ViewSet) -> FovPrediction {
        let logits = self.forward(&self.prepare(views));
        FovPrediction::from_logits(logits.data().iter().map(|v| v.as_f64()).collect(), &self.spec)
    }
}

impl<T: Scalar> Module<T> for FovNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Classify the shared field of view of a view set.
pub fn fov_forward<T: Scalar>(views: &ViewSet, net: &FovNet<T>) -> FovPrediction {
    net.predict(views)
}

/// Softmax cross-entropy against the ground-truth class.
pub fn fov_loss<T: Scalar>(logits: &Tensor<T>, label_class: usize) -> Result<(f64, Tensor<T>)> {
    softmax_cross_entropy(logits, label_class)
}

/// Partial panorama built from the four views plus the mask of pixels that
/// received no view content.
#[derive(Clone, Debug)]
pub struct ConstrainedInput {
    pub panorama: EquirectPanorama,
    /// Row-major over the equirect, `true` where only fill value landed.
    pub fill_mask: Vec<bool>,
}

impl ConstrainedInput {
    pub fn fill_count(&self) -> usize {
        self.fill_mask.iter().filter(|m| **m).count()
    }
}

/// Embed each view into its side cube face at the given FOV, leave the up and
/// down faces at `fill`, and warp the cube to an equirect of `height` rows.
pub fn constrain_views(
    views: &ViewSet,
    fov_deg: f64,
    face_size: usize,
    fill: f32,
    height: usize,
    law: FovScaleLaw,
) -> Result<ConstrainedInput> {
    let mut faces = Vec::with_capacity(6);
    let mut coverage = Vec::with_capacity(6);
    for key in FaceKey::ALL {
        if FaceKey::SIDES.contains(&key) {
            let e = embed_view_with_fov(views.view(key), fov_deg, face_size, fill, law)?;
            faces.push(e.face);
            coverage.push(e.coverage);
        } else {
            faces.push(Image::filled(face_size, face_size, [fill; 3]));
            coverage.push(vec![false; face_size * face_size]);
        }
    }
    let cube = CubeMapFaces::new(faces, ValueRange::Normalized)?;
    let panorama = cubemap_to_equirect(&cube, height)?;
    let fill_mask = cubemap_coverage_to_equirect(&coverage, face_size, height)
        .into_iter()
        .map(|c| !c)
        .collect();
    Ok(ConstrainedInput { panorama, fill_mask })
}
