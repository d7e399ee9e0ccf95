//! The unified three-scale generator.
//!
//! Each scale owns an input bridge (3 → `base_channels`), a core and an
//! output bridge (`base_channels` → 3). The small core is an encoder-decoder
//! with skip connections; the medium and large cores are residual stacks whose
//! output is added to the bilinearly upsampled output of the scale below:
//!
//! ```text
//! out_s = tanh(G_s(in_s))
//! out_m = clamp(G_m(in_m) + up(out_s))
//! out_l = clamp(G_l(in_l) + up(out_m))
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::nn::{
    join, Conv2d, ConvBlock, ConvTranspose2x2, HardTanh, Init, InstanceNorm, LeakyRelu, Module, Param, Scalar, Tanh,
    Tensor,
};
use crate::{Error, Result, Stage};

const SLOPE: f64 = 0.2;
const INIT: Init = Init::Normal(0.02);
const UNET_LEVELS: usize = 4;
const RES_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Bridge width; every core runs at this width at full resolution.
    pub base_channels: usize,
    pub skip_connections: bool,
    pub horizontal_wrap: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            skip_connections: true,
            horizontal_wrap: true,
        }
    }
}

/// Parameter-group names of one scale, in visiting order.
pub fn group_names(stage: Stage) -> [String; 3] {
    let s = stage.suffix();
    [format!("in_bridge_{s}"), format!("core_{s}"), format!("out_bridge_{s}")]
}

/// Encoder-decoder with four stride-2 levels.
#[derive(Clone, Debug)]
struct UNet<T: Scalar> {
    downs: Vec<ConvBlock<T>>,
    ups: Vec<ConvTranspose2x2<T>>,
    up_norms: Vec<InstanceNorm<T>>,
    up_acts: Vec<LeakyRelu<T>>,
    fuses: Vec<ConvBlock<T>>,
    widths: Vec<usize>,
    skip: bool,
}

impl<T: Scalar> UNet<T> {
    fn new<R: Rng + ?Sized>(b: usize, skip: bool, wrap: bool, rng: &mut R) -> Self {
        let widths = vec![b, b, 2 * b, 2 * b, 2 * b];
        let downs = (1..=UNET_LEVELS)
            .map(|i| {
                let conv = Conv2d::new(widths[i - 1], widths[i], 3, 2, 1, wrap, INIT, rng);
                ConvBlock::new(conv, true, Some(SLOPE))
            })
            .collect();
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        // up j maps level j+1 to level j; level 0 is the bridge resolution
        for j in 0..UNET_LEVELS {
            ups.push(ConvTranspose2x2::new(widths[j + 1], widths[j], INIT, rng));
            let cin = if skip { 2 * widths[j] } else { widths[j] };
            let (k, p) = if j == 0 { (1, 0) } else { (3, 1) };
            let conv = Conv2d::new(cin, widths[j], k, 1, p, wrap, INIT, rng);
            fuses.push(ConvBlock::new(conv, true, Some(SLOPE)));
        }
        Self {
            downs,
            ups,
            up_norms: (0..UNET_LEVELS).map(|_| InstanceNorm::new()).collect(),
            up_acts: (0..UNET_LEVELS).map(|_| LeakyRelu::new(SLOPE)).collect(),
            fuses,
            widths,
            skip,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let (_, h, w) = x.chw();
        let m = 1 << UNET_LEVELS;
        if h % m != 0 || w % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder-decoder input {h}x{w} must be divisible by {m}"
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut levels = vec![x.clone()];
        for d in &self.downs {
            let next = d.forward(levels.last().expect("non-empty"));
            levels.push(next);
        }
        let mut h = levels.pop().expect("deepest level");
        for j in (0..UNET_LEVELS).rev() {
            h = self.up_acts[j].forward(&self.up_norms[j].forward(&self.ups[j].forward(&h)));
            let skip = levels.pop().expect("level per up");
            if self.skip {
                h = Tensor::concat_channels(&[&h, &skip]).expect("matching sizes");
            }
            h = self.fuses[j].forward(&h);
        }
        h
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut levels = vec![x.clone()];
        for d in &mut self.downs {
            let next = d.forward_train(levels.last().expect("non-empty"));
            levels.push(next);
        }
        let mut h = levels.pop().expect("deepest level");
        for j in (0..UNET_LEVELS).rev() {
            let u = self.ups[j].forward_train(&h);
            h = self.up_acts[j].forward_train(&self.up_norms[j].forward_train(&u));
            let skip = levels.pop().expect("level per up");
            if self.skip {
                h = Tensor::concat_channels(&[&h, &skip]).expect("matching sizes");
            }
            h = self.fuses[j].forward_train(&h);
        }
        h
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; UNET_LEVELS];
        let mut g = gy.clone();
        for j in 0..UNET_LEVELS {
            g = self.fuses[j].backward(&g);
            if self.skip {
                let mut parts = g.split_channels(&[self.widths[j], self.widths[j]]);
                skip_grads[j] = parts.pop();
                g = parts.pop().expect("two parts");
            }
            g = self.up_acts[j].backward(&g);
            g = self.up_norms[j].backward(&g);
            g = self.ups[j].backward(&g);
        }
        for i in (0..UNET_LEVELS).rev() {
            g = self.downs[i].backward(&g);
            if let Some(s) = &skip_grads[i] {
                g.add_assign(s);
            }
        }
        g
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, d) in self.downs.iter().enumerate() {
            d.visit(&join(prefix, &format!("down{i}")), f);
        }
        for j in 0..UNET_LEVELS {
            self.ups[j].visit(&join(prefix, &format!("up{j}")), f);
            self.fuses[j].visit(&join(prefix, &format!("fuse{j}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, d) in self.downs.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("down{i}")), f);
        }
        for j in 0..UNET_LEVELS {
            self.ups[j].visit_mut(&join(prefix, &format!("up{j}")), f);
            self.fuses[j].visit_mut(&join(prefix, &format!("fuse{j}")), f);
        }
    }
}

/// `x + IN(conv(LReLU(IN(conv(x)))))`
#[derive(Clone, Debug)]
struct ResBlock<T: Scalar> {
    a: ConvBlock<T>,
    b: ConvBlock<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new<R: Rng + ?Sized>(c: usize, wrap: bool, rng: &mut R) -> Self {
        Self {
            a: ConvBlock::new(Conv2d::new(c, c, 3, 1, 1, wrap, INIT, rng), true, Some(SLOPE)),
            b: ConvBlock::new(Conv2d::new(c, c, 3, 1, 1, wrap, INIT, rng), true, None),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.b.forward(&self.a.forward(x));
        y.add_assign(x);
        y
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.a.forward_train(x);
        let mut y = self.b.forward_train(&h);
        y.add_assign(x);
        y
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mut g = self.a.backward(&self.b.backward(gy));
        g.add_assign(gy);
        g
    }
}

#[derive(Clone, Debug)]
enum Core<T: Scalar> {
    UNet(UNet<T>),
    Residual(Vec<ResBlock<T>>),
}

impl<T: Scalar> Core<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Core::UNet(u) => u.forward(x),
            Core::Residual(blocks) => blocks.iter().fold(x.clone(), |h, b| b.forward(&h)),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Core::UNet(u) => u.forward_train(x),
            Core::Residual(blocks) => blocks.iter_mut().fold(x.clone(), |h, b| b.forward_train(&h)),
        }
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        match self {
            Core::UNet(u) => u.backward(gy),
            Core::Residual(blocks) => blocks.iter_mut().rev().fold(gy.clone(), |g, b| b.backward(&g)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Core::UNet(u) => u.visit(prefix, f),
            Core::Residual(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.a.visit(&join(prefix, &format!("res{i}.a")), f);
                    b.b.visit(&join(prefix, &format!("res{i}.b")), f);
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Core::UNet(u) => u.visit_mut(prefix, f),
            Core::Residual(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.a.visit_mut(&join(prefix, &format!("res{i}.a")), f);
                    b.b.visit_mut(&join(prefix, &format!("res{i}.b")), f);
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum OutAct<T: Scalar> {
    Tanh(Tanh<T>),
    Clamp(HardTanh<T>),
}

impl<T: Scalar> OutAct<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            OutAct::Tanh(a) => a.forward(x),
            OutAct::Clamp(a) => a.forward(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            OutAct::Tanh(a) => a.forward_train(x),
            OutAct::Clamp(a) => a.forward_train(x),
        }
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        match self {
            OutAct::Tanh(a) => a.backward(gy),
            OutAct::Clamp(a) => a.backward(gy),
        }
    }
}

/// One scale of the generator: bridges, core and bounded output.
#[derive(Clone, Debug)]
pub struct ScaleNet<T: Scalar = f32> {
    stage: Stage,
    in_bridge: Conv2d<T>,
    core: Core<T>,
    out_bridge: Conv2d<T>,
    act: OutAct<T>,
}

impl<T: Scalar> ScaleNet<T> {
    pub fn new<R: Rng + ?Sized>(stage: Stage, config: &GeneratorConfig, rng: &mut R) -> Self {
        let b = config.base_channels;
        let wrap = config.horizontal_wrap;
        let in_bridge = Conv2d::new(3, b, 3, 1, 1, wrap, INIT, rng);
        let core = match stage {
            Stage::Small => Core::UNet(UNet::new(b, config.skip_connections, wrap, rng)),
            _ => Core::Residual((0..RES_BLOCKS).map(|_| ResBlock::new(b, wrap, rng)).collect()),
        };
        let out_bridge = Conv2d::new(b, 3, 3, 1, 1, wrap, INIT, rng);
        let act = match stage {
            Stage::Small => OutAct::Tanh(Tanh::new()),
            _ => OutAct::Clamp(HardTanh::new()),
        };
        Self {
            stage,
            in_bridge,
            core,
            out_bridge,
            act,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// The scale's own contribution before the residual add and bounding.
    pub fn residual(&self, x: &Tensor<T>) -> Tensor<T> {
        self.out_bridge.forward(&self.core.forward(&self.in_bridge.forward(x)))
    }

    fn residual_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.in_bridge.forward_train(x);
        let h = self.core.forward_train(&h);
        self.out_bridge.forward_train(&h)
    }

    /// Make the scale contribute exactly zero by clearing its output bridge.
    pub fn zero_output(&mut self) {
        self.out_bridge.weight.value.fill(T::zero());
        self.out_bridge.bias.value.fill(T::zero());
    }
}

impl<T: Scalar> Module<T> for ScaleNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        let [i, c, o] = group_names(self.stage);
        self.in_bridge.visit(&join(prefix, &i), f);
        self.core.visit(&join(prefix, &c), f);
        self.out_bridge.visit(&join(prefix, &o), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let [i, c, o] = group_names(self.stage);
        self.in_bridge.visit_mut(&join(prefix, &i), f);
        self.core.visit_mut(&join(prefix, &c), f);
        self.out_bridge.visit_mut(&join(prefix, &o), f);
    }
}

/// Bilinear ×2 upsampling with half-pixel centers and clamped edges.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let (ho, wo) = (2 * h, 2 * w);
    let taps = |n: usize, o: usize| {
        let s = (o as f64 + 0.5) / 2.0 - 0.5;
        let i0 = s.floor();
        let f = s - i0;
        let cl = |i: f64| i.clamp(0.0, (n - 1) as f64) as usize;
        (cl(i0), cl(i0 + 1.0), T::lit(f))
    };
    let ys: Vec<_> = (0..ho).map(|o| taps(h, o)).collect();
    let xs: Vec<_> = (0..wo).map(|o| taps(w, o)).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let one = T::one();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (one - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (one - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (one - fy) + bot * fy);
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out).expect("length matches")
}

/// 2×2 box average; odd trailing rows or columns are dropped.
pub fn downsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let (ho, wo) = (h / 2, w / 2);
    let src = x.data();
    let q = T::lit(0.25);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            for x in 0..wo {
                let a = plane[2 * y * w + 2 * x] + plane[2 * y * w + 2 * x + 1];
                let b = plane[(2 * y + 1) * w + 2 * x] + plane[(2 * y + 1) * w + 2 * x + 1];
                out.push((a + b) * q);
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out).expect("length matches")
}

/// All scales up to the highest stage built so far.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar = f32> {
    config: GeneratorConfig,
    scales: Vec<ScaleNet<T>>,
}

impl<T: Scalar> Generator<T> {
    /// Fresh parameters for every scale up to `stage`.
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, stage: Stage, rng: &mut R) -> Self {
        let scales = stage.up_to().iter().map(|&s| ScaleNet::new(s, &config, rng)).collect();
        Self { config, scales }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Highest scale present.
    pub fn stage(&self) -> Stage {
        self.scales.last().expect("at least one scale").stage
    }

    pub fn scale(&self, stage: Stage) -> Option<&ScaleNet<T>> {
        self.scales.get(stage.index())
    }

    pub fn scale_mut(&mut self, stage: Stage) -> Option<&mut ScaleNet<T>> {
        self.scales.get_mut(stage.index())
    }

    fn check_inputs(&self, stage: Stage, inputs: &[Tensor<T>]) -> Result<()> {
        if stage > self.stage() {
            return Err(Error::MissingGroup(format!(
                "generator has no parameters for the {stage} scale"
            )));
        }
        if inputs.len() != stage.index() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{stage} stage needs {} inputs, got {}",
                stage.index() + 1,
                inputs.len()
            )));
        }
        let (_, h0, w0) = inputs[0].chw();
        for (i, x) in inputs.iter().enumerate() {
            let (c, h, w) = x.chw();
            if c != 3 || h != h0 << i || w != w0 << i {
                return Err(Error::ShapeMismatch(format!(
                    "input {i} is {c}x{h}x{w}; scales must double from {h0}x{w0}"
                )));
            }
        }
        if let Some(Core::UNet(u)) = self.scales.first().map(|s| &s.core) {
            u.check(&inputs[0])?;
        }
        Ok(())
    }

    /// Outputs of every scale up to `stage`, smallest first.
    pub fn forward(&self, stage: Stage, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        self.check_inputs(stage, inputs)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(inputs.len());
        for (net, x) in self.scales.iter().zip(inputs) {
            let mut r = net.residual(x);
            if let Some(prev) = outs.last() {
                r.add_assign(&upsample2x(prev));
            }
            outs.push(net.act.forward(&r));
        }
        Ok(outs)
    }

    /// Output of `stage` with the lower scales run frozen; keeps what
    /// [`Generator::backward_active`] needs.
    pub fn forward_active_train(&mut self, stage: Stage, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.check_inputs(stage, inputs)?;
        let base = match stage.previous() {
            Some(p) => {
                let lower = Generator {
                    config: self.config,
                    scales: self.scales[..=p.index()].to_vec(),
                };
                let outs = lower.forward(p, &inputs[..=p.index()])?;
                Some(upsample2x(outs.last().expect("lower output")))
            }
            None => None,
        };
        let net = &mut self.scales[stage.index()];
        let mut r = net.residual_train(&inputs[stage.index()]);
        if let Some(b) = base {
            r.add_assign(&b);
        }
        Ok(net.act.forward_train(&r))
    }

    /// Accumulate gradients of the active scale only.
    pub fn backward_active(&mut self, stage: Stage, g_out: &Tensor<T>) {
        let net = &mut self.scales[stage.index()];
        let g = net.act.backward(g_out);
        let g = net.out_bridge.backward(&g);
        let g = net.core.backward(&g);
        net.in_bridge.backward(&g);
    }

    /// Copy named values into the scales present; every name must exist
    /// with a matching shape.
    pub fn load_named(&mut self, values: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        load_module(self, "", values)
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for s in &self.scales {
            s.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for s in &mut self.scales {
            s.visit_mut(prefix, f);
        }
    }
}

/// The parameter group of a dotted parameter name.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Overwrite every parameter of `m` from `values`, failing on a missing
/// group, a missing tensor or a shape mismatch.
pub fn load_module<T: Scalar, M: Module<T> + ?Sized>(
    m: &mut M,
    prefix: &str,
    values: &BTreeMap<String, Tensor<T>>,
) -> Result<()> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match values.get(name) {
            None => {
                let g = group_of(name);
                err = Some(if values.keys().any(|k| group_of(k) == g) {
                    Error::ShapeMismatch(format!("parameter `{name}` missing from group `{g}`"))
                } else {
                    Error::MissingGroup(g.to_string())
                });
            }
            Some(v) if v.shape() != p.value.shape() => {
                err = Some(Error::ShapeMismatch(format!(
                    "`{name}`: stored {:?}, expected {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
            Some(v) => p.value = v.clone(),
        }
    });
    err.map_or(Ok(()), Err)
}

/// Extend a trained generator by one scale: every lower group is copied
/// verbatim from `lower` and the `next` scale is freshly initialized.
pub fn unify<R: Rng + ?Sized>(
    config: GeneratorConfig,
    lower: &BTreeMap<String, Tensor<f32>>,
    next: Stage,
    rng: &mut R,
) -> Result<Generator<f32>> {
    let prev = next
        .previous()
        .ok_or_else(|| Error::InvalidArgument("the small scale has nothing to unify with".into()))?;
    for s in prev.up_to() {
        for g in group_names(*s) {
            if !lower.keys().any(|k| group_of(k) == g) {
                return Err(Error::MissingGroup(g));
            }
        }
    }
    // lower scales only need the right shapes before their values are replaced
    let mut scratch = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut scales: Vec<ScaleNet<f32>> = prev
        .up_to()
        .iter()
        .map(|&s| ScaleNet::new(s, &config, &mut scratch))
        .collect();
    for s in &mut scales {
        load_module(s, "", lower)?;
    }
    scales.push(ScaleNet::new(next, &config, rng));
    Ok(Generator { config, scales })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            base_channels: 2,
            skip_connections: true,
            horizontal_wrap: true,
        }
    }

    fn inputs<T: Scalar>(stage: Stage, h: usize, seed: u64) -> Vec<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        stage
            .up_to()
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let (hh, ww) = (h << i, 2 * (h << i));
                let data = (0..3 * hh * ww).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
                Tensor::from_vec(&[3, hh, ww], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn small_output_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f32>::new(tiny(), Stage::Small, &mut rng);
        let out = g.forward(Stage::Small, &inputs(Stage::Small, 128, 1)).unwrap();
        assert_eq!(out[0].shape(), &[3, 128, 256]);
        assert!(out[0].data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn rejects_bad_resolutions_and_missing_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f32>::new(tiny(), Stage::Small, &mut rng);
        assert!(g.forward(Stage::Small, &inputs(Stage::Small, 24, 1)).is_err());
        assert!(matches!(
            g.forward(Stage::Medium, &inputs(Stage::Medium, 16, 1)),
            Err(Error::MissingGroup(_))
        ));
        let g = Generator::<f32>::new(tiny(), Stage::Medium, &mut rng);
        let mut bad = inputs::<f32>(Stage::Medium, 16, 1);
        bad[1] = Tensor::zeros(&[3, 16, 32]);
        assert!(g.forward(Stage::Medium, &bad).is_err());
    }

    #[test]
    fn zero_residual_reduces_to_upsampled_lower_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Generator::<f32>::new(tiny(), Stage::Large, &mut rng);
        let x = inputs(Stage::Large, 16, 4);
        for stage in [Stage::Medium, Stage::Large] {
            g.scale_mut(stage).unwrap().zero_output();
            let outs = g.forward(stage, &x[..=stage.index()]).unwrap();
            let want = upsample2x(&outs[stage.index() - 1]);
            assert_eq!(outs[stage.index()].max_abs_diff(&want), 0.0);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Generator::<f32>::new(tiny(), Stage::Medium, &mut rng);
        let x = inputs(Stage::Medium, 16, 6);
        assert_eq!(
            g.forward(Stage::Medium, &x).unwrap(),
            g.forward(Stage::Medium, &x).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Generator::<f32>::new(tiny(), Stage::Medium, &mut rng);
        assert_eq!(
            g.forward(Stage::Medium, &x).unwrap(),
            h.forward(Stage::Medium, &x).unwrap()
        );
    }

    #[test]
    fn train_forward_matches_inference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Generator::<f32>::new(tiny(), Stage::Medium, &mut rng);
        let x = inputs(Stage::Medium, 16, 8);
        let a = g.forward(Stage::Medium, &x).unwrap().pop().unwrap();
        let b = g.forward_active_train(Stage::Medium, &x).unwrap();
        assert_eq!(a, b);
    }

    fn named(g: &Generator<f32>) -> BTreeMap<String, Tensor<f32>> {
        g.named_values("").into_iter().collect()
    }

    #[test]
    fn unify_preserves_lower_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let small = Generator::<f32>::new(tiny(), Stage::Small, &mut rng);
        let x = inputs(Stage::Medium, 16, 10);
        let before = small.forward(Stage::Small, &x[..1]).unwrap();
        let unified = unify(tiny(), &named(&small), Stage::Medium, &mut rng).unwrap();
        let after = unified.forward(Stage::Small, &x[..1]).unwrap();
        assert_eq!(before, after);
        assert!(unified.param_count() > small.param_count());
        let u = named(&unified);
        for (k, v) in named(&small) {
            assert_eq!(u[&k], v);
        }
    }

    #[test]
    fn unify_requires_lower_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let empty = BTreeMap::new();
        assert!(matches!(
            unify(tiny(), &empty, Stage::Medium, &mut rng),
            Err(Error::MissingGroup(_))
        ));
        let small = Generator::<f32>::new(tiny(), Stage::Small, &mut rng);
        assert!(matches!(
            unify(tiny(), &named(&small), Stage::Large, &mut rng),
            Err(Error::MissingGroup(_))
        ));
        let mut wide = tiny();
        wide.base_channels = 3;
        assert!(matches!(
            unify(wide, &named(&small), Stage::Medium, &mut rng),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn upsample_basics() {
        let one = Tensor::<f64>::from_vec(&[1, 1, 1], vec![0.7]).unwrap();
        let up = upsample2x(&one);
        assert_eq!(up.shape(), &[1, 2, 2]);
        assert!(up.data().iter().all(|&v| v == 0.7));
        let c = Tensor::<f64>::full(&[3, 4, 6], -0.25);
        assert!(upsample2x(&c).data().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn down_of_up_is_near_identity_on_smooth_images() {
        let (h, w) = (32, 64);
        let data = (0..3 * h * w)
            .map(|i| {
                let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                let fx = std::f64::consts::TAU * x as f64 / w as f64;
                let fy = std::f64::consts::PI * y as f64 / h as f64;
                0.5 * (fx + c as f64).sin() * fy.cos()
            })
            .collect();
        let x = Tensor::<f64>::from_vec(&[3, h, w], data).unwrap();
        let back = downsample2x(&upsample2x(&x));
        let mse = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64;
        let psnr = 10.0 * (4.0 / mse).log10();
        assert!(psnr > 35.0, "psnr {psnr}");
    }

    /// Finite differences through the whole active scale, both core types,
    /// on the smooth objective `<y, r>`.
    #[test]
    fn active_backward_matches_finite_differences() {
        let cfg = GeneratorConfig {
            base_channels: 1,
            ..tiny()
        };
        for stage in [Stage::Small, Stage::Medium] {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut g = Generator::<f64>::new(cfg, stage, &mut rng);
            let x = inputs::<f64>(stage, 32, 13);
            let r = inputs::<f64>(stage, 32, 14).pop().unwrap();
            let obj = |y: &Tensor<f64>| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
            g.zero_grad();
            g.forward_active_train(stage, &x).unwrap();
            g.backward_active(stage, &r);
            let mut grads = Vec::new();
            g.scale(stage)
                .unwrap()
                .visit("", &mut |n, p| grads.push((n.to_string(), p.grad.clone())));
            for (name, grad) in grads {
                let i = grad.len() / 2;
                let bump = |g: &mut Generator<f64>, d: f64| {
                    g.visit_mut("", &mut |n, p| {
                        if n == name {
                            p.value.data_mut()[i] += d;
                        }
                    })
                };
                let h = 1e-6;
                bump(&mut g, h);
                let up = obj(g.forward(stage, &x).unwrap().last().unwrap());
                bump(&mut g, -2.0 * h);
                let down = obj(g.forward(stage, &x).unwrap().last().unwrap());
                bump(&mut g, h);
                let fd = (up - down) / (2.0 * h);
                let a = grad.data()[i];
                assert!(
                    (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-2),
                    "{stage} {name}: fd {fd} vs analytic {a}"
                );
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn outputs_stay_in_range(seed in 0u64..1000, gain in 0.5f32..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Generator::<f32>::new(tiny(), Stage::Large, &mut rng);
            let x: Vec<Tensor<f32>> = inputs::<f32>(Stage::Large, 16, seed).iter().map(|t| t.map(|v| v * gain)).collect();
            for out in g.forward(Stage::Large, &x).unwrap() {
                proptest::prop_assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
