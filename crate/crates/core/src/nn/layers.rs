//! Layers with hand-written backward passes.
//!
//! Every layer offers a pure `forward(&self)` for inference and a
//! `forward_train(&mut self)` that keeps what `backward` needs. A backward
//! call consumes that cache, accumulates parameter gradients and returns the
//! gradient with respect to the layer input.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{gemm, MatRef, Scalar, Tensor};
use super::{join, Module, Param};

/// Upper bound on im2col scratch elements; larger convolutions run in row bands.
const IM2COL_CHUNK: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, std²)`
    Normal(f64),
    /// He initialization for a leaky-ReLU with the given negative slope.
    Kaiming {
        negative_slope: f64,
    },
    Zeros,
}

pub(crate) fn init_tensor<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut R,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let std = match init {
        Init::Zeros => return Tensor::zeros(shape),
        Init::Normal(std) => std,
        Init::Kaiming { negative_slope } => (2.0 / ((1.0 + negative_slope * negative_slope) * fan_in as f64)).sqrt(),
    };
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// 2-D convolution over a `[C, H, W]` map.
///
/// With `wrap` set, horizontal padding reads from the opposite image edge
/// (azimuth is periodic on an equirect); vertical padding is always zero.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    wrap: bool,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        wrap: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: Param::new(init_tensor(&[out_ch, in_ch, kernel, kernel], fan_in, init, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            wrap,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn check_input(&self, x: &Tensor<T>) -> (usize, usize) {
        let (c, h, w) = x.chw();
        assert_eq!(c, self.in_ch, "conv expects {} input channels, got {c}", self.in_ch);
        assert!(
            h + 2 * self.padding >= self.kernel && w + 2 * self.padding >= self.kernel,
            "conv input {h}x{w} smaller than kernel"
        );
        (h, w)
    }

    fn rows_per_chunk(&self, wo: usize) -> usize {
        let kk = self.in_ch * self.kernel * self.kernel;
        (IM2COL_CHUNK / (kk * wo)).max(1)
    }

    /// Fill `cols` (`[C·K·K, rows·wo]`) for output rows `oy0..oy0+rows`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[T], h: usize, w: usize, wo: usize, oy0: usize, rows: usize, cols: &mut [T]) {
        let k = self.kernel;
        let n = rows * wo;
        let pad = self.padding as isize;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let dst = &mut cols[r * n..(r + 1) * n];
                    for row in 0..rows {
                        let iy = ((oy0 + row) * self.stride) as isize - pad + ky as isize;
                        let drow = &mut dst[row * wo..(row + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize - pad + kx as isize;
                            *d = if ix >= 0 && ix < w as isize {
                                srow[ix as usize]
                            } else if self.wrap {
                                srow[ix.rem_euclid(w as isize) as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `cols` back into the input gradient; transpose of `im2col`.
    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, cols: &[T], h: usize, w: usize, wo: usize, oy0: usize, rows: usize, dx: &mut [T]) {
        let k = self.kernel;
        let n = rows * wo;
        let pad = self.padding as isize;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let src = &cols[r * n..(r + 1) * n];
                    for row in 0..rows {
                        let iy = ((oy0 + row) * self.stride) as isize - pad + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in src[row * wo..(row + 1) * wo].iter().enumerate() {
                            let ix = (ox * self.stride) as isize - pad + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] = drow[ix as usize] + g;
                            } else if self.wrap {
                                let j = ix.rem_euclid(w as isize) as usize;
                                drow[j] = drow[j] + g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = self.check_input(x);
        let (ho, wo) = self.output_size(h, w);
        let hw = ho * wo;
        let kk = self.in_ch * self.kernel * self.kernel;
        let wmat = MatRef::row_major(self.weight.value.data(), kk);
        let mut y = Tensor::zeros(&[self.out_ch, ho, wo]);
        if self.pointwise() {
            gemm(
                self.out_ch,
                kk,
                hw,
                wmat,
                MatRef::row_major(x.data(), hw),
                T::zero(),
                y.data_mut(),
                hw,
            );
        } else {
            let per = self.rows_per_chunk(wo);
            let mut cols = vec![T::zero(); kk * per.min(ho) * wo];
            let mut oy0 = 0;
            while oy0 < ho {
                let rows = per.min(ho - oy0);
                let n = rows * wo;
                self.im2col(x.data(), h, w, wo, oy0, rows, &mut cols[..kk * n]);
                gemm(
                    self.out_ch,
                    kk,
                    n,
                    wmat,
                    MatRef::row_major(&cols[..kk * n], n),
                    T::zero(),
                    &mut y.data_mut()[oy0 * wo..],
                    hw,
                );
                oy0 += rows;
            }
        }
        for (plane, &b) in y.data_mut().chunks_mut(hw).zip(self.bias.value.data()) {
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("conv backward without forward_train");
        let (h, w) = self.check_input(&x);
        let (ho, wo) = self.output_size(h, w);
        assert_eq!(gy.shape(), &[self.out_ch, ho, wo], "conv backward grad shape");
        let hw = ho * wo;
        let kk = self.in_ch * self.kernel * self.kernel;

        for (plane, gb) in gy.data().chunks(hw).zip(self.bias.grad.data_mut()) {
            *gb = *gb + plane.iter().copied().sum::<T>();
        }

        let mut dx = Tensor::zeros(x.shape());
        let weight = self.weight.value.data();
        if self.pointwise() {
            gemm(
                self.out_ch,
                hw,
                kk,
                MatRef::row_major(gy.data(), hw),
                MatRef::transposed(x.data(), hw),
                T::one(),
                self.weight.grad.data_mut(),
                kk,
            );
            gemm(
                kk,
                self.out_ch,
                hw,
                MatRef::transposed(weight, kk),
                MatRef::row_major(gy.data(), hw),
                T::zero(),
                dx.data_mut(),
                hw,
            );
            return dx;
        }

        let per = self.rows_per_chunk(wo);
        let cap = kk * per.min(ho) * wo;
        let mut cols = vec![T::zero(); cap];
        let mut dcols = vec![T::zero(); cap];
        let mut oy0 = 0;
        while oy0 < ho {
            let rows = per.min(ho - oy0);
            let n = rows * wo;
            self.im2col(x.data(), h, w, wo, oy0, rows, &mut cols[..kk * n]);
            let gy_chunk = MatRef {
                data: &gy.data()[oy0 * wo..],
                rs: hw,
                cs: 1,
            };
            gemm(
                self.out_ch,
                n,
                kk,
                gy_chunk,
                MatRef::transposed(&cols[..kk * n], n),
                T::one(),
                self.weight.grad.data_mut(),
                kk,
            );
            gemm(
                kk,
                self.out_ch,
                n,
                MatRef::transposed(weight, kk),
                gy_chunk,
                T::zero(),
                &mut dcols[..kk * n],
                n,
            );
            self.col2im(&dcols[..kk * n], h, w, wo, oy0, rows, dx.data_mut());
            oy0 += rows;
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution with a 2×2 kernel and stride 2: exact ×2 upsampling.
#[derive(Clone, Debug)]
pub struct ConvTranspose2x2<T: Scalar = f32> {
    /// `[in, out, 2, 2]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    out_ch: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, init: Init, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init_tensor(&[in_ch, out_ch, 2, 2], in_ch, init, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = x.chw();
        assert_eq!(c, self.in_ch, "transposed conv input channels");
        let hw = h * w;
        let o4 = self.out_ch * 4;
        let mut z = vec![T::zero(); o4 * hw];
        gemm(
            o4,
            self.in_ch,
            hw,
            MatRef::transposed(self.weight.value.data(), o4),
            MatRef::row_major(x.data(), hw),
            T::zero(),
            &mut z,
            hw,
        );
        let (h2, w2) = (2 * h, 2 * w);
        let mut y = Tensor::zeros(&[self.out_ch, h2, w2]);
        let yd = y.data_mut();
        for co in 0..self.out_ch {
            let b = self.bias.value.data()[co];
            for dy in 0..2 {
                for dx in 0..2 {
                    let zrow = &z[(co * 4 + dy * 2 + dx) * hw..][..hw];
                    for i in 0..h {
                        let out = &mut yd[co * h2 * w2 + (2 * i + dy) * w2..][..w2];
                        for j in 0..w {
                            out[2 * j + dx] = zrow[i * w + j] + b;
                        }
                    }
                }
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self
            .cache
            .take()
            .expect("transposed conv backward without forward_train");
        let (_, h, w) = x.chw();
        let hw = h * w;
        let (h2, w2) = (2 * h, 2 * w);
        let o4 = self.out_ch * 4;
        assert_eq!(gy.shape(), &[self.out_ch, h2, w2], "transposed conv grad shape");
        let gd = gy.data();
        let mut gz = vec![T::zero(); o4 * hw];
        for co in 0..self.out_ch {
            let plane = &gd[co * h2 * w2..][..h2 * w2];
            let gb = &mut self.bias.grad.data_mut()[co];
            *gb = *gb + plane.iter().copied().sum::<T>();
            for dy in 0..2 {
                for dx in 0..2 {
                    let zrow = &mut gz[(co * 4 + dy * 2 + dx) * hw..][..hw];
                    for i in 0..h {
                        let row = &plane[(2 * i + dy) * w2..][..w2];
                        for j in 0..w {
                            zrow[i * w + j] = row[2 * j + dx];
                        }
                    }
                }
            }
        }
        gemm(
            self.in_ch,
            hw,
            o4,
            MatRef::row_major(x.data(), hw),
            MatRef::transposed(&gz, hw),
            T::one(),
            self.weight.grad.data_mut(),
            o4,
        );
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            self.in_ch,
            o4,
            hw,
            MatRef::row_major(self.weight.value.data(), o4),
            MatRef::row_major(&gz, hw),
            T::zero(),
            dx.data_mut(),
            hw,
        );
        dx
    }
}

impl<T: Scalar> Module<T> for ConvTranspose2x2<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-channel instance normalization without affine parameters.
#[derive(Clone, Debug, Default)]
pub struct InstanceNorm<T: Scalar = f32> {
    cache: Option<(Tensor<T>, Vec<T>)>,
}

const NORM_EPS: f64 = 1e-5;

impl<T: Scalar> InstanceNorm<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn normalize(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let (c, h, w) = x.chw();
        let n = h * w;
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(c);
        for plane in y.data_mut().chunks_mut(n) {
            let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let var = plane
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            let (m, s) = (T::lit(mean), T::lit(inv));
            plane.iter_mut().for_each(|v| *v = (*v - m) * s);
            inv_std.push(s);
        }
        (y, inv_std)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::normalize(x).0
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (y, inv) = Self::normalize(x);
        self.cache = Some((y.clone(), inv));
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv) = self.cache.take().expect("norm backward without forward_train");
        let (_, h, w) = xhat.chw();
        let n = h * w;
        let nf = n as f64;
        let mut gx = gy.clone();
        for ((g, xh), &s) in gx.data_mut().chunks_mut(n).zip(xhat.data().chunks(n)).zip(&inv) {
            let mg = g.iter().map(|v| v.as_f64()).sum::<f64>() / nf;
            let mgx = g.iter().zip(xh).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / nf;
            let (mg, mgx) = (T::lit(mg), T::lit(mgx));
            for (gv, &xv) in g.iter_mut().zip(xh) {
                *gv = s * (*gv - mg - xv * mgx);
            }
        }
        gx
    }
}

#[derive(Clone, Debug)]
pub struct LeakyRelu<T: Scalar = f32> {
    slope: T,
    cache: Option<Vec<bool>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: T::lit(slope),
            cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = self.slope;
        x.map(|v| if v > T::zero() { v } else { v * s })
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        self.forward(x)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mask = self.cache.take().expect("leaky relu backward without forward_train");
        let mut g = gy.clone();
        for (v, pos) in g.data_mut().iter_mut().zip(mask) {
            if !pos {
                *v = *v * self.slope;
            }
        }
        g
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tanh<T: Scalar = f32> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Tanh<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.tanh())
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.forward(x);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let y = self.cache.take().expect("tanh backward without forward_train");
        let mut g = gy.clone();
        for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
            *gv = *gv * (T::one() - yv * yv);
        }
        g
    }
}

/// Clamp to `[-1, 1]`; identity (and unit gradient) inside the interval.
#[derive(Clone, Debug)]
pub struct HardTanh<T: Scalar = f32> {
    cache: Option<Vec<bool>>,
    _elem: std::marker::PhantomData<T>,
}

impl<T: Scalar> Default for HardTanh<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> HardTanh<T> {
    pub fn new() -> Self {
        Self {
            cache: None,
            _elem: std::marker::PhantomData,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(-T::one()).min(T::one()))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(x.data().iter().map(|&v| v >= -T::one() && v <= T::one()).collect());
        self.forward(x)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mask = self.cache.take().expect("hardtanh backward without forward_train");
        let mut g = gy.clone();
        for (v, inside) in g.data_mut().iter_mut().zip(mask) {
            if !inside {
                *v = T::zero();
            }
        }
        g
    }
}

/// Fully connected layer on a `[in]` vector.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, init: Init, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init_tensor(&[outputs, inputs], inputs, init, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (out, inp) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        assert_eq!(x.len(), inp, "linear input length");
        let w = self.weight.value.data();
        let data = (0..out)
            .map(|o| {
                w[o * inp..(o + 1) * inp]
                    .iter()
                    .zip(x.data())
                    .map(|(&a, &b)| a * b)
                    .sum::<T>()
                    + self.bias.value.data()[o]
            })
            .collect();
        Tensor::from_vec(&[out], data).expect("length matches")
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.cache = Some(x.clone());
        self.forward(x)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("linear backward without forward_train");
        let (out, inp) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        let mut gx = Tensor::zeros(&[inp]);
        for o in 0..out {
            let g = gy.data()[o];
            let gb = &mut self.bias.grad.data_mut()[o];
            *gb = *gb + g;
            let wrow = &self.weight.value.data()[o * inp..(o + 1) * inp];
            let grow = &mut self.weight.grad.data_mut()[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grow[i] = grow[i] + g * x.data()[i];
                gx.data_mut()[i] = gx.data()[i] + g * wrow[i];
            }
        }
        gx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// `[C, H, W] → [C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let n = T::lit((h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::from_vec(&[c], data).expect("length matches")
}

pub fn global_avg_pool_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let c = gy.len();
    let n = T::lit((h * w) as f64);
    let mut data = Vec::with_capacity(c * h * w);
    for &g in gy.data() {
        data.extend(std::iter::repeat_n(g / n, h * w));
    }
    Tensor::from_vec(&[c, h, w], data).expect("length matches")
}

/// Convolution optionally followed by instance norm and a leaky ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock<T: Scalar = f32> {
    pub conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
    act: Option<LeakyRelu<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(conv: Conv2d<T>, norm: bool, slope: Option<f64>) -> Self {
        Self {
            conv,
            norm: norm.then(InstanceNorm::new),
            act: slope.map(LeakyRelu::new),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.conv.forward(x);
        if let Some(n) = &self.norm {
            y = n.forward(&y);
        }
        if let Some(a) = &self.act {
            y = a.forward(&y);
        }
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.conv.forward_train(x);
        if let Some(n) = &mut self.norm {
            y = n.forward_train(&y);
        }
        if let Some(a) = &mut self.act {
            y = a.forward_train(&y);
        }
        y
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Tensor<T> {
        let mut g = gy.clone();
        if let Some(a) = &mut self.act {
            g = a.backward(&g);
        }
        if let Some(n) = &mut self.norm {
            g = n.backward(&g);
        }
        self.conv.backward(&g)
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}
