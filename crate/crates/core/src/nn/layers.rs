//! Layer implementations with hand-written backward passes.
//!
//! Every layer has two forward paths: `forward_train` caches what `backward`
//! needs (and updates BatchNorm running statistics), `forward_eval` is pure.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    fn kaiming<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("shape product"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn dims4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(4, what)?;
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

// ---------------------------------------------------------------------------
// Conv2d

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out, in, k, k]`
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::kaiming(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight,
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]))),
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} input too small for a {k}x{k} kernel",
                k = self.kernel
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    /// Unfolds one `C x H x W` sample into `[C*k*k, OH*OW]` columns.
    fn im2col(&self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let npos = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * npos..][..npos];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f64]) {
        let k = self.kernel;
        let npos = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * npos..][..npos];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = dims4(x, "conv2d input")?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((n, h, w, oh, ow))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, oh, ow) = self.check_input(x)?;
        let rows = self.in_channels * self.kernel * self.kernel;
        let npos = oh * ow;
        let mut cols = vec![0.0; rows * npos];
        let mut out = vec![0.0; n * self.out_channels * npos];
        let in_stride = self.in_channels * h * w;
        for (s, y) in out.chunks_mut(self.out_channels * npos).enumerate() {
            self.im2col(
                &x.data()[s * in_stride..(s + 1) * in_stride],
                h,
                w,
                oh,
                ow,
                &mut cols,
            );
            gemm_nn(
                self.out_channels,
                rows,
                npos,
                self.weight.value.data(),
                &cols,
                y,
            );
            if let Some(b) = &self.bias {
                for (plane, &bv) in y.chunks_mut(npos).zip(b.value.data()) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Tensor::new(vec![n, self.out_channels, oh, ow], out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or(Error::NoCachedForward)?;
        let (n, h, w, oh, ow) = self.check_input(&x)?;
        grad.expect_shape(&[n, self.out_channels, oh, ow], "conv2d grad")?;
        let rows = self.in_channels * self.kernel * self.kernel;
        let npos = oh * ow;
        let in_stride = self.in_channels * h * w;
        let out_stride = self.out_channels * npos;
        let mut cols = vec![0.0; rows * npos];
        let mut dcols = vec![0.0; rows * npos];
        let mut dx = vec![0.0; x.len()];
        for s in 0..n {
            let g = &grad.data()[s * out_stride..(s + 1) * out_stride];
            self.im2col(
                &x.data()[s * in_stride..(s + 1) * in_stride],
                h,
                w,
                oh,
                ow,
                &mut cols,
            );
            gemm_nt(
                self.out_channels,
                npos,
                rows,
                g,
                &cols,
                self.weight.grad.data_mut(),
            );
            if let Some(b) = &mut self.bias {
                for (bg, plane) in b.grad.data_mut().iter_mut().zip(g.chunks(npos)) {
                    *bg += plane.iter().sum::<f64>();
                }
            }
            dcols.fill(0.0);
            gemm_tn(
                self.out_channels,
                rows,
                npos,
                self.weight.value.data(),
                g,
                &mut dcols,
            );
            self.col2im(
                &dcols,
                h,
                w,
                oh,
                ow,
                &mut dx[s * in_stride..(s + 1) * in_stride],
            );
        }
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// BatchNorm

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Per-channel batch normalization over `N x C x H x W` (or `N x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    /// (batch, plane size) for a channel-second tensor.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.rank() < 2 || x.shape()[1] != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok((x.shape()[0], x.shape()[2..].iter().product()))
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let plane = x.shape()[2..].iter().product::<usize>();
        let mut xhat = x.clone();
        let mut y = x.clone();
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for (i, (xh, yv)) in xhat
            .data_mut()
            .chunks_mut(plane.max(1))
            .zip(y.data_mut().chunks_mut(plane.max(1)))
            .enumerate()
        {
            let c = i % self.channels;
            for (h, v) in xh.iter_mut().zip(yv.iter_mut()) {
                *h = (*h - mean[c]) * inv_std[c];
                *v = g[c] * *h + b[c];
            }
        }
        (xhat, y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.layout(x)?;
        let inv: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        Ok(self.normalize(x, self.running_mean.data(), &inv).1)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, plane) = self.layout(x)?;
        let m = (n * plane) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for (i, ch) in x.data().chunks(plane.max(1)).enumerate() {
            mean[i % self.channels] += ch.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for (i, ch) in x.data().chunks(plane.max(1)).enumerate() {
            let mu = mean[i % self.channels];
            var[i % self.channels] += ch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (xhat, y) = self.normalize(x, &mean, &inv_std);

        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for c in 0..self.channels {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[c] * unbias;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let BnCache { xhat, inv_std } = self.cache.take().ok_or(Error::NoCachedForward)?;
        grad.expect_shape(xhat.shape(), "batchnorm grad")?;
        let (n, plane) = self.layout(grad)?;
        let m = (n * plane) as f64;
        let mut sum_g = vec![0.0; self.channels];
        let mut sum_gx = vec![0.0; self.channels];
        for (i, (g, xh)) in grad
            .data()
            .chunks(plane.max(1))
            .zip(xhat.data().chunks(plane.max(1)))
            .enumerate()
        {
            let c = i % self.channels;
            sum_g[c] += g.iter().sum::<f64>();
            sum_gx[c] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        }
        for c in 0..self.channels {
            self.beta.grad.data_mut()[c] += sum_g[c];
            self.gamma.grad.data_mut()[c] += sum_gx[c];
        }
        let gamma = self.gamma.value.data();
        let mut dx = grad.clone();
        for (i, (d, xh)) in dx
            .data_mut()
            .chunks_mut(plane.max(1))
            .zip(xhat.data().chunks(plane.max(1)))
            .enumerate()
        {
            let c = i % self.channels;
            let scale = gamma[c] * inv_std[c] / m;
            for (dv, &h) in d.iter_mut().zip(xh) {
                *dv = scale * (m * *dv - sum_g[c] - h * sum_gx[c]);
            }
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// ReLU

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        self.forward_eval(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or(Error::NoCachedForward)?;
        if mask.len() != grad.len() {
            return Err(Error::ShapeMismatch("relu grad".into()));
        }
        let mut g = grad.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// MaxPool (2x2, stride 2)

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxPool {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub const SIZE: usize = 2;

    /// Output plus, per output element, the flat input index that won.
    fn pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (n, c, h, w) = dims4(x, "maxpool input")?;
        let (oh, ow) = (h / Self::SIZE, w / Self::SIZE);
        if oh == 0 || ow == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} input too small to pool"
            )));
        }
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (oy * 2) * w + ox * 2;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (oy * 2 + dy) * w + ox * 2 + dx;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(x.data()[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Self::pool(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, arg) = Self::pool(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (arg, shape) = self.cache.take().ok_or(Error::NoCachedForward)?;
        if arg.len() != grad.len() {
            return Err(Error::ShapeMismatch("maxpool grad".into()));
        }
        let mut dx = Tensor::zeros(&shape);
        for (&i, &g) in arg.iter().zip(grad.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x, "global average pool input")?;
        let plane = h * w;
        if plane == 0 {
            return Err(Error::ShapeMismatch("empty spatial plane".into()));
        }
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        Tensor::new(vec![n, c], data)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or(Error::NoCachedForward)?;
        grad.expect_shape(&shape[..2], "global average pool grad")?;
        let plane = shape[2] * shape[3];
        let scale = 1.0 / plane as f64;
        let data = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
            .collect();
        Tensor::new(shape, data)
    }
}

// ---------------------------------------------------------------------------
// Flatten

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() == 0 {
            return Err(Error::ShapeMismatch("flatten of a scalar".into()));
        }
        let n = x.shape()[0];
        let rest = x.shape()[1..].iter().product();
        x.clone().reshape(&[n, rest])
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cache = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.cache.take().ok_or(Error::NoCachedForward)?;
        grad.clone().reshape(&shape)
    }
}

// ---------------------------------------------------------------------------
// Linear

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::kaiming(&[out_features, in_features], in_features, rng),
            bias: Param::new(Tensor::zeros(&[out_features])),
            cache: None,
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(2, "linear input")?;
        let n = x.shape()[0];
        if x.shape()[1] != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.shape()[1]
            )));
        }
        let mut y = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            y.extend_from_slice(self.bias.value.data());
        }
        gemm_nt(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            self.weight.value.data(),
            &mut y,
        );
        Tensor::new(vec![n, self.out_features], y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.take().ok_or(Error::NoCachedForward)?;
        let n = x.shape()[0];
        grad.expect_shape(&[n, self.out_features], "linear grad")?;
        gemm_tn(
            n,
            self.out_features,
            self.in_features,
            grad.data(),
            x.data(),
            self.weight.grad.data_mut(),
        );
        for row in grad.data().chunks(self.out_features) {
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![0.0; n * self.in_features];
        gemm_nn(
            n,
            self.out_features,
            self.in_features,
            grad.data(),
            self.weight.value.data(),
            &mut dx,
        );
        Tensor::new(vec![n, self.in_features], dx)
    }
}

// ---------------------------------------------------------------------------
// ResidualBlock

/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`, where the shortcut
/// is a strided 1x1 conv + BN when the shape changes and identity otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    relu1: Relu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
    relu_out: Relu,
}

impl ResidualBlock {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, false, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, false, rng);
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::new(in_channels, out_channels, 1, stride, 0, false, rng),
                BatchNorm::new(out_channels),
            )
        });
        Self {
            in_channels,
            out_channels,
            stride,
            conv1,
            bn1: BatchNorm::new(out_channels),
            relu1: Relu::default(),
            conv2,
            bn2: BatchNorm::new(out_channels),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    fn add(mut a: Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "residual sum {:?} + {:?}",
                a.shape(),
                b.shape()
            )));
        }
        a.data_mut()
            .iter_mut()
            .zip(b.data())
            .for_each(|(x, y)| *x += y);
        Ok(a)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward_eval(x)?;
        let h = self.bn1.forward_eval(&h)?;
        let h = self.relu1.forward_eval(&h)?;
        let h = self.conv2.forward_eval(&h)?;
        let h = self.bn2.forward_eval(&h)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward_eval(&conv.forward_eval(x)?)?,
            None => x.clone(),
        };
        self.relu_out.forward_eval(&Self::add(h, &skip)?)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward_train(x)?;
        let h = self.bn1.forward_train(&h)?;
        let h = self.relu1.forward_train(&h)?;
        let h = self.conv2.forward_train(&h)?;
        let h = self.bn2.forward_train(&h)?;
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => bn.forward_train(&conv.forward_train(x)?)?,
            None => x.clone(),
        };
        self.relu_out.forward_train(&Self::add(h, &skip)?)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad)?;
        let main = self.bn2.backward(&g)?;
        let main = self.conv2.backward(&main)?;
        let main = self.relu1.backward(&main)?;
        let main = self.bn1.backward(&main)?;
        let main = self.conv1.backward(&main)?;
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => conv.backward(&bn.backward(&g)?)?,
            None => g,
        };
        Self::add(main, &skip)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend([&self.bn1.gamma, &self.bn1.beta]);
        v.extend(self.conv2.params());
        v.extend([&self.bn2.gamma, &self.bn2.beta]);
        if let Some((conv, bn)) = &self.shortcut {
            v.extend(conv.params());
            v.extend([&bn.gamma, &bn.beta]);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend([&mut self.bn1.gamma, &mut self.bn1.beta]);
        v.extend(self.conv2.params_mut());
        v.extend([&mut self.bn2.gamma, &mut self.bn2.beta]);
        if let Some((conv, bn)) = &mut self.shortcut {
            v.extend(conv.params_mut());
            v.extend([&mut bn.gamma, &mut bn.beta]);
        }
        v
    }

    fn batchnorms(&self) -> Vec<&BatchNorm> {
        let mut v = vec![&self.bn1, &self.bn2];
        if let Some((_, bn)) = &self.shortcut {
            v.push(bn);
        }
        v
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, bn)) = &mut self.shortcut {
            v.push(bn);
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Layer

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Linear(Linear),
    Residual(ResidualBlock),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::Flatten(_) => "flatten",
            Layer::Linear(_) => "linear",
            Layer::Residual(_) => "residual_block",
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let y = match self {
                    Layer::Conv2d(l) => l.forward_train(x),
                    Layer::BatchNorm(l) => l.forward_train(x),
                    Layer::Relu(l) => l.forward_train(x),
                    Layer::MaxPool(l) => l.forward_train(x),
                    Layer::GlobalAvgPool(l) => l.forward_train(x),
                    Layer::Flatten(l) => l.forward_train(x),
                    Layer::Linear(l) => l.forward_train(x),
                    Layer::Residual(l) => l.forward_train(x),
                }?;
                y.ensure_finite(self.name())?;
                Ok(y)
            }
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let y = match self {
            Layer::Conv2d(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Relu(l) => l.forward_eval(x),
            Layer::MaxPool(l) => l.forward_eval(x),
            Layer::GlobalAvgPool(l) => l.forward_eval(x),
            Layer::Flatten(l) => l.forward_eval(x),
            Layer::Linear(l) => l.forward_eval(x),
            Layer::Residual(l) => l.forward_eval(x),
        }?;
        y.ensure_finite(self.name())?;
        Ok(y)
    }

    /// Propagates `grad` (w.r.t. this layer's output) to its input and
    /// accumulates parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::Residual(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Residual(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => l.params_mut(),
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Residual(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn batchnorms(&self) -> Vec<&BatchNorm> {
        match self {
            Layer::BatchNorm(l) => vec![l],
            Layer::Residual(l) => l.batchnorms(),
            _ => Vec::new(),
        }
    }

    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match self {
            Layer::BatchNorm(l) => vec![l],
            Layer::Residual(l) => l.batchnorms_mut(),
            _ => Vec::new(),
        }
    }
}
