//! Gabor kernels, the fixed filter banks of the four processing flows, and the
//! filtering / rectification / standardization steps applied to their output.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::pipeline::PipelineVariant;

/// Variance floor used by [`standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-6;

/// The four orientations every bank spans, in bank order.
pub const ORIENTATIONS: [f64; 4] = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];

/// Parameters of one Gabor filter. Lengths are in pixels, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    pub amplitude: f64,
    pub sigma: f64,
    pub wavelength: f64,
    pub phase: f64,
    pub orientation: f64,
}

impl GaborParams {
    pub fn new(sigma: f64, wavelength: f64, phase: f64, orientation: f64) -> Self {
        Self {
            amplitude: 1.0,
            sigma,
            wavelength,
            phase,
            orientation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::NonPositiveSigma(self.sigma));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::NonPositiveLambda(self.wavelength));
        }
        Ok(())
    }

    /// The continuous kernel `G(x, y)` before truncation or DC correction.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let envelope = (-(x * x + y * y) / (2.0 * self.sigma * self.sigma)).exp();
        let (s, c) = self.orientation.sin_cos();
        let carrier = (2.0 * PI / self.wavelength * (x * c + y * s) - self.phase).cos();
        self.amplitude * envelope * carrier
    }

    /// Half-width of the sampled kernel, `ceil(3 sigma)`.
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }
}

/// A square kernel of odd side `2 * radius + 1`, centred on the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    radius: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    /// Row-major weights; `weights[(y + r) * size + (x + r)]` is tap `(x, y)`.
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let size = 2 * radius + 1;
        if weights.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        Ok(Self { radius, weights })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tap at offset `(x, y)` from the centre.
    pub fn at(&self, x: isize, y: isize) -> f64 {
        let r = self.radius as isize;
        let size = self.size() as isize;
        self.weights[((y + r) * size + (x + r)) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Samples `G` on the integer grid `[-r, r]^2` without DC correction.
pub fn sample_kernel(p: &GaborParams) -> Result<Kernel2D> {
    p.validate()?;
    let r = p.radius() as isize;
    let mut weights = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in -r..=r {
        for x in -r..=r {
            weights.push(p.eval(x as f64, y as f64));
        }
    }
    Kernel2D::new(r as usize, weights)
}

/// Sampled Gabor kernel with its mean subtracted, so it sums to zero.
pub fn gabor_kernel(p: &GaborParams) -> Result<Kernel2D> {
    let mut k = sample_kernel(p)?;
    let mean = k.sum() / k.weights.len() as f64;
    k.weights.iter_mut().for_each(|w| *w -= mean);
    Ok(k)
}

/// Ordered list of filters: parameter set first, then orientation ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    filters: Vec<(GaborParams, Kernel2D)>,
}

impl GaborBank {
    pub fn from_params(params: impl IntoIterator<Item = GaborParams>) -> Result<Self> {
        let filters = params
            .into_iter()
            .map(|p| gabor_kernel(&p).map(|k| (p, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { filters })
    }

    pub fn filters(&self) -> &[(GaborParams, Kernel2D)] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Filters every image plane with every kernel: `C x H x W -> (C*F) x H x W`,
    /// ordered by input channel then filter.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(3, "filter bank input")?;
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if h == 0 || w == 0 {
            return Err(Error::EmptyImage);
        }
        let mut data = Vec::with_capacity(c * self.len() * h * w);
        for plane in x.data().chunks(h * w) {
            for (_, k) in &self.filters {
                data.extend(correlate_reflect(plane, h, w, k));
            }
        }
        Tensor::new(vec![c * self.len(), h, w], data)
    }
}

/// (sigma, wavelength, phase) rows for the given flow.
pub fn bank_rows(variant: PipelineVariant) -> Result<Vec<(f64, f64, f64)>> {
    const FINE: (f64, f64) = (2.201, 5.66);
    const COARSE: (f64, f64) = (3.128, 8.0);
    match variant {
        PipelineVariant::A => Err(Error::UnknownVariant(
            "a (the plain flow has no filter bank)".into(),
        )),
        PipelineVariant::B => Ok(vec![(FINE.0, FINE.1, 0.0)]),
        PipelineVariant::C => Ok(vec![(FINE.0, FINE.1, 0.0), (FINE.0, FINE.1, FRAC_PI_2)]),
        PipelineVariant::D => Ok(vec![(COARSE.0, COARSE.1, 0.0), (FINE.0, FINE.1, FRAC_PI_2)]),
    }
}

/// The filter bank used by flows b, c and d.
pub fn build_bank(variant: PipelineVariant) -> Result<GaborBank> {
    let rows = bank_rows(variant)?;
    GaborBank::from_params(rows.into_iter().flat_map(|(sigma, lambda, phase)| {
        ORIENTATIONS
            .iter()
            .map(move |&theta| GaborParams::new(sigma, lambda, phase, theta))
    }))
}

/// Mirror-without-repeat border index: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Cross-correlates one `h x w` plane with `k`, reflect-padded, same-size output.
pub fn correlate_reflect(plane: &[f64], h: usize, w: usize, k: &Kernel2D) -> Vec<f64> {
    let r = k.radius();
    let size = k.size();
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let mut padded = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = reflect_index(py as isize - r as isize, h);
        for px in 0..pw {
            let sx = reflect_index(px as isize - r as isize, w);
            padded[py * pw + px] = plane[sy * w + sx];
        }
    }
    let mut out = vec![0.0; h * w];
    for ky in 0..size {
        let krow = &k.weights()[ky * size..(ky + 1) * size];
        for y in 0..h {
            let src = &padded[(y + ky) * pw..(y + ky) * pw + pw];
            let dst = &mut out[y * w..(y + 1) * w];
            for (kx, &kv) in krow.iter().enumerate() {
                for (o, &s) in dst.iter_mut().zip(&src[kx..kx + w]) {
                    *o += kv * s;
                }
            }
        }
    }
    out
}

/// Same-size cross-correlation of an `H x W` tensor with reflect padding.
pub fn conv2d_same(img: &Tensor, k: &Kernel2D) -> Result<Tensor> {
    img.expect_rank(2, "conv2d_same input")?;
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    Tensor::new(vec![h, w], correlate_reflect(img.data(), h, w, k))
}

/// `C x H x W -> 2C x H x W`: channel `2i` is `max(0, x_i)`, `2i + 1` is `max(0, -x_i)`.
pub fn rectify_split(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "rectify_split input")?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let plane = h * w;
    let mut data = Vec::with_capacity(2 * x.len());
    for ch in x.data().chunks(plane.max(1)).take(c) {
        data.extend(ch.iter().map(|&v| v.max(0.0)));
        data.extend(ch.iter().map(|&v| (-v).max(0.0)));
    }
    Tensor::new(vec![2 * c, h, w], data)
}

/// Per-channel `(x - mean) / sqrt(var + eps)` with population variance.
pub fn standardize(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "standardize input")?;
    let plane = x.shape()[1] * x.shape()[2];
    let mut out = x.clone();
    if plane == 0 {
        return Ok(out);
    }
    for ch in out.data_mut().chunks_mut(plane) {
        if ch.iter().all(|&v| v == ch[0]) {
            ch.fill(0.0);
            continue;
        }
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + STANDARDIZE_EPS).sqrt();
        ch.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Ok(out)
}
