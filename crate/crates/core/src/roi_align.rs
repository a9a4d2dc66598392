//! Rotated RoI warping.
//!
//! A rotated RoI is divided into `k × k` bins in its own frame. Each bin is
//! sampled on an `n × n` grid, every sample is mapped into the image by the
//! RoI's rotation and translation, and the bilinear samples are averaged.
//! Pixel centers sit at integer coordinates and samples outside the tensor
//! read zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point};

pub const DEFAULT_BINS: usize = 7;
pub const DEFAULT_SAMPLES_PER_BIN_SIDE: usize = 2;
pub const DEFAULT_CHANNELS_OUT: usize = 10;

/// Dense `height × width × channels` grid, stored `(y, x, c)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "feature dimensions must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(height, width, channels)?;
        if data.len() != t.data.len() {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                t.data.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite feature value at flat index {i}"
            )));
        }
        t.data = data;
        Ok(t)
    }

    /// Builds a tensor by evaluating `f(x, y, c)` at every pixel center.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes one value. Panics on out-of-range indices or non-finite values.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        assert!(v.is_finite(), "feature values must be finite");
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    /// Pixel value with zero padding outside the grid.
    #[inline]
    fn at(&self, x: i64, y: i64, c: usize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.get(x as usize, y as usize, c)
        }
    }
}

/// `k × k × channels_out` output of one pooling call, stored `(i, j, c)`
/// row-major, where `i` indexes bins along the RoI's `w` side and `j` along
/// its `h` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFeature {
    k: usize,
    channels_out: usize,
    data: Vec<f64>,
}

impl PooledFeature {
    pub fn from_vec(k: usize, channels_out: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || channels_out == 0 || data.len() != k * k * channels_out {
            return Err(Error::Shape(format!(
                "pooled feature {k}x{k}x{channels_out} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            k,
            channels_out,
            data,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }
    #[inline]
    pub fn channels_out(&self) -> usize {
        self.channels_out
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.k + j) * self.channels_out + c]
    }

    /// Flattened `(i, j, c)` values, the layout the learner consumes.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Mean of channel `c` over all bins.
    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.k * self.k;
        (0..n)
            .map(|b| self.data[b * self.channels_out + c])
            .sum::<f64>()
            / n as f64
    }
}

/// Sampling grid for one pooling call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub k: usize,
    pub samples_per_bin_side: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_BINS,
            samples_per_bin_side: DEFAULT_SAMPLES_PER_BIN_SIDE,
        }
    }
}

/// Maps RoI-local coordinates (`x ∈ [0, w]`, `y ∈ [0, h]`, origin at the
/// RoI's `(-w/2, -h/2)` corner) into the image.
#[inline]
pub fn transform_point(rroi: &OrientedBox, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = rroi.theta().sin_cos();
    let (lx, ly) = (x - 0.5 * rroi.w(), y - 0.5 * rroi.h());
    (c * lx - s * ly + rroi.cx(), s * lx + c * ly + rroi.cy())
}

/// Bilinear interpolation of channel `c` at `(x, y)`.
///
/// Written in lerp form so a constant neighborhood reproduces its value
/// exactly.
pub fn bilinear_sample(feature: &FeatureTensor, x: f64, y: f64, c: usize) -> f64 {
    assert!(c < feature.channels, "channel {c} out of range");
    if !(x > -1.0 && y > -1.0 && x < feature.width as f64 && y < feature.height as f64) {
        return 0.0;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = feature.at(ix, iy, c);
    let v10 = feature.at(ix + 1, iy, c);
    let v01 = feature.at(ix, iy + 1, c);
    let v11 = feature.at(ix + 1, iy + 1, c);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Rotated position-sensitive RoI Align.
///
/// `feature` must have `k² · C_out` channels. Bin `(i, j)` of output channel
/// `c` reads input channel `(i·k + j)·C_out + c`.
pub fn rps_roi_align(
    feature: &FeatureTensor,
    rroi: &OrientedBox,
    k: usize,
    samples_per_bin_side: usize,
) -> Result<PooledFeature> {
    check_grid(k, samples_per_bin_side)?;
    let groups = k * k;
    if !feature.channels.is_multiple_of(groups) {
        return Err(Error::Shape(format!(
            "{} channels are not divisible by k² = {groups}",
            feature.channels
        )));
    }
    let channels_out = feature.channels / groups;
    pool(
        feature,
        rroi,
        k,
        samples_per_bin_side,
        channels_out,
        |i, j, c| (i * k + j) * channels_out + c,
    )
}

/// Plain rotated RoI Align: every output channel reads its own input channel.
pub fn roi_align(
    feature: &FeatureTensor,
    rroi: &OrientedBox,
    k: usize,
    samples_per_bin_side: usize,
) -> Result<PooledFeature> {
    check_grid(k, samples_per_bin_side)?;
    pool(
        feature,
        rroi,
        k,
        samples_per_bin_side,
        feature.channels,
        |_, _, c| c,
    )
}

fn check_grid(k: usize, n: usize) -> Result<()> {
    if k == 0 || n == 0 {
        return Err(Error::Shape(format!(
            "bins per side and samples per bin side must be >= 1, got k={k}, n={n}"
        )));
    }
    Ok(())
}

fn pool(
    feature: &FeatureTensor,
    rroi: &OrientedBox,
    k: usize,
    n: usize,
    channels_out: usize,
    channel_of: impl Fn(usize, usize, usize) -> usize,
) -> Result<PooledFeature> {
    let step_x = rroi.w() / (k * n) as f64;
    let step_y = rroi.h() / (k * n) as f64;
    let mut points = Vec::with_capacity(n * n);
    let mut data = vec![0.0; k * k * channels_out];
    for i in 0..k {
        for j in 0..k {
            points.clear();
            for sx in 0..n {
                for sy in 0..n {
                    let lx = (i * n) as f64 * step_x + (sx as f64 + 0.5) * step_x;
                    let ly = (j * n) as f64 * step_y + (sy as f64 + 0.5) * step_y;
                    let (x, y) = transform_point(rroi, lx, ly);
                    points.push(Point::new(x, y));
                }
            }
            let out = &mut data[(i * k + j) * channels_out..][..channels_out];
            for (c, slot) in out.iter_mut().enumerate() {
                let src = channel_of(i, j, c);
                // Running mean: a constant field stays exactly constant.
                let mut mean = 0.0;
                for (count, p) in points.iter().enumerate() {
                    let v = bilinear_sample(feature, p.x, p.y, src);
                    mean += (v - mean) / (count + 1) as f64;
                }
                *slot = mean;
            }
        }
    }
    PooledFeature::from_vec(k, channels_out, data)
}
