//! Dense tensor types shared by every matching routine.
//!
//! All rank-3 tensors use one layout: row-major `(channel, row, column)`.
//! Values are stored as `f32`; the matching kernels widen to `f64` while
//! accumulating.

use crate::error::{mismatch, Error, Result};

/// Channel vectors with a Euclidean norm below this are mapped to zero.
pub const NORM_EPS: f64 = 1e-12;

/// Tolerance on `background + foreground = 1` for masks built from binary data.
pub const MASK_SUM_TOL: f32 = 1e-4;

/// A spatial grid of `height x width` pixels addressed by flat row-major index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.height {
            return Err(Error::IndexOutOfRange {
                index: row,
                bound: self.height,
            });
        }
        if col >= self.width {
            return Err(Error::IndexOutOfRange {
                index: col,
                bound: self.width,
            });
        }
        Ok(row * self.width + col)
    }

    pub fn unflatten(&self, idx: usize) -> Result<(usize, usize)> {
        if idx >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                bound: self.len(),
            });
        }
        Ok((idx / self.width, idx % self.width))
    }
}

fn check_positive(what: &str, dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "{what} dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(mismatch(format!(
            "{what}: expected {expected} values, got {actual}"
        )));
    }
    Ok(())
}

fn check_finite(what: &str, data: &[f32]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "{what}: non-finite value at offset {pos}"
        )));
    }
    Ok(())
}

/// Embedded frame features, `channels x height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    grid: Grid,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_positive("feature map", &[channels, height, width])?;
        check_len("feature map", channels * height * width, data.len())?;
        check_finite("feature map", &data)?;
        Ok(Self {
            channels,
            grid: Grid::new(height, width),
            data,
        })
    }

    /// Builds a map by evaluating `f(channel, row, col)` in layout order.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Builds a map from per-pixel channel vectors given in flat pixel order.
    pub fn from_pixels(
        channels: usize,
        height: usize,
        width: usize,
        pixels: &[Vec<f32>],
    ) -> Result<Self> {
        check_len("pixel list", height * width, pixels.len())?;
        if let Some(bad) = pixels.iter().find(|p| p.len() != channels) {
            return Err(mismatch(format!(
                "pixel vector has {} channels, expected {channels}",
                bad.len()
            )));
        }
        Self::from_fn(channels, height, width, |c, y, x| pixels[y * width + x][c])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn pixels(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.grid.height + row) * self.grid.width + col]
    }

    /// Channel value at a flat pixel index.
    pub fn at(&self, channel: usize, pixel: usize) -> f32 {
        self.data[channel * self.pixels() + pixel]
    }

    /// Copies the channel vector of one pixel.
    pub fn pixel_vector(&self, pixel: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.at(c, pixel)).collect()
    }

    /// Rescales every pixel's channel vector to unit Euclidean norm.
    ///
    /// Vectors whose norm is below [`NORM_EPS`] become all zeros.
    pub fn l2_normalize_channels(&self) -> FeatureMap {
        let plane = self.pixels();
        let mut data = vec![0.0f32; self.data.len()];
        for p in 0..plane {
            let norm = (0..self.channels)
                .map(|c| {
                    let v = self.data[c * plane + p] as f64;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            if norm < NORM_EPS {
                continue;
            }
            for c in 0..self.channels {
                data[c * plane + p] = (self.data[c * plane + p] as f64 / norm) as f32;
            }
        }
        FeatureMap {
            channels: self.channels,
            grid: self.grid,
            data,
        }
    }
}

/// Background/foreground probability map, `2 x height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMask {
    grid: Grid,
    data: Vec<f32>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_positive("mask", &[height, width])?;
        check_len("mask", 2 * height * width, data.len())?;
        check_finite("mask", &data)?;
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(format!(
                "mask value {} at offset {pos} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            grid: Grid::new(height, width),
            data,
        })
    }

    /// Hard mask from per-pixel foreground flags in flat pixel order.
    pub fn from_binary(height: usize, width: usize, foreground: &[bool]) -> Result<Self> {
        check_len("binary mask", height * width, foreground.len())?;
        let fg: Vec<f32> = foreground
            .iter()
            .map(|&f| if f { 1.0 } else { 0.0 })
            .collect();
        Self::from_foreground(height, width, &fg)
    }

    /// Mask with the given foreground probabilities and `1 - p` as background.
    pub fn from_foreground(height: usize, width: usize, foreground: &[f32]) -> Result<Self> {
        check_len("foreground plane", height * width, foreground.len())?;
        let mut data: Vec<f32> = foreground.iter().map(|&p| 1.0 - p).collect();
        data.extend_from_slice(foreground);
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn background(&self) -> &[f32] {
        &self.data[..self.grid.len()]
    }

    pub fn foreground(&self) -> &[f32] {
        &self.data[self.grid.len()..]
    }

    /// True when every pixel's channels sum to one within `tol`.
    pub fn channels_sum_to_one(&self, tol: f32) -> bool {
        self.background()
            .iter()
            .zip(self.foreground())
            .all(|(b, f)| (b + f - 1.0).abs() <= tol)
    }

    /// Area downsampling: each output pixel is the mean of a `factor x factor` block.
    pub fn downsample(&self, factor: usize) -> Result<ProbMask> {
        if factor == 0 {
            return Err(Error::InvalidParameter(
                "downsample factor must be positive".into(),
            ));
        }
        if !self.height().is_multiple_of(factor) || !self.width().is_multiple_of(factor) {
            return Err(mismatch(format!(
                "mask {}x{} not divisible by factor {factor}",
                self.height(),
                self.width()
            )));
        }
        let (oh, ow) = (self.height() / factor, self.width() / factor);
        let area = (factor * factor) as f64;
        let mut data = Vec::with_capacity(2 * oh * ow);
        for plane in [self.background(), self.foreground()] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut sum = 0.0f64;
                    for dy in 0..factor {
                        let row = (oy * factor + dy) * self.width();
                        for dx in 0..factor {
                            sum += plane[row + ox * factor + dx] as f64;
                        }
                    }
                    data.push(((sum / area) as f32).clamp(0.0, 1.0));
                }
            }
        }
        ProbMask::new(oh, ow, data)
    }
}

/// Reference-pixels x query-pixels similarity or contribution matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    ref_pixels: usize,
    query_pixels: usize,
    data: Vec<f32>,
}

impl AffinityMatrix {
    pub fn new(ref_pixels: usize, query_pixels: usize, data: Vec<f32>) -> Result<Self> {
        check_positive("affinity", &[ref_pixels, query_pixels])?;
        check_len("affinity", ref_pixels * query_pixels, data.len())?;
        check_finite("affinity", &data)?;
        Ok(Self {
            ref_pixels,
            query_pixels,
            data,
        })
    }

    pub(crate) fn from_raw(ref_pixels: usize, query_pixels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), ref_pixels * query_pixels);
        Self {
            ref_pixels,
            query_pixels,
            data,
        }
    }

    pub fn ref_pixels(&self) -> usize {
        self.ref_pixels
    }

    pub fn query_pixels(&self) -> usize {
        self.query_pixels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, p: usize, q: usize) -> f32 {
        self.data[p * self.query_pixels + q]
    }

    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * self.query_pixels..(p + 1) * self.query_pixels]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.query_pixels)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Which half of a two-channel map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Background,
    Foreground,
}

/// Background/foreground matching scores for a query frame, `2 x height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    grid: Grid,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_positive("score map", &[height, width])?;
        check_len("score map", 2 * height * width, data.len())?;
        check_finite("score map", &data)?;
        Ok(Self {
            grid: Grid::new(height, width),
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn background(&self) -> &[f32] {
        &self.data[..self.grid.len()]
    }

    pub fn foreground(&self) -> &[f32] {
        &self.data[self.grid.len()..]
    }

    pub fn channel(&self, channel: Channel) -> &[f32] {
        match channel {
            Channel::Background => self.background(),
            Channel::Foreground => self.foreground(),
        }
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &ScoreMap) -> Option<f32> {
        if self.grid != other.grid {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max),
        )
    }
}

/// Untyped dense tensor of rank 2 or 3, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::UnsupportedRank(dims.len() as u8));
        }
        check_len("tensor", dims.iter().product(), data.len())?;
        Ok(Self { dims, data })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    fn expect_rank3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(mismatch(format!(
                "{what} needs a rank-3 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    fn expect_two_channels(&self, what: &str) -> Result<(usize, usize)> {
        let (c, h, w) = self.expect_rank3(what)?;
        if c != 2 {
            return Err(mismatch(format!("{what} needs 2 channels, got {c}")));
        }
        Ok((h, w))
    }
}

impl From<&FeatureMap> for Tensor {
    fn from(f: &FeatureMap) -> Self {
        Tensor {
            dims: vec![f.channels, f.height(), f.width()],
            data: f.data.clone(),
        }
    }
}

impl From<&ProbMask> for Tensor {
    fn from(m: &ProbMask) -> Self {
        Tensor {
            dims: vec![2, m.height(), m.width()],
            data: m.data.clone(),
        }
    }
}

impl From<&ScoreMap> for Tensor {
    fn from(s: &ScoreMap) -> Self {
        Tensor {
            dims: vec![2, s.height(), s.width()],
            data: s.data.clone(),
        }
    }
}

impl From<&AffinityMatrix> for Tensor {
    fn from(a: &AffinityMatrix) -> Self {
        Tensor {
            dims: vec![a.ref_pixels, a.query_pixels],
            data: a.data.clone(),
        }
    }
}

impl TryFrom<Tensor> for FeatureMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let (c, h, w) = t.expect_rank3("feature map")?;
        FeatureMap::new(c, h, w, t.data)
    }
}

impl TryFrom<Tensor> for ProbMask {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let (h, w) = t.expect_two_channels("mask")?;
        ProbMask::new(h, w, t.data)
    }
}

impl TryFrom<Tensor> for ScoreMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let (h, w) = t.expect_two_channels("score map")?;
        ScoreMap::new(h, w, t.data)
    }
}

impl TryFrom<Tensor> for AffinityMatrix {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [r, q] => AffinityMatrix::new(r, q, t.data),
            _ => Err(mismatch(format!(
                "affinity needs a rank-2 tensor, got dims {:?}",
                t.dims
            ))),
        }
    }
}
