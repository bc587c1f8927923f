//! Surjective, bijective (Gaussian kernel / top-K) and equalized matching.
//!
//! Every mechanism starts from an affinity matrix with one row per reference
//! pixel and one column per query pixel, scales each row by the reference
//! mask (class embedding), optionally filters rows, and finally takes the
//! maximum over reference pixels for each query pixel.
//!
//! Rows are independent, so the affinity and filter stages are split over
//! reference rows; the query-wise maximum is split over query columns. Each
//! output element is computed by the same sequence of operations regardless
//! of the split.

use std::cmp::Ordering;

use crate::error::{mismatch, Error, Result};
use crate::par::for_each_chunk;
use crate::tensor::{AffinityMatrix, FeatureMap, Grid, ProbMask, ScoreMap, Tensor, NORM_EPS};

/// Reference rows handled together by the dot-product kernel.
const ROW_BLOCK: usize = 4;
/// Query columns per task in the query-wise maximum.
const COL_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Surjective,
    BijectiveKernel,
    BijectiveTopK,
    Equalized,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Surjective,
        Mechanism::BijectiveKernel,
        Mechanism::BijectiveTopK,
        Mechanism::Equalized,
    ];

    /// Short CLI-style name.
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Surjective => "surjective",
            Mechanism::BijectiveKernel => "kernel",
            Mechanism::BijectiveTopK => "topk",
            Mechanism::Equalized => "equalized",
        }
    }

    pub fn from_name(name: &str) -> Option<Mechanism> {
        Mechanism::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Which reference frame a configuration is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceRole {
    Initial,
    Previous,
}

pub const DEFAULT_SIGMA_INITIAL: f64 = 32.0;
pub const DEFAULT_SIGMA_PREVIOUS: f64 = 32.0;
pub const DEFAULT_TOPK_INITIAL: usize = 128;
pub const DEFAULT_TOPK_PREVIOUS: usize = 16;

/// Mechanism plus its hyper-parameter. Only the parameter belonging to the
/// selected mechanism is read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchConfig {
    pub mechanism: Mechanism,
    /// Gaussian kernel standard deviation in query-grid pixels.
    pub kernel_sigma: f64,
    /// Query pixels kept per reference pixel.
    pub top_k: usize,
}

impl MatchConfig {
    /// Tuned defaults for a reference frame role.
    pub fn tuned(mechanism: Mechanism, role: ReferenceRole) -> Self {
        let (kernel_sigma, top_k) = match role {
            ReferenceRole::Initial => (DEFAULT_SIGMA_INITIAL, DEFAULT_TOPK_INITIAL),
            ReferenceRole::Previous => (DEFAULT_SIGMA_PREVIOUS, DEFAULT_TOPK_PREVIOUS),
        };
        Self {
            mechanism,
            kernel_sigma,
            top_k,
        }
    }

    pub fn surjective() -> Self {
        Self::tuned(Mechanism::Surjective, ReferenceRole::Initial)
    }

    pub fn equalized() -> Self {
        Self::tuned(Mechanism::Equalized, ReferenceRole::Initial)
    }

    pub fn kernel(sigma: f64) -> Self {
        Self {
            kernel_sigma: sigma,
            ..Self::tuned(Mechanism::BijectiveKernel, ReferenceRole::Initial)
        }
    }

    pub fn topk(k: usize) -> Self {
        Self {
            top_k: k,
            ..Self::tuned(Mechanism::BijectiveTopK, ReferenceRole::Initial)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mechanism {
            Mechanism::BijectiveKernel => check_sigma(self.kernel_sigma),
            Mechanism::BijectiveTopK => check_k(self.top_k),
            Mechanism::Surjective | Mechanism::Equalized => Ok(()),
        }
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::surjective()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "top-k count must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Pixel-major copy of a feature map widened to f64, optionally L2-normalized.
fn pixel_major(f: &FeatureMap, normalize: bool) -> Vec<f64> {
    let (c, n) = (f.channels(), f.pixels());
    let mut out = vec![0.0f64; c * n];
    for p in 0..n {
        let v = &mut out[p * c..(p + 1) * c];
        for (ch, slot) in v.iter_mut().enumerate() {
            *slot = f.at(ch, p) as f64;
        }
        if normalize {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < NORM_EPS {
                v.fill(0.0);
            } else {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
    out
}

/// Dot products of `rows` reference vectors against every query vector,
/// written row-major into `out` (`rows x query_pixels`). Each dot product is
/// a single left-to-right sum over channels.
fn block_dots(refs: &[f64], queries: &[f64], channels: usize, rows: usize, out: &mut [f64]) {
    let n = out.len() / rows;
    if rows == ROW_BLOCK {
        let (r0, rest) = refs.split_at(channels);
        let (r1, rest) = rest.split_at(channels);
        let (r2, r3) = rest.split_at(channels);
        for q in 0..n {
            let qv = &queries[q * channels..(q + 1) * channels];
            let mut acc = [0.0f64; ROW_BLOCK];
            for ch in 0..channels {
                let x = qv[ch];
                acc[0] += r0[ch] * x;
                acc[1] += r1[ch] * x;
                acc[2] += r2[ch] * x;
                acc[3] += r3[ch] * x;
            }
            for (r, a) in acc.into_iter().enumerate() {
                out[r * n + q] = a;
            }
        }
    } else {
        for r in 0..rows {
            let rv = &refs[r * channels..(r + 1) * channels];
            for q in 0..n {
                let qv = &queries[q * channels..(q + 1) * channels];
                let mut acc = 0.0f64;
                for ch in 0..channels {
                    acc += rv[ch] * qv[ch];
                }
                out[r * n + q] = acc;
            }
        }
    }
}

fn check_channels(reference: &FeatureMap, query: &FeatureMap) -> Result<()> {
    if reference.channels() != query.channels() {
        return Err(mismatch(format!(
            "reference has {} channels, query has {}",
            reference.channels(),
            query.channels()
        )));
    }
    Ok(())
}

/// Builds an affinity matrix from dot products, post-processing each row of
/// f64 dots into the stored f32 row.
fn affinity_with<F>(
    reference: &FeatureMap,
    query: &FeatureMap,
    normalize: bool,
    finish_row: F,
) -> AffinityMatrix
where
    F: Fn(&mut [f64], &mut [f32]) + Send + Sync,
{
    let c = reference.channels();
    let (np, nq) = (reference.pixels(), query.pixels());
    let refs = pixel_major(reference, normalize);
    let queries = pixel_major(query, normalize);
    let mut data = vec![0.0f32; np * nq];
    for_each_chunk(&mut data, ROW_BLOCK * nq, |block, out| {
        let rows = out.len() / nq;
        let p0 = block * ROW_BLOCK;
        let mut dots = vec![0.0f64; rows * nq];
        block_dots(&refs[p0 * c..(p0 + rows) * c], &queries, c, rows, &mut dots);
        for (d, o) in dots.chunks_exact_mut(nq).zip(out.chunks_exact_mut(nq)) {
            finish_row(d, o);
        }
    });
    AffinityMatrix::from_raw(np, nq, data)
}

/// Linearly rescaled cosine similarity, `(cos + 1) / 2`, between every
/// reference and query pixel.
pub fn affinity_surjective(reference: &FeatureMap, query: &FeatureMap) -> Result<AffinityMatrix> {
    check_channels(reference, query)?;
    Ok(affinity_with(reference, query, true, |dots, out| {
        for (o, &d) in out.iter_mut().zip(dots.iter()) {
            *o = (((d + 1.0) / 2.0).clamp(0.0, 1.0)) as f32;
        }
    }))
}

/// Raw dot products followed by a softmax over each reference row, so every
/// reference pixel distributes a total mass of one over the query frame.
pub fn affinity_equalized(reference: &FeatureMap, query: &FeatureMap) -> Result<AffinityMatrix> {
    check_channels(reference, query)?;
    Ok(affinity_with(reference, query, false, |dots, out| {
        softmax_in_place(dots);
        for (o, &d) in out.iter_mut().zip(dots.iter()) {
            *o = d as f32;
        }
    }))
}

/// Max-subtracted softmax; the normalizer is summed left to right.
fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Scales each affinity row by the background and foreground probability of
/// its reference pixel, returning `(A_bg, A_fg)`.
pub fn embed_mask(
    a: &AffinityMatrix,
    ref_mask: &ProbMask,
) -> Result<(AffinityMatrix, AffinityMatrix)> {
    if ref_mask.grid().len() != a.ref_pixels() {
        return Err(mismatch(format!(
            "mask has {} pixels, affinity has {} reference rows",
            ref_mask.grid().len(),
            a.ref_pixels()
        )));
    }
    let nq = a.query_pixels();
    let scale = |weights: &[f32]| {
        let mut data = a.data().to_vec();
        for_each_chunk(&mut data, nq, |p, row| {
            let w = weights[p];
            row.iter_mut().for_each(|v| *v *= w);
        });
        AffinityMatrix::from_raw(a.ref_pixels(), nq, data)
    };
    Ok((scale(ref_mask.background()), scale(ref_mask.foreground())))
}

fn column_max(b: &AffinityMatrix) -> Vec<f32> {
    let nq = b.query_pixels();
    let mut out = vec![0.0f32; nq];
    for_each_chunk(&mut out, COL_BLOCK, |block, cols| {
        let q0 = block * COL_BLOCK;
        let q1 = q0 + cols.len();
        cols.copy_from_slice(&b.row(0)[q0..q1]);
        for row in b.rows().skip(1) {
            for (m, &v) in cols.iter_mut().zip(&row[q0..q1]) {
                *m = m.max(v);
            }
        }
    });
    out
}

/// Per-query-pixel maximum over reference pixels, stacked as `(bg, fg)`.
pub fn query_wise_max(
    a_bg: &AffinityMatrix,
    a_fg: &AffinityMatrix,
    query_h: usize,
    query_w: usize,
) -> Result<ScoreMap> {
    if a_bg.ref_pixels() != a_fg.ref_pixels() || a_bg.query_pixels() != a_fg.query_pixels() {
        return Err(mismatch(
            "background and foreground affinities differ in shape",
        ));
    }
    if query_h * query_w != a_bg.query_pixels() {
        return Err(mismatch(format!(
            "query grid {query_h}x{query_w} does not match {} affinity columns",
            a_bg.query_pixels()
        )));
    }
    let mut data = column_max(a_bg);
    data.extend(column_max(a_fg));
    ScoreMap::new(query_h, query_w, data)
}

/// Index of the first maximum in a row.
fn first_argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gaussian weight for a squared pixel distance.
#[inline]
pub(crate) fn gaussian_weight(dist_sq: f64, sigma: f64) -> f64 {
    (-dist_sq / (2.0 * sigma * sigma)).exp()
}

/// Multiplies each row by a Gaussian centred on that row's best-matching
/// query pixel (first maximum), with distances measured on the query grid.
pub fn kernel_filter(
    b: &AffinityMatrix,
    query_h: usize,
    query_w: usize,
    sigma: f64,
) -> Result<AffinityMatrix> {
    check_sigma(sigma)?;
    if query_h * query_w != b.query_pixels() {
        return Err(mismatch(format!(
            "query grid {query_h}x{query_w} does not match {} affinity columns",
            b.query_pixels()
        )));
    }
    let grid = Grid::new(query_h, query_w);
    let nq = b.query_pixels();
    let mut data = b.data().to_vec();
    for_each_chunk(&mut data, nq, |_, row| {
        let center = first_argmax(row);
        let (cy, cx) = (center / grid.width, center % grid.width);
        for (q, v) in row.iter_mut().enumerate() {
            let dy = (q / grid.width) as f64 - cy as f64;
            let dx = (q % grid.width) as f64 - cx as f64;
            *v = (*v as f64 * gaussian_weight(dy * dy + dx * dx, sigma)) as f32;
        }
    });
    Ok(AffinityMatrix::from_raw(b.ref_pixels(), nq, data))
}

/// Keeps the `k` largest entries of each row and zeroes the rest. Among equal
/// values the smaller column index wins.
pub fn topk_filter(b: &AffinityMatrix, k: usize) -> Result<AffinityMatrix> {
    check_k(k)?;
    let nq = b.query_pixels();
    if k >= nq {
        return Ok(b.clone());
    }
    let mut data = b.data().to_vec();
    for_each_chunk(&mut data, nq, |_, row| {
        let mut order: Vec<usize> = (0..nq).collect();
        let rank =
            |&i: &usize, &j: &usize| -> Ordering { row[j].total_cmp(&row[i]).then(i.cmp(&j)) };
        order.select_nth_unstable_by(k - 1, rank);
        let mut keep = vec![false; nq];
        for &i in &order[..k] {
            keep[i] = true;
        }
        for (v, kept) in row.iter_mut().zip(keep) {
            if !kept {
                *v = 0.0;
            }
        }
    });
    Ok(AffinityMatrix::from_raw(b.ref_pixels(), nq, data))
}

fn check_mask_grid(reference: &FeatureMap, ref_mask: &ProbMask) -> Result<()> {
    if reference.grid() != ref_mask.grid() {
        return Err(mismatch(format!(
            "reference grid {}x{} but mask grid {}x{}",
            reference.height(),
            reference.width(),
            ref_mask.height(),
            ref_mask.width()
        )));
    }
    Ok(())
}

/// Transfers the reference mask onto the query frame with the configured
/// mechanism.
pub fn match_frames(
    reference: &FeatureMap,
    ref_mask: &ProbMask,
    query: &FeatureMap,
    cfg: &MatchConfig,
) -> Result<ScoreMap> {
    cfg.validate()?;
    check_channels(reference, query)?;
    check_mask_grid(reference, ref_mask)?;
    let (qh, qw) = (query.height(), query.width());
    let affinity = match cfg.mechanism {
        Mechanism::Equalized => affinity_equalized(reference, query)?,
        _ => affinity_surjective(reference, query)?,
    };
    let (bg, fg) = embed_mask(&affinity, ref_mask)?;
    drop(affinity);
    let (bg, fg) = match cfg.mechanism {
        Mechanism::BijectiveKernel => (
            kernel_filter(&bg, qh, qw, cfg.kernel_sigma)?,
            kernel_filter(&fg, qh, qw, cfg.kernel_sigma)?,
        ),
        Mechanism::BijectiveTopK => (topk_filter(&bg, cfg.top_k)?, topk_filter(&fg, cfg.top_k)?),
        Mechanism::Surjective | Mechanism::Equalized => (bg, fg),
    };
    query_wise_max(&bg, &fg, qh, qw)
}

/// Stacks the initial-frame and previous-frame score maps into a
/// `4 x H x W` tensor ordered (initial bg, initial fg, previous bg, previous fg).
pub fn assemble_score_maps(initial: &ScoreMap, previous: &ScoreMap) -> Result<Tensor> {
    if initial.grid() != previous.grid() {
        return Err(mismatch(format!(
            "score maps {}x{} and {}x{} differ",
            initial.height(),
            initial.width(),
            previous.height(),
            previous.width()
        )));
    }
    let mut data = Vec::with_capacity(2 * initial.data().len());
    data.extend_from_slice(initial.data());
    data.extend_from_slice(previous.data());
    Tensor::new(vec![4, initial.height(), initial.width()], data)
}

/// Reference frame features and (feature-resolution) mask.
#[derive(Clone, Copy, Debug)]
pub struct Reference<'a> {
    pub features: &'a FeatureMap,
    pub mask: &'a ProbMask,
}

/// Matches a query against the initial and previous reference frames with one
/// mechanism, using the tuned per-role hyper-parameters, and returns the
/// stacked four-channel score tensor.
pub fn match_with_references(
    initial: Reference<'_>,
    previous: Reference<'_>,
    query: &FeatureMap,
    mechanism: Mechanism,
) -> Result<Tensor> {
    let first = match_frames(
        initial.features,
        initial.mask,
        query,
        &MatchConfig::tuned(mechanism, ReferenceRole::Initial),
    )?;
    let second = match_frames(
        previous.features,
        previous.mask,
        query,
        &MatchConfig::tuned(mechanism, ReferenceRole::Previous),
    )?;
    assemble_score_maps(&first, &second)
}
