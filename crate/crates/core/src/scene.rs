//! Synthetic feature-map scenes with known ground truth.
//!
//! All draws come from [`SplitMix64`] in a fixed order that does not depend
//! on the number of distractor copies, so scenes with the same seed but more
//! copies differ only at the extra copy pixels.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{FeatureMap, ProbMask};

/// Norm of the shared foreground feature.
pub const FOREGROUND_MAGNITUDE: f32 = 4.0;
/// Background features must satisfy `|cos(b, u)| < COSINE_LIMIT`.
pub const COSINE_LIMIT: f64 = 0.3;
/// Draws allowed per background feature before giving up.
pub const MAX_DRAWS: usize = 10_000;

/// Query frame containing the true object plus exact feature copies of it.
#[derive(Clone, Debug, PartialEq)]
pub struct DistractorScene {
    pub reference: FeatureMap,
    pub ref_mask: ProbMask,
    pub query: FeatureMap,
    /// Flat index of the single foreground reference pixel.
    pub ref_fg_pixel: usize,
    /// True foreground locations in the query.
    pub fg_query_pixels: Vec<usize>,
    /// Background query pixels carrying the foreground feature.
    pub distractor_pixels: Vec<usize>,
    pub n_copies: usize,
}

/// Seeded random reference/mask/query triple.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomScene {
    pub reference: FeatureMap,
    pub ref_mask: ProbMask,
    pub query: FeatureMap,
}

/// The foreground feature: `FOREGROUND_MAGNITUDE` times the first basis vector.
pub fn foreground_feature(channels: usize) -> Vec<f32> {
    let mut u = vec![0.0f32; channels];
    u[0] = FOREGROUND_MAGNITUDE;
    u
}

/// Standard-normal vector with `|cos(b, u)| < COSINE_LIMIT` and `b.u < u.u`.
fn background_feature(rng: &mut SplitMix64, u: &[f32]) -> Result<Vec<f32>> {
    let uu: f64 = u.iter().map(|&x| (x as f64).powi(2)).sum();
    for _ in 0..MAX_DRAWS {
        let b: Vec<f32> = (0..u.len()).map(|_| rng.normal() as f32).collect();
        let bb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum();
        let ub: f64 = b.iter().zip(u).map(|(&x, &y)| x as f64 * y as f64).sum();
        if bb == 0.0 {
            continue;
        }
        let cos = ub / (bb.sqrt() * uu.sqrt());
        if cos.abs() < COSINE_LIMIT && ub < uu {
            return Ok(b);
        }
    }
    Err(Error::Generation(format!(
        "no background feature with |cos| < {COSINE_LIMIT} after {MAX_DRAWS} draws; raise the channel count"
    )))
}

/// Builds a `grid x grid` reference and query with one foreground reference
/// pixel and `n_copies` background distractors that duplicate its feature.
pub fn make_distractor_scene(
    grid: usize,
    channels: usize,
    n_copies: usize,
    seed: u64,
) -> Result<DistractorScene> {
    if grid < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least 2, got {grid}"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidParameter("channels must be positive".into()));
    }
    let pixels = grid * grid;
    if n_copies == 0 || n_copies + 1 > pixels {
        return Err(Error::InvalidParameter(format!(
            "copies must be in 1..={} for a {grid}x{grid} grid, got {n_copies}",
            pixels - 1
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let u = foreground_feature(channels);

    let ref_fg_pixel = rng.below(pixels);
    let order = rng.permutation(pixels);
    let fg_query = order[0];
    let distractors: Vec<usize> = order[1..=n_copies].to_vec();

    let mut ref_pixels = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let b = background_feature(&mut rng, &u)?;
        ref_pixels.push(if p == ref_fg_pixel { u.clone() } else { b });
    }
    let mut query_pixels = Vec::with_capacity(pixels);
    for _ in 0..pixels {
        query_pixels.push(background_feature(&mut rng, &u)?);
    }
    query_pixels[fg_query] = u.clone();
    for &d in &distractors {
        query_pixels[d] = u.clone();
    }

    let fg_flags: Vec<bool> = (0..pixels).map(|p| p == ref_fg_pixel).collect();
    Ok(DistractorScene {
        reference: FeatureMap::from_pixels(channels, grid, grid, &ref_pixels)?,
        ref_mask: ProbMask::from_binary(grid, grid, &fg_flags)?,
        query: FeatureMap::from_pixels(channels, grid, grid, &query_pixels)?,
        ref_fg_pixel,
        fg_query_pixels: vec![fg_query],
        distractor_pixels: distractors,
        n_copies,
    })
}

/// Standard-normal features and a random hard mask. When the reference has
/// at least two pixels the mask contains both classes.
pub fn make_random_scene(
    grid_ref: usize,
    grid_query: usize,
    channels: usize,
    seed: u64,
) -> Result<RandomScene> {
    if grid_ref == 0 || grid_query == 0 || channels == 0 {
        return Err(Error::InvalidParameter(
            "scene dimensions must be positive".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let reference =
        FeatureMap::from_fn(channels, grid_ref, grid_ref, |_, _, _| rng.normal() as f32)?;
    let query = FeatureMap::from_fn(channels, grid_query, grid_query, |_, _, _| {
        rng.normal() as f32
    })?;
    let n = grid_ref * grid_ref;
    let mut fg: Vec<bool> = (0..n).map(|_| rng.next_u64() >> 63 == 1).collect();
    if n >= 2 {
        if fg.iter().all(|&f| f) {
            fg[rng.below(n)] = false;
        } else if fg.iter().all(|&f| !f) {
            fg[rng.below(n)] = true;
        }
    }
    let ref_mask = ProbMask::from_binary(grid_ref, grid_ref, &fg)?;
    Ok(RandomScene {
        reference,
        ref_mask,
        query,
    })
}
