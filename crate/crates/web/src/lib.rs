//! Browser demo: explore how each matching mechanism treats background
//! distractors on a synthetic scene.
//!
//! The exported API is deliberately small:
//! - [`Scene::scores`]: foreground score map for a mechanism, plus the
//!   true-foreground score, the strongest distractor score and their margin;
//! - [`Scene::reference_row`]: the foreground reference pixel's (filtered)
//!   affinity over the query grid, i.e. what that pixel hands out;
//! - [`dilution_curve`]: distractor score as the number of copies grows.

use pixmatch::scene::{make_distractor_scene, DistractorScene};
use pixmatch::{
    affinity_equalized, affinity_surjective, embed_mask, kernel_filter, match_frames, topk_filter,
    MatchConfig, Mechanism,
};
use wasm_bindgen::prelude::*;

fn config(mechanism: &str, sigma: f64, k: u32) -> Result<MatchConfig, String> {
    let m = Mechanism::from_name(mechanism)
        .ok_or_else(|| format!("unknown mechanism {mechanism:?}"))?;
    let cfg = MatchConfig {
        mechanism: m,
        kernel_sigma: sigma,
        top_k: k as usize,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[wasm_bindgen]
pub struct Scene {
    inner: DistractorScene,
}

/// Foreground scores of one mechanism on the scene.
#[wasm_bindgen]
pub struct ScoreView {
    values: Vec<f32>,
    gray: Vec<u8>,
    fg_true: f32,
    distractor_max: f32,
}

#[wasm_bindgen]
impl ScoreView {
    /// Raw foreground scores in row-major order.
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// Scores min-max normalized to 0..=255.
    pub fn gray(&self) -> Vec<u8> {
        self.gray.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn fg_true(&self) -> f32 {
        self.fg_true
    }

    #[wasm_bindgen(getter)]
    pub fn distractor_max(&self) -> f32 {
        self.distractor_max
    }

    #[wasm_bindgen(getter)]
    pub fn margin(&self) -> f32 {
        self.fg_true - self.distractor_max
    }
}

impl Scene {
    pub fn build(grid: u32, channels: u32, copies: u32, seed: u32) -> Result<Scene, String> {
        make_distractor_scene(
            grid as usize,
            channels as usize,
            copies as usize,
            seed as u64,
        )
        .map(|inner| Scene { inner })
        .map_err(|e| e.to_string())
    }

    pub fn score_view(&self, mechanism: &str, sigma: f64, k: u32) -> Result<ScoreView, String> {
        let cfg = config(mechanism, sigma, k)?;
        let s = &self.inner;
        let map =
            match_frames(&s.reference, &s.ref_mask, &s.query, &cfg).map_err(|e| e.to_string())?;
        let fg = map.foreground();
        let max_at = |idx: &[usize]| idx.iter().map(|&p| fg[p]).fold(f32::NEG_INFINITY, f32::max);
        Ok(ScoreView {
            values: fg.to_vec(),
            gray: pixmatch::io::normalize_to_gray(fg),
            fg_true: max_at(&s.fg_query_pixels),
            distractor_max: max_at(&s.distractor_pixels),
        })
    }

    pub fn row_values(&self, mechanism: &str, sigma: f64, k: u32) -> Result<Vec<f32>, String> {
        let cfg = config(mechanism, sigma, k)?;
        let s = &self.inner;
        let err = |e: pixmatch::Error| e.to_string();
        let a = match cfg.mechanism {
            Mechanism::Equalized => affinity_equalized(&s.reference, &s.query).map_err(err)?,
            _ => affinity_surjective(&s.reference, &s.query).map_err(err)?,
        };
        let (_, fg) = embed_mask(&a, &s.ref_mask).map_err(err)?;
        let fg = match cfg.mechanism {
            Mechanism::BijectiveKernel => {
                kernel_filter(&fg, s.query.height(), s.query.width(), sigma).map_err(err)?
            }
            Mechanism::BijectiveTopK => topk_filter(&fg, cfg.top_k).map_err(err)?,
            _ => fg,
        };
        Ok(fg.row(s.ref_fg_pixel).to_vec())
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(grid: u32, channels: u32, copies: u32, seed: u32) -> Result<Scene, JsError> {
        Scene::build(grid, channels, copies, seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn grid(&self) -> u32 {
        self.inner.query.width() as u32
    }

    pub fn fg_query_pixels(&self) -> Vec<u32> {
        self.inner
            .fg_query_pixels
            .iter()
            .map(|&p| p as u32)
            .collect()
    }

    pub fn distractor_pixels(&self) -> Vec<u32> {
        self.inner
            .distractor_pixels
            .iter()
            .map(|&p| p as u32)
            .collect()
    }

    /// Foreground score map for `mechanism` (`surjective`, `kernel`, `topk`, `equalized`).
    pub fn scores(&self, mechanism: &str, sigma: f64, k: u32) -> Result<ScoreView, JsError> {
        self.score_view(mechanism, sigma, k)
            .map_err(|e| JsError::new(&e))
    }

    /// The foreground reference pixel's class-embodied affinity row after the
    /// mechanism's filter, laid out on the query grid.
    pub fn reference_row(&self, mechanism: &str, sigma: f64, k: u32) -> Result<Vec<f32>, JsError> {
        self.row_values(mechanism, sigma, k)
            .map_err(|e| JsError::new(&e))
    }
}

/// Distractor foreground score for 1..=max_copies copies, interleaved as
/// `[surjective_1, equalized_1, surjective_2, equalized_2, ...]`.
pub fn dilution_values(
    grid: u32,
    channels: u32,
    seed: u32,
    max_copies: u32,
) -> Result<Vec<f32>, String> {
    let mut out = Vec::with_capacity(2 * max_copies as usize);
    for n in 1..=max_copies {
        let s = Scene::build(grid, channels, n, seed)?;
        let d = s.inner.distractor_pixels[0];
        for m in ["surjective", "equalized"] {
            out.push(s.score_view(m, 1.0, 1)?.values[d]);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn dilution_curve(
    grid: u32,
    channels: u32,
    seed: u32,
    max_copies: u32,
) -> Result<Vec<f32>, JsError> {
    dilution_values(grid, channels, seed, max_copies).map_err(|e| JsError::new(&e))
}
