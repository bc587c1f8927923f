//! Pixel-level feature matching for semi-supervised video object segmentation.
//!
//! A reference frame with a known mask is matched against a query frame on
//! dense feature maps. Four mechanisms are provided:
//!
//! - surjective: each query pixel takes its best mask-weighted similarity
//!   over all reference pixels;
//! - bijective (Gaussian kernel): each reference row is damped away from its
//!   best-matching query pixel;
//! - bijective (top-K): each reference row keeps only its `k` best query pixels;
//! - equalized: each reference row is softmax-normalized over the query
//!   pixels, so every reference pixel contributes the same total mass.
//!
//! [`oracle`] holds naive reference implementations used for equivalence
//! testing, [`scene`] builds synthetic scenes with background distractors,
//! and [`io`] reads and writes the `EMT1` tensor format and PGM images.
//!
//! ```
//! use pixmatch::{match_frames, scene::make_distractor_scene, MatchConfig};
//!
//! let s = make_distractor_scene(8, 16, 3, 7).unwrap();
//! let sur = match_frames(&s.reference, &s.ref_mask, &s.query, &MatchConfig::surjective()).unwrap();
//! let eq = match_frames(&s.reference, &s.ref_mask, &s.query, &MatchConfig::equalized()).unwrap();
//! let d = s.distractor_pixels[0];
//! assert!(eq.foreground()[d] < sur.foreground()[d]);
//! ```

pub mod error;
pub mod io;
pub mod matching;
pub mod oracle;
mod par;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use matching::{
    affinity_equalized, affinity_surjective, assemble_score_maps, embed_mask, kernel_filter,
    match_frames, match_with_references, query_wise_max, topk_filter, MatchConfig, Mechanism,
    Reference, ReferenceRole,
};
pub use tensor::{AffinityMatrix, Channel, FeatureMap, Grid, ProbMask, ScoreMap, Tensor};
