//! Sparse causal attention over Z-order (Morton) projected keys.
//!
//! Keys and queries live in a low-dimensional space (`d_K` of 1 to 3 in
//! practice), are quantized onto an integer grid and flattened into a single
//! Morton code. Per-chunk sorted code arrays then give every query its `k`
//! causally admissible candidates by binary search, and attention weights come
//! from the inverse-quadratic Cauchy kernel `1 / (‖q − k‖² + γ²)` with a
//! trainable `γ² = sigmoid(θ)`.
//!
//! The crate is framework-free: [`numerics`] supplies the matrix, RNG, Adam and
//! finite-difference pieces every other module builds on.

pub mod bench;
pub mod cauchy_attention;
pub mod error;
pub mod locality_eval;
pub mod morton;
pub mod numerics;
pub mod oracle;
pub mod topk_index;
pub mod toy_train;

pub use cauchy_attention::{attend, AttentionParams, ForwardCache, GradBundle};
pub use error::{Result, ZetaError};
pub use morton::{QuantizationConfig, ZCode};
pub use numerics::{Matrix, Rng};
pub use topk_index::{ChunkedIndex, SearchBudget, TopKSelection};
