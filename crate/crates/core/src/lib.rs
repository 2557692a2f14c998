// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adaptive activation steering for a tapped decoder-only transformer.
//!
//! The crate covers the full loop at desk scale:
//!
//! 1. run contrastive prompt pairs through a GPT-2-style model and record
//!    last-token activation differences per element class
//!    ([`pipeline`], [`model`]);
//! 2. average them into a concatenated mean-difference vector and binarize
//!    the top-K units into an identification mask ([`mask`]);
//! 3. steer a forward pass at the masked units, scaling each activation by
//!    its own value (adaptive) or adding a precomputed direction (fixed)
//!    ([`steering`]);
//! 4. evaluate multiple-choice and open-ended tasks under any steering spec,
//!    sweep K and delta, and run the ablation battery ([`eval`]);
//! 5. characterize differences and mask overlap ([`analysis`]).
//!
//! Numeric kernels are generic over the [`Scalar`] type; f32 is the storage
//! and default working precision, with `*32`/`*64` aliases at the crate root.

pub mod analysis;
pub mod container;
pub mod error;
pub mod eval;
pub mod mask;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod steering;
pub mod template;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use mask::{
    binarize, binarize_with, load_mask, mean_difference, random_mask, save_mask,
    IdentificationMask, Layout, MaskUnit, MeanDifference, ScoreRule,
};
pub use model::{ActivationTrace, ElementClass, ForwardOutput, ModelSpec, TraceSet, WeightStore};
pub use pipeline::{ContrastivePair, InstanceDifference};
pub use scalar::Scalar;
pub use steering::{
    apply_adaptive, apply_fixed, install, PositionPolicy, SteeringMode, SteeringSpec, TapPlan,
};
pub use template::Template;
pub use tensor::Tensor;
pub use tokenizer::Tokenizer;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type WeightStore32 = WeightStore<f32>;
pub type WeightStore64 = WeightStore<f64>;
pub type MeanDifference32 = MeanDifference<f32>;
pub type MeanDifference64 = MeanDifference<f64>;
pub type SteeringSpec32 = SteeringSpec<f32>;
pub type SteeringSpec64 = SteeringSpec<f64>;
