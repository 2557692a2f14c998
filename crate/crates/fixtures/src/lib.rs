// SPDX-License-Identifier: MIT OR Apache-2.0

//! Test fixtures: an independent reference forward pass, seeded random
//! models, and the planted-signal toy task used for end-to-end checks.

pub mod planted;
pub mod random_models;
pub mod reference;
