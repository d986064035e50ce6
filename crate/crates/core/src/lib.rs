//! Transformer encoder whose attention heads can be constrained by
//! role-specific additive masks (rare words, separators, dependency
//! syntax, major relations, relative position), with the corpus pipeline,
//! training loop, and ablation harness around it.

pub mod numerics;
pub mod corpus;
pub mod masks;
pub mod attention;
pub mod model;
pub mod synth;
pub mod harness;
