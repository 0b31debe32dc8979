//! Trainable probabilistic and geometric constellation shaping.
//!
//! The crate holds a small reverse-mode autodiff engine, constellation
//! and channel models, exact and neural demappers, the shaping
//! transmitters, the BMI training loop, and Monte Carlo evaluation.

pub mod channels;
pub mod constellation;
pub mod demappers;
pub mod evaluation;
pub mod grad;
pub mod models;
pub mod nn;
pub mod training;
