//! Forward and inverse physically based rendering of SDF surfaces lit by
//! spherical-harmonic environments.
//!
//! The shading model splits outgoing radiance into a Lambertian term, solved
//! in closed form by convolving the SH light with the half-cosine kernel, and
//! a specular term factored into a low-rank material integral times a
//! vMF-prefiltered light integral. Geometry is an analytic SDF prior plus a
//! learnable displacement field, rendered with sphere tracing followed by
//! windowed Laplace-density volume integration.
//!
//! Every closed form is paired with a Monte-Carlo oracle in [`oracle`], and
//! the whole pipeline is differentiable through the reverse-mode tape in
//! [`tape`], which [`optim`] uses to fit scenes to multi-view images.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod material;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sh;
pub mod tape;
pub mod validate;

pub use error::{Error, Result};
