//! Copy detection pattern (CDP) authentication laboratory.
//!
//! The crate covers the whole life of a CDP: binary template generation
//! ([`imgcore`]), a parametric print-and-acquire channel ([`channel`]),
//! template-estimation fakes ([`attack`]), a pix2pix generator that predicts
//! the printed appearance of a template ([`pix2pix`]), registration of
//! captures to the template grid ([`align`]), similarity scoring
//! ([`metrics`]) and ROC analysis ([`rocstat`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod attack;
pub mod channel;
mod error;
pub mod filters;
pub mod imgcore;
pub mod metrics;
pub mod pix2pix;
pub mod rng;
pub mod rocstat;

pub use error::{CoreError, Result};
pub use imgcore::{PhysicalImage, Provenance, Raster, Role, Template, TemplateKind};
