//! Form-conditioned generation of classical Chinese poetry with a small
//! decoder-only transformer.
//!
//! The pipeline is: [`corpus`] turns poems into flat training sequences of the
//! shape `form (id1) theme (id2) body`, [`tokenizer`] maps them to ids,
//! [`model`] and [`trainer`] fit an autoregressive language model,
//! [`sampler`] decodes bodies with truncated top-k sampling, and
//! [`validator`] checks generated poems against executable form templates.

pub mod corpus;
pub mod error;
pub mod model;
pub mod sampler;
pub mod tokenizer;
pub mod trainer;
pub mod validator;

pub use error::{Error, Result};
