//! Self-evolving multi-agent workflows for code generation.
//!
//! The crate is organised around a canonical workflow representation
//! ([`ir`]) that five textual schemes parse into ([`repr`]). LLM calls go
//! through a recording [`backend`]; [`evolution`] implements workflow and
//! agent-prompt evolution on top of it, [`execution`] runs workflows and
//! sandboxes the code they produce, and [`evaluation`] scores the results.
//! [`commands`] ties everything together behind the `sew` CLI.

pub mod backend;
pub mod commands;
pub mod config;
pub mod evaluation;
pub mod evolution;
pub mod execution;
pub mod ir;
pub mod repr;
