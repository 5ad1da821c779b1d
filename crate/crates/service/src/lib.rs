//! HTTP JSON API and command line over the `clinotate` library.
//!
//! * [`api`]: routes, wire types and shared state.
//! * [`store`]: the file-backed corpus store behind the editing endpoints.
//! * [`cli`]: subcommands of the `clinotate` binary.

pub mod api;
pub mod cli;
pub mod store;
