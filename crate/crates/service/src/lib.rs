//! Network front end for the paintword edit engine: an HTTP API with live
//! progress streams, an out-of-process model adapter protocol, and the
//! `paintword` command line.

pub mod adapter;
pub mod cli;
pub mod config;
pub mod http;
