//! Command-line front end for the anonymize / train / compare pipeline.
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod svg;
