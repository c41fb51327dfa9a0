pub mod commands;
pub mod config;
pub mod ensemble;
pub mod output;
pub mod setup;
