//! Command-line tools and the device service for slide screening.

pub mod backends;
pub mod camera;
pub mod commands;
pub mod config;
pub mod screening;
pub mod service;
