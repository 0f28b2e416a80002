//! Command-line tool and HTTP service over `wordspot-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod pages;
pub mod server;
pub mod session_file;
pub mod thumbnails;

pub use error::AppError;
pub use wordspot_core as core;
