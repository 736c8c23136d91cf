pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod raster;
pub mod sim;
