pub mod conv;
pub mod norm;

pub use conv::ConvGeom;
