//! On-disk formats: binary containers for models and indexes, and PPM images.

pub(crate) mod binfmt;
pub mod ppm;

pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
