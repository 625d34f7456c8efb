//! File formats: the BDTF binary tensor container and WAV input.

pub mod container;
pub mod wav;

pub use container::{load_f32, load_tensor, load_u8, save_f32, save_tensor, save_u8, TensorData, TensorFile};
pub use wav::load_wav;
