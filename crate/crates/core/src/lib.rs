//! canonfuse-core: streaming fusion of per-frame observations of an
//! articulated, skinned body into a canonical per-vertex feature bank, and
//! reposing/densification of that bank into novel-view renderings —
//! deterministic or diffusion-sampled.
//!
//! Everything is CPU-side and dependency-light by design: f32 geometry with
//! f64 accumulation where order-stability matters, exact tie rules in the
//! rasterizer, and seeded ChaCha8 streams everywhere randomness appears.

pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod fusion;
pub mod math;
pub mod projection;
pub mod raster;
pub mod rng;
pub mod template;
pub mod tensor;

pub use error::{Error, Result};
pub use math::{vec3, Mat3, Quat, Rigid, Vec3};
pub use tensor::{Tensor, TensorArchive, TensorData};
