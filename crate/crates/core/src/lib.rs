//! Refinement of facial UV textures by rendering-aware style transfer.
//!
//! A complete but imperfect content texture is optimized so that its
//! rendering matches the input photograph while its deep features follow
//! a style texture sampled from the same photograph.

pub mod camera;
pub mod config;
pub mod error;
pub mod features;
pub mod geometry;
pub mod image;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod pyramid;
pub mod raster;
pub mod refine;
pub mod scene;

pub use camera::{CameraPose, Intrinsics};
pub use error::{Error, Result};
pub use image::{Mask, RgbImage, TextureMap};
pub use mesh::FaceMesh;
