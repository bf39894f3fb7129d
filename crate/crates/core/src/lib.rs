//! Watermark-removal attack workbench.
//!
//! * [`attack`]: the view-shift diffusion attack: partial noising, latent
//!   translation, dual-path denoising with view-guided attention, and CIELAB
//!   colour/contrast transfer.
//! * [`diffusion`]: backend abstraction, DDIM, and the bundled tiny backend.
//! * [`watermark`]: reference schemes (DWT-DCT, DWT-DCT-SVD, Fourier ring)
//!   and the external adapter protocol.
//! * [`baseline`]: signal-processing, crop and regeneration attacks.
//! * [`eval`]: bit accuracy, threshold calibration, Fréchet distance,
//!   PSNR/SSIM and report aggregation.
//! * [`cli`]: configuration, manifests and the command implementations.

pub mod attack;
pub mod baseline;
pub mod buffer;
pub mod cli;
pub mod color;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod rng;
pub mod toy;
pub mod watermark;

pub use buffer::{gaussian_like, ImageBuffer, Latent};
pub use error::{Error, Result};
pub use rng::{derive_stream, RngStream};
