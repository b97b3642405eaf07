//! Under-display camera (UDC) diffraction simulation and restoration.
//!
//! The crate covers the whole pipeline:
//!
//! - [`optics`]: wave-optics simulation of the display/lens PSF.
//! - [`formation`]: HDR degradation model, PSF rotation and exposure fusion,
//!   synthetic scene generation.
//! - [`kernel_code`]: PCA kernel codes and degradation maps.
//! - [`restore`]: Wiener deconvolution baseline and post-processing (CCM,
//!   RGB gains, CLAHE).
//! - [`discnet`]: the dynamic skip-connection restoration network with its
//!   own reverse-mode gradient engine, optimizer and training loop.
//! - [`metrics`]: PSNR / SSIM.
//! - [`io`]: PFM, binary containers and key=value configuration files.
//! - [`cli`]: the `udc` command-line front end.

pub mod cli;
pub mod discnet;
pub mod error;
pub mod fft;
pub mod formation;
pub mod image;
pub mod io;
pub mod kernel_code;
pub mod metrics;
pub mod optics;
pub mod restore;

pub use error::{Error, Result};
pub use image::Image;
