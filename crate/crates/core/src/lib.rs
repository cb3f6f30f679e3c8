//! Multi-frame blind deconvolution toolkit.
//!
//! Restores a single sharp image from a burst of differently blurred
//! photographs. The pipeline runs a learned per-frame Wiener deconvolution
//! in the frequency domain and fuses the per-frame estimates with a
//! learnable variant of Fourier burst accumulation, trained end-to-end
//! with plain SGD on synthetically blurred patches.
//!
//! Module map:
//! - [`image`]: raster types shared by everything else
//! - [`color`]: sRGB/Lab conversion and chroma transfer
//! - [`metrics`]: PSNR, MSE, gradient energy
//! - [`ppm`]: binary PPM/PGM image I/O
//! - [`fourier`]: 2-D DFT machinery, padding, frequency-domain convolution
//! - [`psf`]: synthetic camera-shake kernels and spatially varying blur
//! - [`fba`]: Fourier burst accumulation, vanilla and learnable
//! - [`nn`]: dense layers, SGD with momentum, checkpoints, gradient checking
//! - [`deconv`]: band analysis and Wiener filter prediction network
//! - [`net`]: the composed burst network (deconv + learnable fusion)
//! - [`datagen`]: synthetic training example generation
//! - [`trainer`]: training loop, evaluation, CSV logging
//! - [`pipeline`]: whole-image restoration
//! - [`gradcheck`]: finite-difference verification battery

pub mod color;
pub mod datagen;
pub mod deconv;
pub mod error;
pub mod fba;
pub mod fourier;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod pipeline;
pub mod ppm;
pub mod psf;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Burst, Image, Patch};
