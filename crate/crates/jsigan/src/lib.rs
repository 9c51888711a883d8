//! Joint super-resolution and inverse tone mapping (SR-ITM) with
//! pixel-adaptive dynamic filters, trained as a GAN.
//!
//! The crate is organized around a small reverse-mode differentiable tensor
//! core ([`tensor`]) on which everything else is composed: the dynamic
//! filtering primitives ([`dynfilter`]), the guided-filter image pipeline and
//! synthetic data generator ([`imagepipe`]), the three-subnet generator
//! ([`jsinet`]), the spectral-normalized discriminators ([`discriminator`]),
//! the adversarial loss suite ([`losses`]), the two-phase trainer
//! ([`trainer`]) and PSNR/SSIM evaluation ([`metrics`]).
//!
//! See the crate examples for runnable entry points into each capability, or
//! the `jsi` binary for the batch CLI.

pub mod discriminator;
pub mod dynfilter;
pub mod error;
pub mod gradcheck;
pub mod imagepipe;
pub mod jsinet;
pub mod layers;
pub mod losses;
pub mod tensor;
pub mod threads;

pub use error::{Error, Result};
