//! Entropy coding and the truncatable bitstream.

pub mod cdf;
pub mod codec;
pub mod container;
pub mod rans;

pub use codec::{Codec, DecodeStats, Decoded, Encoded};
pub use container::{Container, ContainerSummary, TruncateTarget};
