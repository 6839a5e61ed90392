//! Scalable three-layer entropy codec for 18-token style vectors.
//!
//! ```
//! use stylecodec::bitstream::{decode, encode, truncate_to_layer};
//! use stylecodec::params::WeightInit;
//! use stylecodec::style::{LayerId, StyleVectorSet};
//! use stylecodec::weights::{CodecConfig, Weights};
//!
//! let weights = Weights::generate(CodecConfig::fast(), 7, WeightInit::default())?;
//! let styles = StyleVectorSet::zeros(64);
//! let out = encode(&styles, &weights)?;
//! let basic = truncate_to_layer(&out.stream, LayerId::Basic);
//! let decoded = decode(&basic, &weights, LayerId::Basic)?;
//! assert_eq!(decoded.styles, styles);
//! # Ok::<(), stylecodec::CodecError>(())
//! ```

pub mod bitstream;
pub mod entropy;
pub mod error;
pub mod numeric;
pub mod params;
pub mod rangecoder;
pub mod rdeval;
pub mod style;
pub mod stylefile;
pub mod transformer;
pub mod weights;

pub use error::{CodecError, Result};
