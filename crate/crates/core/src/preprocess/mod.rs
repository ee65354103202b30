//! Input scalings (1-D z-scaling, whitening) and output rescalings of the
//! marker coordinates (M1–M4), each with an exact inverse.
//!
//! All statistics are population statistics computed in `f64` over the
//! training split only.

mod input;
mod output;

pub use input::{InputTransform, InputTransformKind, WhitenParams, ZScale1dParams};
pub use output::{OutputMethod, OutputTransform};

use crate::error::{Error, Result};

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite {what} at flat index {i}")));
    }
    Ok(())
}
