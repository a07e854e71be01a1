//! Morse-wavelet scalograms rendered as fixed-size images.

pub mod cache;
pub mod cwt;
pub mod image;
pub mod morse;
pub mod scales;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cache::{content_key, read_scalogram, write_scalogram, ScalogramCache};
pub use cwt::{cwt, power_scalogram, PowerMatrix, ScalogramMatrix};
pub use image::{render_image, render_image_with, Colormap, ScalogramImage};
pub use morse::{morse_wavelet_freq, MorseParams};
pub use scales::{select_scales, ScaleGrid};

use crate::error::{Error, Result};

pub const MIN_SIGNAL_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalogramConfig {
    #[serde(flatten)]
    pub morse: MorseParams,
    pub height: usize,
    pub width: usize,
    pub colormap: Option<PathBuf>,
}

impl Default for ScalogramConfig {
    fn default() -> Self {
        ScalogramConfig {
            morse: MorseParams::default(),
            height: 224,
            width: 224,
            colormap: None,
        }
    }
}

/// Signal to image: scale selection, CWT, power, rendering.
pub fn scalogram_image(signal: &[f64], sample_rate: f64, cfg: &ScalogramConfig) -> Result<ScalogramImage> {
    cfg.morse.validate()?;
    if signal.len() < MIN_SIGNAL_LEN {
        return Err(Error::ShapeMismatch(format!(
            "signal of {} samples is shorter than {MIN_SIGNAL_LEN}",
            signal.len()
        )));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("signal contains NaN or infinity".into()));
    }
    let colormap = cfg.colormap.as_deref().map(Colormap::load).transpose()?;
    let grid = select_scales(&cfg.morse, signal.len());
    let power = power_scalogram(&cwt(signal, &cfg.morse, &grid, sample_rate));
    Ok(render_image_with(&power, cfg.height, cfg.width, colormap.as_ref()))
}
