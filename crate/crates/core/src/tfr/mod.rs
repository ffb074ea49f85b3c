//! Log-power spectrograms, frequency-domain filter banks and the stacked
//! multichannel time-frequency image.

mod cache;
mod filterbank;
mod image;
mod stft;

pub use cache::{filterbanks_hash, TfCache};
pub use filterbank::{apply_filterbank, make_triangular_filterbank, FilterBank, FilterBankKind};
pub use image::{build_tf_image, Standardizer, TfImage, TfImageBuilder};
pub use stft::{hamming, stft_log_power, Spectrogram, Stft, StftConfig, POWER_FLOOR};
