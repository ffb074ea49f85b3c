//! Per-recording cache of time-frequency images.
//!
//! Layout (all integers little-endian `u32`, strings length-prefixed UTF-8):
//!
//! ```text
//! "SSTF" | version | subject_id | N | P | M | T | P x channel name
//!        | filter-bank hash (64 hex chars) | N label bytes | N*P*M*T f32
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{FilterBank, TfImage, TfImageBuilder};
use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::signal_io::{RecordingBundle, StageLabel};

const MAGIC: &[u8; 4] = b"SSTF";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TfCache {
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub n_filters: usize,
    pub n_frames: usize,
    pub filterbank_hash: String,
    pub labels: Vec<StageLabel>,
    /// N x P x M x T, single precision as stored on disk.
    pub images: Vec<f32>,
}

/// Combined hash of the banks applied to each channel, in order.
pub fn filterbanks_hash(banks: &[FilterBank]) -> String {
    let mut h = Sha256::new();
    for b in banks {
        h.update(b.hash().as_bytes());
    }
    hex::encode(h.finalize())
}

impl TfCache {
    pub fn from_bundle(bundle: &RecordingBundle, builder: &TfImageBuilder) -> Result<Self> {
        let mut images = Vec::new();
        let mut dims = (0, 0, 0);
        for n in 0..bundle.epoch_count() {
            let img = builder.build(bundle, n)?;
            dims = img.dims();
            images.extend(img.values.iter().map(|&v| v as f32));
        }
        Ok(TfCache {
            subject_id: bundle.subject_id.clone(),
            channel_names: builder.channels().to_vec(),
            n_filters: dims.1,
            n_frames: dims.2,
            filterbank_hash: filterbanks_hash(builder.banks()),
            labels: bundle.labels.clone(),
            images,
        })
    }

    pub fn n_epochs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn image_len(&self) -> usize {
        self.n_channels() * self.n_filters * self.n_frames
    }

    pub fn image_slice(&self, n: usize) -> &[f32] {
        let len = self.image_len();
        &self.images[n * len..(n + 1) * len]
    }

    pub fn image(&self, n: usize) -> TfImage {
        TfImage {
            values: self.image_slice(n).iter().map(|&v| f64::from(v)).collect(),
            n_channels: self.n_channels(),
            n_filters: self.n_filters,
            n_frames: self.n_frames,
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&self.subject_id);
        w.u32(self.n_epochs() as u32);
        w.u32(self.n_channels() as u32);
        w.u32(self.n_filters as u32);
        w.u32(self.n_frames as u32);
        for c in &self.channel_names {
            w.str(c);
        }
        w.bytes(self.filterbank_hash.as_bytes());
        w.bytes(&self.labels.iter().map(|l| l.index() as u8).collect::<Vec<_>>());
        w.f32s(self.images.iter().copied());
        w.finish()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = read_file(path)?;
        let mut r = Reader::new(path, &data, MAGIC, VERSION)?;
        let subject_id = r.str()?;
        let n = r.u32()? as usize;
        let p = r.u32()? as usize;
        let m = r.u32()? as usize;
        let t = r.u32()? as usize;
        let channel_names = (0..p).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let hash = r.take(64)?;
        let filterbank_hash = String::from_utf8(hash.to_vec()).map_err(|_| r.err("bad hash"))?;
        let labels = r
            .take(n)?
            .iter()
            .map(|&b| StageLabel::from_index(b as usize).ok_or_else(|| r.err(format!("bad label {b}"))))
            .collect::<Result<Vec<_>>>()?;
        let images = r.f32s(n * p * m * t)?;
        r.finish()?;
        Ok(TfCache {
            subject_id,
            channel_names,
            n_filters: m,
            n_frames: t,
            filterbank_hash,
            labels,
            images,
        })
    }

    /// Hex SHA-256 of the serialized file.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn check_compatible(&self, other: &TfCache) -> Result<()> {
        if self.channel_names != other.channel_names
            || self.n_filters != other.n_filters
            || self.n_frames != other.n_frames
            || self.filterbank_hash != other.filterbank_hash
        {
            return Err(Error::invalid(format!(
                "caches `{}` and `{}` were built with different settings",
                self.subject_id, other.subject_id
            )));
        }
        Ok(())
    }
}
