use super::RecordingBundle;
use crate::error::{Error, Result};

/// Widens a 20 s epoch grid to 30 s by taking 5 s of context on each side
/// of every epoch. Context that falls outside the recording is zero.
pub fn convert_epoch_grid_20_to_30(bundle: &RecordingBundle) -> Result<RecordingBundle> {
    if bundle.epoch_len_s != 20 {
        return Err(Error::invalid(format!(
            "expected 20 s epochs, found {} s",
            bundle.epoch_len_s
        )));
    }
    bundle.validate()?;
    let rate = bundle.sample_rate_hz() as usize;
    let spe = 20 * rate;
    let pad = 5 * rate;
    let n = bundle.epoch_count();
    let channels = bundle
        .channels
        .iter()
        .map(|c| {
            let src = &c.samples;
            let mut out = Vec::with_capacity(n * (spe + 2 * pad));
            for e in 0..n {
                let start = (e * spe) as isize - pad as isize;
                for i in 0..(spe + 2 * pad) as isize {
                    let j = start + i;
                    out.push(if j < 0 || j as usize >= src.len() {
                        0.0
                    } else {
                        src[j as usize]
                    });
                }
            }
            super::Channel {
                name: c.name.clone(),
                sample_rate_hz: c.sample_rate_hz,
                samples: out,
            }
        })
        .collect();
    Ok(RecordingBundle {
        subject_id: bundle.subject_id.clone(),
        channels,
        epoch_len_s: 30,
        labels: bundle.labels.clone(),
        in_bed_range: bundle.in_bed_range,
        zero_padded_edges: true,
    })
}

/// Keeps only the epochs inside the in-bed range, re-based to index 0.
pub fn trim_in_bed(bundle: &RecordingBundle) -> Result<RecordingBundle> {
    let (start, end) = bundle.in_bed_range.ok_or(Error::MissingInBedRange)?;
    bundle.validate()?;
    let spe = bundle.samples_per_epoch();
    let channels = bundle
        .channels
        .iter()
        .map(|c| super::Channel {
            name: c.name.clone(),
            sample_rate_hz: c.sample_rate_hz,
            samples: c.samples[start * spe..(end + 1) * spe].to_vec(),
        })
        .collect();
    Ok(RecordingBundle {
        subject_id: bundle.subject_id.clone(),
        channels,
        epoch_len_s: bundle.epoch_len_s,
        labels: bundle.labels[start..=end].to_vec(),
        in_bed_range: Some((0, end - start)),
        zero_padded_edges: bundle.zero_padded_edges,
    })
}
