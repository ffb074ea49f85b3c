use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{assemble_context, ContextConfig, ContextMode};
use crate::signal_io::StageLabel;
use crate::tfr::{Standardizer, TfCache};

/// The standardized images and labels of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRecording {
    pub subject_id: String,
    /// N x P x bins x T, standardized.
    pub images: Vec<f32>,
    pub labels: Vec<StageLabel>,
}

/// One training example as seen by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<'a> {
    pub subject_id: &'a str,
    pub epoch_index: usize,
    /// Labels of epochs `n - tau ..= n + tau`, edge-replicated at the
    /// recording boundaries.
    pub label_window: Vec<StageLabel>,
}

/// Every epoch of a set of recordings, addressed by a flat sample index.
#[derive(Clone, Debug)]
pub struct Dataset {
    context: ContextConfig,
    dims: (usize, usize, usize),
    recordings: Vec<LabeledRecording>,
    index: Vec<(usize, usize)>,
    by_class: Vec<Vec<usize>>,
}

/// `n + k` clamped into `0..len`.
pub fn clamp_index(n: usize, k: isize, len: usize) -> usize {
    (n as isize + k).clamp(0, len as isize - 1) as usize
}

impl Dataset {
    pub fn new(recordings: Vec<LabeledRecording>, dims: (usize, usize, usize), context: ContextConfig) -> Result<Self> {
        context.validate()?;
        let len = dims.0 * dims.1 * dims.2;
        let mut index = Vec::new();
        let mut by_class = vec![Vec::new(); StageLabel::ALL.len()];
        for (r, rec) in recordings.iter().enumerate() {
            if rec.images.len() != rec.labels.len() * len {
                return Err(Error::shape(format!(
                    "recording `{}`: {} values for {} epochs of {len}",
                    rec.subject_id,
                    rec.images.len(),
                    rec.labels.len()
                )));
            }
            for (n, l) in rec.labels.iter().enumerate() {
                by_class[l.index()].push(index.len());
                index.push((r, n));
            }
        }
        Ok(Dataset {
            context,
            dims,
            recordings,
            index,
            by_class,
        })
    }

    /// Standardizes cached images with `norm`.
    pub fn from_caches(caches: &[&TfCache], norm: &Standardizer, context: ContextConfig) -> Result<Self> {
        let first = caches
            .first()
            .ok_or_else(|| Error::invalid("no recordings for the dataset"))?;
        let dims = (first.n_channels(), first.n_filters, first.n_frames);
        if norm.mean.len() != dims.0 {
            return Err(Error::shape("standardizer channel count differs from the images"));
        }
        let plane = dims.1 * dims.2;
        let mut recs = Vec::with_capacity(caches.len());
        for c in caches {
            first.check_compatible(c)?;
            let mut images = c.images.clone();
            for img in images.chunks_mut(dims.0 * plane) {
                for (p, ch) in img.chunks_mut(plane).enumerate() {
                    let (m, s) = (norm.mean[p], norm.std[p]);
                    ch.iter_mut().for_each(|v| *v = ((f64::from(*v) - m) / s) as f32);
                }
            }
            recs.push(LabeledRecording {
                subject_id: c.subject_id.clone(),
                images,
                labels: c.labels.clone(),
            });
        }
        Dataset::new(recs, dims, context)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn context(&self) -> ContextConfig {
        self.context
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn recordings(&self) -> &[LabeledRecording] {
        &self.recordings
    }

    /// Sample indices of recording `r`, in epoch order.
    pub fn recording_range(&self, r: usize) -> std::ops::Range<usize> {
        let start = self.index.partition_point(|&(ri, _)| ri < r);
        start..start + self.recordings[r].labels.len()
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    fn label_offsets(&self, i: usize, tau: usize) -> Vec<StageLabel> {
        let (r, n) = self.index[i];
        let labels = &self.recordings[r].labels;
        (-(tau as isize)..=tau as isize)
            .map(|k| labels[clamp_index(n, k, labels.len())])
            .collect()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let (r, n) = self.index[i];
        Sample {
            subject_id: &self.recordings[r].subject_id,
            epoch_index: n,
            label_window: self.label_offsets(i, self.context.tau),
        }
    }

    pub fn center_label(&self, i: usize) -> StageLabel {
        let (r, n) = self.index[i];
        self.recordings[r].labels[n]
    }

    /// Class index per output slot.
    pub fn targets(&self, i: usize) -> Vec<usize> {
        match self.context.mode {
            ContextMode::OneToMany => self
                .label_offsets(i, self.context.tau)
                .iter()
                .map(|l| l.index())
                .collect(),
            _ => vec![self.center_label(i).index()],
        }
    }

    fn epoch_image(&self, r: usize, n: usize) -> &[f32] {
        let len = self.dims.0 * self.dims.1 * self.dims.2;
        &self.recordings[r].images[n * len..(n + 1) * len]
    }

    /// Model input of sample `i`; a many-to-one input joins the
    /// edge-replicated neighbours along time.
    pub fn input(&self, i: usize) -> Result<Vec<f64>> {
        let (r, n) = self.index[i];
        let widen = |s: &[f32]| s.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
        if self.context.mode != ContextMode::ManyToOne {
            return Ok(widen(self.epoch_image(r, n)));
        }
        let tau = self.context.tau as isize;
        let count = self.recordings[r].labels.len();
        let parts: Vec<Vec<f64>> = (-tau..=tau)
            .map(|k| widen(self.epoch_image(r, clamp_index(n, k, count))))
            .collect();
        let views: Vec<&[f64]> = parts.iter().map(Vec::as_slice).collect();
        assemble_context(&views, self.dims)
    }
}

/// `batch_size / Y` draws with replacement from each centre-label class,
/// class by class.
pub fn make_balanced_batch<R: Rng + ?Sized>(dataset: &Dataset, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let y = StageLabel::ALL.len();
    if batch_size == 0 || batch_size % y != 0 {
        return Err(Error::invalid(format!(
            "balanced batch size {batch_size} is not a positive multiple of {y}"
        )));
    }
    if let Some(c) = (0..y).find(|&c| dataset.class_indices(c).is_empty()) {
        return Err(Error::MissingClass { class: c });
    }
    let per = batch_size / y;
    let mut out = Vec::with_capacity(batch_size);
    for c in 0..y {
        let pool = dataset.class_indices(c);
        for _ in 0..per {
            out.push(pool[rng.gen_range(0..pool.len())]);
        }
    }
    Ok(out)
}
