//! Bundle directory format.
//!
//! A bundle is a directory holding
//!
//! * `manifest.txt`: `key = value` lines (`#` starts a comment),
//! * one `<channel>.f32le` file per channel: little-endian IEEE-754 `f32`
//!   samples, no header,
//! * `labels.lab`: one byte per epoch, decoded through the manifest's
//!   `label_map`.
//!
//! See `docs/bundle-format.md` for a byte-level worked example.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::harmonize::{harmonize_labels, RawStage, ScoringScheme};
use super::{Channel, RecordingBundle, StageLabel};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LABEL_FILE: &str = "labels.lab";
const FORMAT_TAG: &str = "sleepstage-bundle/1";
const GRID_NATIVE: &str = "native";
const GRID_CONVERTED: &str = "converted_20s_zero_pad";

struct Manifest {
    subject_id: String,
    sample_rate_hz: u32,
    epoch_len_s: u32,
    scheme: ScoringScheme,
    label_map: HashMap<u8, RawStage>,
    channels: Vec<String>,
    in_bed_range: Option<(usize, usize)>,
    zero_padded_edges: bool,
}

fn valid_channel_name(name: &str) -> bool {
    !name.is_empty()
        && name != "labels"
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, lineno, "expected `key = value`"))?;
        let key = key.trim();
        if fields.insert(key, (lineno, value.trim())).is_some() {
            return Err(Error::format(path, lineno, format!("duplicate key `{key}`")));
        }
    }
    let known = [
        "format",
        "subject_id",
        "sample_rate_hz",
        "epoch_len_s",
        "scheme",
        "label_map",
        "channels",
        "in_bed_range",
        "epoch_grid",
    ];
    for (key, (lineno, _)) in &fields {
        if !known.contains(key) {
            return Err(Error::format(path, *lineno, format!("unknown key `{key}`")));
        }
    }
    let get = |key: &str| -> Result<(usize, &str)> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::format(path, 0, format!("missing key `{key}`")))
    };
    let number = |key: &str| -> Result<u32> {
        let (lineno, v) = get(key)?;
        v.parse::<u32>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(path, lineno, format!("`{key}` must be a positive integer")))
    };

    let (lineno, tag) = get("format")?;
    if tag != FORMAT_TAG {
        return Err(Error::format(path, lineno, format!("unsupported format `{tag}`")));
    }
    let subject_id = get("subject_id")?.1.to_string();
    if subject_id.is_empty() {
        return Err(Error::format(path, get("subject_id")?.0, "empty subject id"));
    }
    let sample_rate_hz = number("sample_rate_hz")?;
    let epoch_len_s = number("epoch_len_s")?;
    let (lineno, scheme) = get("scheme")?;
    let scheme: ScoringScheme = scheme
        .parse()
        .map_err(|e: Error| Error::format(path, lineno, e.to_string()))?;

    let (lineno, map) = get("label_map")?;
    let mut label_map = HashMap::new();
    for entry in map.split(',') {
        let (code, stage) = entry
            .split_once(':')
            .ok_or_else(|| Error::format(path, lineno, format!("bad label_map entry `{entry}`")))?;
        let code: u8 = code
            .trim()
            .parse()
            .map_err(|_| Error::format(path, lineno, format!("bad label code `{code}`")))?;
        let stage: RawStage = stage
            .parse()
            .map_err(|e: Error| Error::format(path, lineno, e.to_string()))?;
        if label_map.insert(code, stage).is_some() {
            return Err(Error::format(path, lineno, format!("label code {code} mapped twice")));
        }
    }

    let (lineno, chans) = get("channels")?;
    let channels: Vec<String> = chans.split(',').map(|c| c.trim().to_string()).collect();
    for c in &channels {
        if !valid_channel_name(c) {
            return Err(Error::format(path, lineno, format!("invalid channel name `{c}`")));
        }
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(Error::format(path, lineno, format!("duplicate channel `{c}`")));
        }
    }

    let in_bed_range = match fields.get("in_bed_range") {
        None => None,
        Some(&(lineno, v)) => {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
            match parsed.as_deref() {
                Some(&[a, b]) => Some((a, b)),
                _ => {
                    return Err(Error::format(
                        path,
                        lineno,
                        "in_bed_range must be `start,end` epoch indices",
                    ))
                }
            }
        }
    };
    let zero_padded_edges = match fields.get("epoch_grid") {
        None => false,
        Some(&(_, GRID_NATIVE)) => false,
        Some(&(_, GRID_CONVERTED)) => true,
        Some(&(lineno, other)) => return Err(Error::format(path, lineno, format!("unknown epoch_grid `{other}`"))),
    };

    Ok(Manifest {
        subject_id,
        sample_rate_hz,
        epoch_len_s,
        scheme,
        label_map,
        channels,
        in_bed_range,
        zero_padded_edges,
    })
}

fn read_f32le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            bytes.len() - bytes.len() % 4,
            "trailing partial sample",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Loads and validates a bundle directory.
///
/// Label codes are decoded through the manifest's label map and harmonized
/// under its scoring scheme. Epochs scored MOVEMENT or UNKNOWN are removed
/// together with their samples; the in-bed range is re-expressed over the
/// surviving epochs.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<RecordingBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m = parse_manifest(&manifest_path, &text)?;

    let mut channels = Vec::with_capacity(m.channels.len());
    let mut expected_len = None;
    for name in &m.channels {
        let path = dir.join(format!("{name}.f32le"));
        let samples = read_f32le(&path)?;
        match expected_len {
            None => expected_len = Some(samples.len()),
            Some(n) if n != samples.len() => {
                return Err(Error::ChannelLengthMismatch {
                    path,
                    channel: name.clone(),
                    expected: n,
                    found: samples.len(),
                })
            }
            _ => {}
        }
        channels.push(Channel {
            name: name.clone(),
            sample_rate_hz: m.sample_rate_hz,
            samples,
        });
    }

    let label_path = dir.join(LABEL_FILE);
    let codes = fs::read(&label_path).map_err(|e| Error::io(&label_path, e))?;
    let raw = codes
        .iter()
        .enumerate()
        .map(|(offset, &code)| {
            m.label_map.get(&code).copied().ok_or(Error::UnknownLabelCode {
                path: label_path.clone(),
                offset,
                code,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (labels, kept) = harmonize_labels(&raw, m.scheme).map_err(|e| Error::format(&label_path, 0, e.to_string()))?;

    let spe = (m.sample_rate_hz * m.epoch_len_s) as usize;
    let n_samples = expected_len.unwrap_or(0);
    if n_samples != codes.len() * spe {
        return Err(Error::format(
            &label_path,
            codes.len(),
            format!(
                "{} labels do not cover {} samples of {} s epochs at {} Hz",
                codes.len(),
                n_samples,
                m.epoch_len_s,
                m.sample_rate_hz
            ),
        ));
    }

    let mut in_bed_range = m.in_bed_range;
    if let Some((start, end)) = in_bed_range {
        if start > end || end >= codes.len() {
            return Err(Error::format(
                &manifest_path,
                0,
                format!("in_bed_range ({start}, {end}) outside [0, {})", codes.len()),
            ));
        }
    }
    let labels: Vec<StageLabel> = if kept.iter().all(|&k| k) {
        labels.into_iter().flatten().collect()
    } else {
        for c in &mut channels {
            c.samples = c
                .samples
                .chunks_exact(spe)
                .zip(&kept)
                .filter(|(_, &k)| k)
                .flat_map(|(chunk, _)| chunk.iter().copied())
                .collect();
        }
        if let Some((start, end)) = in_bed_range {
            let before = kept[..start].iter().filter(|&&k| k).count();
            let inside = kept[start..=end].iter().filter(|&&k| k).count();
            if inside == 0 {
                return Err(Error::InvalidBundle("in-bed range contains no scored epochs".into()));
            }
            in_bed_range = Some((before, before + inside - 1));
        }
        labels.into_iter().flatten().collect()
    };

    let bundle = RecordingBundle {
        subject_id: m.subject_id,
        channels,
        epoch_len_s: m.epoch_len_s,
        labels,
        in_bed_range,
        zero_padded_edges: m.zero_padded_edges,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn manifest_text(bundle: &RecordingBundle) -> String {
    let label_map = StageLabel::ALL
        .iter()
        .map(|s| format!("{}:{}", s.index(), s.mnemonic()))
        .collect::<Vec<_>>()
        .join(",");
    let channels = bundle
        .channels
        .iter()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(",");
    let mut text = format!(
        "format = {FORMAT_TAG}\nsubject_id = {}\nsample_rate_hz = {}\nepoch_len_s = {}\nscheme = AASM\nlabel_map = {label_map}\nchannels = {channels}\n",
        bundle.subject_id,
        bundle.sample_rate_hz(),
        bundle.epoch_len_s,
    );
    if let Some((a, b)) = bundle.in_bed_range {
        text.push_str(&format!("in_bed_range = {a},{b}\n"));
    }
    text.push_str(&format!(
        "epoch_grid = {}\n",
        if bundle.zero_padded_edges {
            GRID_CONVERTED
        } else {
            GRID_NATIVE
        }
    ));
    text
}

/// Writes `bundle` in canonical form (AASM scheme, identity label map).
pub fn write_bundle(bundle: &RecordingBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    for c in &bundle.channels {
        if !valid_channel_name(&c.name) {
            return Err(Error::InvalidBundle(format!("invalid channel name `{}`", c.name)));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_text(bundle)).map_err(|e| Error::io(&path, e))?;
    for c in &bundle.channels {
        let path = dir.join(format!("{}.f32le", c.name));
        let bytes: Vec<u8> = c.samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(LABEL_FILE);
    let codes: Vec<u8> = bundle.labels.iter().map(|l| l.index() as u8).collect();
    fs::write(&path, codes).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_channel(samples: usize, labels: Vec<StageLabel>) -> RecordingBundle {
        RecordingBundle {
            subject_id: "S01".into(),
            channels: ["EEG", "EOG"]
                .iter()
                .map(|n| Channel {
                    name: n.to_string(),
                    sample_rate_hz: 100,
                    samples: (0..samples).map(|i| i as f32 * 0.5).collect(),
                })
                .collect(),
            epoch_len_s: 30,
            labels,
            in_bed_range: None,
            zero_padded_edges: false,
        }
    }

    fn write_raw(dir: &Path, manifest: &str, chans: &[(&str, usize)], labels: &[u8]) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
        for (name, n) in chans {
            let bytes: Vec<u8> = (0..*n).flat_map(|i| (i as f32).to_le_bytes()).collect();
            fs::write(dir.join(format!("{name}.f32le")), bytes).unwrap();
        }
        fs::write(dir.join(LABEL_FILE), labels).unwrap();
    }

    const RK_MANIFEST: &str = "format = sleepstage-bundle/1\nsubject_id = SC4001\nsample_rate_hz = 100\nepoch_len_s = 30\nscheme = RK\nlabel_map = 0:W,1:N1,2:N2,3:N3,4:N4,5:REM,6:MOVEMENT\nchannels = EEG,EOG\n";

    #[test]
    fn minimal_bundle_loads() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), RK_MANIFEST, &[("EEG", 3000), ("EOG", 3000)], &[2]);
        let b = load_bundle(tmp.path()).unwrap();
        assert_eq!(b.epoch_count(), 1);
        assert_eq!(b.channels.len(), 2);
        assert_eq!(b.labels, vec![StageLabel::N2]);
        assert_eq!(b.channels[1].samples[2999], 2999.0);
    }

    #[test]
    fn channel_length_mismatch_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), RK_MANIFEST, &[("EEG", 3000), ("EOG", 2900)], &[2]);
        let err = load_bundle(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("channel length mismatch"), "{err}");
        assert!(err.to_string().contains("EOG.f32le"), "{err}");
    }

    #[test]
    fn unmapped_label_code_is_reported_with_offset() {
        let tmp = tempfile::tempdir().unwrap();
        write_raw(tmp.path(), RK_MANIFEST, &[("EEG", 6000), ("EOG", 6000)], &[0, 7]);
        let err = load_bundle(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabelCode { offset: 1, code: 7, .. }));
        assert!(err.to_string().contains("unknown label code"));
    }

    #[test]
    fn missing_file_and_bad_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(tmp.path()), Err(Error::MissingFile { .. })));
        write_raw(tmp.path(), "format = sleepstage-bundle/1\nnonsense\n", &[], &[]);
        match load_bundle(tmp.path()) {
            Err(Error::Format { offset: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        write_raw(tmp.path(), RK_MANIFEST, &[("EEG", 3000)], &[0]);
        assert!(matches!(load_bundle(tmp.path()), Err(Error::MissingFile { .. })));
    }

    #[test]
    fn rk_harmonization_and_exclusion_at_load() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = format!("{RK_MANIFEST}in_bed_range = 1,3\n");
        write_raw(tmp.path(), &manifest, &[("EEG", 12000), ("EOG", 12000)], &[0, 4, 6, 5]);
        let b = load_bundle(tmp.path()).unwrap();
        assert_eq!(b.labels, vec![StageLabel::W, StageLabel::N3, StageLabel::Rem]);
        assert_eq!(b.channels[0].samples.len(), 9000);
        // the MOVEMENT epoch (samples 6000..9000) is gone
        assert_eq!(b.channels[0].samples[6000], 9000.0);
        assert_eq!(b.in_bed_range, Some((1, 2)));
    }

    #[test]
    fn canonical_roundtrip_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let mut b = two_channel(9000, vec![StageLabel::W, StageLabel::N2, StageLabel::Rem]);
        b.in_bed_range = Some((0, 1));
        write_bundle(&b, tmp.path().join("a")).unwrap();
        let loaded = load_bundle(tmp.path().join("a")).unwrap();
        assert_eq!(loaded, b);
        write_bundle(&loaded, tmp.path().join("b")).unwrap();
        for f in [MANIFEST_FILE, LABEL_FILE, "EEG.f32le", "EOG.f32le"] {
            assert_eq!(
                fs::read(tmp.path().join("a").join(f)).unwrap(),
                fs::read(tmp.path().join("b").join(f)).unwrap(),
                "{f}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_load_roundtrip(
            labels in prop::collection::vec(0usize..5, 1..4),
            values in prop::collection::vec(-1e4f32..1e4, 1..50),
            padded in any::<bool>(),
        ) {
            let tmp = tempfile::tempdir().unwrap();
            let n = labels.len() * 3000;
            let b = RecordingBundle {
                subject_id: "P".into(),
                channels: vec![Channel {
                    name: "EEG".into(),
                    sample_rate_hz: 100,
                    samples: (0..n).map(|i| values[i % values.len()]).collect(),
                }],
                epoch_len_s: 30,
                labels: labels.iter().map(|&i| StageLabel::from_index(i).unwrap()).collect(),
                in_bed_range: Some((0, labels.len() - 1)),
                zero_padded_edges: padded,
            };
            write_bundle(&b, tmp.path()).unwrap();
            prop_assert_eq!(load_bundle(tmp.path()).unwrap(), b);
        }
    }
}
