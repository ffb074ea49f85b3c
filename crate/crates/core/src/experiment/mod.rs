//! End-to-end cross-validation runs: preprocessing with shared caches,
//! per-fold training, prediction, aggregation and evaluation.

mod config;
mod render;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

pub use config::{
    DataConfig, EvalConfig, ExperimentConfig, FeatureConfig, ModelConfig, ResolvedConfig, RunConfig, SplitConfig,
    TrainConfig,
};
pub use render::{render_hypnogram, render_hypnogram_svg, render_hypnogram_text};

use crate::aggregate::{
    argmax, decide, fuse_grid, scatter_flat, write_grid, write_hypnogram, Hypnogram, PosteriorGrid, VotingRule,
};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::network::{write_checkpoint, Checkpoint, ModelSpec};
use crate::signal_io::{load_bundle, make_split_plan, Fold, RecordingBundle, StageLabel, MANIFEST_FILE};
use crate::tfr::{make_triangular_filterbank, FilterBankKind, Standardizer, TfCache, TfImageBuilder};
use crate::training::{history_csv, predict_dataset, train, Dataset, PassRecord};

pub const CACHE_MANIFEST: &str = "cache_manifest.txt";

/// Runs `f(0..n)` on up to `jobs` threads; results come back in index order.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                *slots[i].lock().expect("slot lock") = Some(v);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every index ran"))
        .collect()
}

/// Every bundle directory directly under `dir`, in name order.
pub fn load_bundles(dir: impl AsRef<Path>) -> Result<Vec<RecordingBundle>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no recording bundles under {}", dir.display())));
    }
    paths.iter().map(load_bundle).collect()
}

/// Image builder for the configured channels and bank. A learnable bank
/// starts from raw spectrogram images (a square triangular bank is the
/// identity).
pub fn image_builder(cfg: &ResolvedConfig) -> Result<TfImageBuilder> {
    let bins = cfg.stft.n_freq();
    let m = match cfg.bank {
        FilterBankKind::Triangular => cfg.n_filters,
        FilterBankKind::Learnable => bins,
    };
    let bank = make_triangular_filterbank(m, bins, cfg.stft.sample_rate_hz)?;
    TfImageBuilder::new(cfg.stft, &cfg.channels, vec![bank; cfg.channels.len()])
}

fn bundle_fingerprint(b: &RecordingBundle, settings: &str) -> String {
    let mut h = Sha256::new();
    h.update(settings.as_bytes());
    h.update(b.subject_id.as_bytes());
    for c in &b.channels {
        h.update(c.name.as_bytes());
        h.update(c.sample_rate_hz.to_le_bytes());
        for v in &c.samples {
            h.update(v.to_le_bytes());
        }
    }
    h.update(b.labels.iter().map(|l| l.index() as u8).collect::<Vec<_>>());
    hex::encode(h.finalize())
}

fn settings_key(cfg: &ResolvedConfig, builder: &TfImageBuilder) -> String {
    format!(
        "{:?}|{}|{}",
        cfg.stft,
        cfg.channels.join(","),
        crate::tfr::filterbanks_hash(builder.banks())
    )
}

/// Time-frequency caches of every bundle with their content hashes. With a
/// cache directory, a cache is reused only when its recorded input
/// fingerprint and file hash both match; otherwise it is rebuilt.
pub fn prepare_caches(
    bundles: &[RecordingBundle],
    cfg: &ResolvedConfig,
    cache_dir: Option<&Path>,
    jobs: usize,
) -> Result<Vec<(TfCache, String)>> {
    let builder = image_builder(cfg)?;
    let settings = settings_key(cfg, &builder);
    let mut known: BTreeMap<String, (String, String)> = BTreeMap::new();
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Ok(text) = std::fs::read_to_string(dir.join(CACHE_MANIFEST)) {
            for line in text.lines() {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if let [id, fp, hash] = parts[..] {
                    known.insert(id.to_string(), (fp.to_string(), hash.to_string()));
                }
            }
        }
    }
    let out = parallel_map(bundles.len(), jobs, |i| -> Result<(TfCache, String)> {
        let b = &bundles[i];
        let fp = bundle_fingerprint(b, &settings);
        if let Some(dir) = cache_dir {
            let path = dir.join(format!("{}.sstf", b.subject_id));
            if let Some((kfp, khash)) = known.get(&b.subject_id) {
                if *kfp == fp && path.is_file() {
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    if hex::encode(Sha256::digest(&bytes)) == *khash {
                        let cache = TfCache::read(&path)?;
                        return Ok((cache, khash.clone()));
                    }
                }
            }
            let cache = TfCache::from_bundle(b, &builder)?;
            cache.write(&path)?;
            let hash = cache.content_hash();
            return Ok((cache, hash));
        }
        let cache = TfCache::from_bundle(b, &builder)?;
        let hash = cache.content_hash();
        Ok((cache, hash))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = cache_dir {
        let mut manifest = String::new();
        for (b, (_, hash)) in bundles.iter().zip(&out) {
            let _ = writeln!(
                manifest,
                "{} {} {}",
                b.subject_id,
                bundle_fingerprint(b, &settings),
                hash
            );
        }
        write_atomic(&dir.join(CACHE_MANIFEST), manifest.as_bytes())?;
    }
    Ok(out)
}

/// Accuracy of one output slot against the label of the epoch it targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotAccuracy {
    pub offset: isize,
    pub correct: u64,
    pub total: u64,
}

impl SlotAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub truth: Vec<StageLabel>,
    pub grid: PosteriorGrid,
    /// Decisions under each voting rule, in `VotingRule::ALL` order.
    pub decisions: Vec<Hypnogram>,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub index: usize,
    pub fold: Fold,
    pub best_pass: usize,
    pub history: Vec<PassRecord>,
    pub checkpoint: Checkpoint,
    pub subjects: Vec<SubjectPrediction>,
    /// Report under the configured voting rule.
    pub report: EvalReport,
    pub slots: Vec<SlotAccuracy>,
    pub seconds: Vec<(&'static str, f64)>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub voting: VotingRule,
    pub folds: Vec<FoldResult>,
    /// Pooled report under the configured voting rule.
    pub pooled: EvalReport,
    /// Pooled overall accuracy under each rule, in `VotingRule::ALL` order.
    pub rule_accuracy: Vec<(VotingRule, Option<f64>)>,
    pub slots: Vec<SlotAccuracy>,
    pub cache_hashes: Vec<(String, String)>,
}

fn rule_index(rule: VotingRule) -> usize {
    VotingRule::ALL.iter().position(|&r| r == rule).expect("rule listed")
}

fn pooled_report(folds: &[FoldResult], rule: VotingRule) -> Result<EvalReport> {
    let k = rule_index(rule);
    let pairs: Vec<(&[StageLabel], &[StageLabel])> = folds
        .iter()
        .flat_map(|f| f.subjects.iter())
        .map(|s| (s.truth.as_slice(), s.decisions[k].labels.as_slice()))
        .collect();
    EvalReport::evaluate(&pairs)
}

fn select<'a>(caches: &'a BTreeMap<&str, &TfCache>, ids: &[String]) -> Result<Vec<&'a TfCache>> {
    ids.iter()
        .map(|id| {
            caches
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("no cache for subject `{id}`")))
        })
        .collect()
}

/// A trained fold model with its training history.
#[derive(Clone, Debug)]
pub struct FittedFold {
    pub checkpoint: Checkpoint,
    pub best_pass: usize,
    pub history: Vec<PassRecord>,
}

fn fit(cfg: &ResolvedConfig, caches: &BTreeMap<&str, &TfCache>, index: usize, fold: &Fold) -> Result<FittedFold> {
    let spec = &cfg.spec;
    let ctx = spec.context();
    let train_c = select(caches, &fold.train).map_err(|e| e.in_stage(index, "split"))?;
    let val_c = select(caches, &fold.validation).map_err(|e| e.in_stage(index, "split"))?;
    let p = cfg.channels.len();
    let norm = if cfg.standardize {
        Standardizer::fit(
            train_c.iter().flat_map(|c| (0..c.n_epochs()).map(|n| c.image_slice(n))),
            p,
        )
        .map_err(|e| e.in_stage(index, "standardize"))?
    } else {
        Standardizer::identity(p)
    };
    let train_set = Dataset::from_caches(&train_c, &norm, ctx).map_err(|e| e.in_stage(index, "dataset"))?;
    let val_set = Dataset::from_caches(&val_c, &norm, ctx).map_err(|e| e.in_stage(index, "dataset"))?;
    let outcome = train(spec, &train_set, &val_set, &cfg.training).map_err(|e| e.in_stage(index, "train"))?;
    Ok(FittedFold {
        checkpoint: Checkpoint {
            spec: outcome.spec,
            params: outcome.params,
            norm,
        },
        best_pass: outcome.best_pass,
        history: outcome.history,
    })
}

fn cache_map(caches: &[(TfCache, String)]) -> Result<BTreeMap<&str, &TfCache>> {
    let by_id: BTreeMap<&str, &TfCache> = caches.iter().map(|(c, _)| (c.subject_id.as_str(), c)).collect();
    if by_id.len() != caches.len() {
        return Err(Error::invalid("duplicate subject ids among the recordings"));
    }
    Ok(by_id)
}

/// Trains the model of fold `index` of the configured split plan.
pub fn train_fold(cfg: &ResolvedConfig, caches: &[(TfCache, String)], index: usize) -> Result<FittedFold> {
    let ids: Vec<String> = caches.iter().map(|(c, _)| c.subject_id.clone()).collect();
    let plan = make_split_plan(&ids, cfg.protocol, cfg.split_seed)?;
    let fold = plan.folds.get(index).ok_or_else(|| {
        Error::invalid(format!(
            "fold {index} does not exist; the plan has {} folds",
            plan.folds.len()
        ))
    })?;
    fit(cfg, &cache_map(caches)?, index, fold)
}

/// Raw network outputs for every epoch of a cached recording, laid out
/// epoch-major as `n_epochs x slots x classes`.
pub fn predict_cache(ck: &Checkpoint, cache: &TfCache) -> Result<Vec<f64>> {
    let ds = Dataset::from_caches(&[cache], &ck.norm, ck.spec.context())?;
    predict_dataset(&ck.spec, &ck.params, &ds)
}

/// Posterior grid of a cached recording.
pub fn predict_grid(ck: &Checkpoint, cache: &TfCache) -> Result<PosteriorGrid> {
    let out = predict_cache(ck, cache)?;
    scatter_flat(
        &out,
        ck.spec.context().output_tau(),
        cache.n_epochs(),
        ck.spec.n_classes(),
    )
}

fn run_fold(cfg: &ResolvedConfig, caches: &BTreeMap<&str, &TfCache>, index: usize, fold: &Fold) -> Result<FoldResult> {
    let mut seconds = Vec::new();
    let clock = Instant::now();
    let test_c = select(caches, &fold.test).map_err(|e| e.in_stage(index, "split"))?;
    let fitted = fit(cfg, caches, index, fold)?;
    seconds.push(("train", clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let ck = &fitted.checkpoint;
    let ctx = ck.spec.context();
    let (slots_n, y) = (ctx.n_outputs(), ck.spec.n_classes());
    let tau = ctx.output_tau();
    let mut slots: Vec<SlotAccuracy> = (0..slots_n)
        .map(|k| SlotAccuracy {
            offset: k as isize - tau as isize,
            correct: 0,
            total: 0,
        })
        .collect();
    let mut subjects = Vec::with_capacity(test_c.len());
    for c in &test_c {
        let mut predict = || -> Result<SubjectPrediction> {
            let out = predict_cache(ck, c)?;
            let n_epochs = c.n_epochs();
            for n in 0..n_epochs {
                for s in slots.iter_mut() {
                    let target = n as isize + s.offset;
                    if target < 0 || target >= n_epochs as isize {
                        continue;
                    }
                    let k = (s.offset + tau as isize) as usize;
                    let at = (n * slots_n + k) * y;
                    s.total += 1;
                    if argmax(&out[at..at + y]) == c.labels[target as usize].index() {
                        s.correct += 1;
                    }
                }
            }
            let grid = scatter_flat(&out, tau, n_epochs, y)?;
            let decisions = VotingRule::ALL
                .iter()
                .map(|&r| decide(&fuse_grid(&grid, r)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(SubjectPrediction {
                subject_id: c.subject_id.clone(),
                truth: c.labels.clone(),
                grid,
                decisions,
            })
        };
        subjects.push(predict().map_err(|e| e.in_stage(index, "predict"))?);
    }
    let k = rule_index(cfg.voting);
    let pairs: Vec<(&[StageLabel], &[StageLabel])> = subjects
        .iter()
        .map(|s| (s.truth.as_slice(), s.decisions[k].labels.as_slice()))
        .collect();
    let report = EvalReport::evaluate(&pairs).map_err(|e| e.in_stage(index, "evaluate"))?;
    seconds.push(("predict", clock.elapsed().as_secs_f64()));
    Ok(FoldResult {
        index,
        fold: fold.clone(),
        best_pass: fitted.best_pass,
        history: fitted.history,
        checkpoint: fitted.checkpoint,
        subjects,
        report,
        slots,
        seconds,
    })
}

/// Cross-validates the configured model over prepared caches. Results do
/// not depend on `cfg.jobs`.
pub fn run_folds(cfg: &ResolvedConfig, caches: &[(TfCache, String)]) -> Result<ExperimentResult> {
    let ids: Vec<String> = caches.iter().map(|(c, _)| c.subject_id.clone()).collect();
    let plan = make_split_plan(&ids, cfg.protocol, cfg.split_seed)?;
    let by_id = cache_map(caches)?;
    let folds = parallel_map(plan.folds.len(), cfg.jobs, |i| run_fold(cfg, &by_id, i, &plan.folds[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pooled = pooled_report(&folds, cfg.voting)?;
    let rule_accuracy = VotingRule::ALL
        .iter()
        .map(|&r| Ok((r, pooled_report(&folds, r)?.overall_accuracy)))
        .collect::<Result<Vec<_>>>()?;
    let mut slots = folds[0].slots.clone();
    for s in &mut slots {
        s.correct = 0;
        s.total = 0;
    }
    for f in &folds {
        for (acc, s) in slots.iter_mut().zip(&f.slots) {
            acc.correct += s.correct;
            acc.total += s.total;
        }
    }
    Ok(ExperimentResult {
        voting: cfg.voting,
        folds,
        pooled,
        rule_accuracy,
        slots,
        cache_hashes: caches.iter().map(|(c, h)| (c.subject_id.clone(), h.clone())).collect(),
    })
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |a| format!("{a:.6}"))
}

impl ExperimentResult {
    /// Run summary: per-rule and per-slot accuracy, folds and cache hashes.
    pub fn summary_text(&self, spec: &ModelSpec) -> String {
        let ctx = spec.context();
        let mut s = String::new();
        let _ = writeln!(s, "arch = {}", spec.arch_name());
        let _ = writeln!(s, "mode = {}", ctx.mode);
        let _ = writeln!(s, "tau = {}", ctx.tau);
        let _ = writeln!(s, "voting = {}", self.voting);
        let _ = writeln!(s, "\n[voting_accuracy]");
        for (r, a) in &self.rule_accuracy {
            let _ = writeln!(s, "{r} = {}", fmt_acc(*a));
        }
        let _ = writeln!(s, "\n[slot_accuracy]");
        for sl in &self.slots {
            let _ = writeln!(
                s,
                "{:+} = {} ({}/{})",
                sl.offset,
                fmt_acc(sl.accuracy()),
                sl.correct,
                sl.total
            );
        }
        let _ = writeln!(s, "\n[folds]");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{} = accuracy {} best_pass {} test {}",
                f.index,
                fmt_acc(f.report.overall_accuracy),
                f.best_pass,
                f.fold.test.join(",")
            );
        }
        let _ = writeln!(s, "\n[caches]");
        for (id, h) in &self.cache_hashes {
            let _ = writeln!(s, "{id} = {h}");
        }
        s
    }

    /// Writes every per-fold artifact and the pooled reports under `out`.
    /// Wall-clock timings go to `timings.log` only.
    pub fn write(&self, out: &Path, spec: &ModelSpec) -> Result<()> {
        let k = rule_index(self.voting);
        for f in &self.folds {
            let dir = out.join(format!("fold{:02}", f.index));
            for sub in ["grids", "hypnograms"] {
                let d = dir.join(sub);
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
            write_checkpoint(dir.join("model.ssck"), &f.checkpoint)?;
            write_atomic(&dir.join("history.csv"), history_csv(&f.history).as_bytes())?;
            write_atomic(&dir.join("report.txt"), f.report.to_text().as_bytes())?;
            for s in &f.subjects {
                write_grid(dir.join("grids").join(format!("{}.pgrd", s.subject_id)), &s.grid)?;
                write_hypnogram(
                    dir.join("hypnograms").join(format!("{}.hyp", s.subject_id)),
                    &s.decisions[k],
                )?;
                let truth = Hypnogram::from_labels(s.truth.clone());
                write_hypnogram(
                    dir.join("hypnograms").join(format!("{}.truth.hyp", s.subject_id)),
                    &truth,
                )?;
            }
        }
        write_atomic(&out.join("report.txt"), self.pooled.to_text().as_bytes())?;
        write_atomic(&out.join("report.csv"), self.pooled.to_csv().as_bytes())?;
        write_atomic(&out.join("summary.txt"), self.summary_text(spec).as_bytes())?;
        let mut log = String::new();
        for f in &self.folds {
            for (stage, secs) in &f.seconds {
                let _ = writeln!(log, "fold {} {stage} {secs:.3}s", f.index);
            }
        }
        write_atomic(&out.join("timings.log"), log.as_bytes())
    }
}

/// Loads the bundles, prepares caches under `out/cache`, cross-validates and
/// writes every artifact under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    let cfg = config.resolve()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let bundles = load_bundles(&cfg.bundles)?;
    let caches = prepare_caches(&bundles, &cfg, Some(&out.join("cache")), cfg.jobs)?;
    let result = run_folds(&cfg, &caches)?;
    write_atomic(&out.join("config.toml"), config.to_toml().as_bytes())?;
    result.write(out, &cfg.spec)?;
    Ok(result)
}
