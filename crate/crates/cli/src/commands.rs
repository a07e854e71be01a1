//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context as _, Result};
use rayon::prelude::*;

use pedilung::eval::{collapse_index, render, reports_to_csv, reports_to_json, Level};
use pedilung::ingest::{load_wav, stratified_split, synthesize_recording, write_wav, write_wav_f32, Annotations, RecordLabel};
use pedilung::model::{argmax_rows, embeddings_to_csv};
use pedilung::scalogram::read_scalogram;
use pedilung::trainer::{load_dataset, manifest_segments, predict_dataset, render_entry, SegmentRef};
use pedilung::{
    build_manifest, build_model, challenge_scores, confusion, preprocess, scalogram_image, AnyLabel, AudioRecording,
    Checkpoint, Dataset, DatasetManifest, EventLabel, FeatureSpec, ModelConfig, ReportFormat, ScalogramCache, ScoreReport,
    SplitTag, SyntheticSpec, TaskId, TrainConfig, Trainer,
};

use crate::args::*;
use crate::config::RunConfig;
use crate::UsageError;

pub const CACHE_ENV: &str = "PEDILUNG_CACHE";
const DEFAULT_CACHE: &str = "pedilung-cache";

/// Resolved global options.
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub cache: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config = RunConfig::load_or_default(cli.config.as_deref())?;
        let seed = cli.seed.unwrap_or(config.train.seed);
        let cache = cli
            .cache
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE));
        Ok(Context { config, seed, cache })
    }

    fn manifest(&self, flag: Option<&Path>) -> Result<DatasetManifest> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.config.dataset.manifest.clone())
            .ok_or_else(|| UsageError("no manifest: pass --manifest or set dataset.manifest".into()))?;
        Ok(DatasetManifest::read(&path)?)
    }

    fn model_config(&self, args: &ModelArgs, task: TaskId) -> ModelConfig {
        let mut m = if args.toy {
            ModelConfig::toy(task.n_classes())
        } else {
            self.config.model.clone()
        };
        m.n_classes = task.n_classes();
        m
    }

    /// Scalograms sized to the network input.
    fn feature_spec(&self, model: &ModelConfig) -> FeatureSpec {
        let mut scalogram = self.config.scalogram.clone();
        scalogram.height = model.input_height;
        scalogram.width = model.input_width;
        FeatureSpec {
            dsp: self.config.dsp.clone(),
            scalogram,
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli)?;
    log::info!("seed {}", ctx.seed);
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Preprocess(a) => preprocess_file(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Plot(a) => plot(&ctx, a),
        Command::ExportEmbeddings(a) => export_embeddings(&ctx, a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn ingest(ctx: &Context, a: IngestArgs) -> Result<()> {
    let root = a
        .root
        .or_else(|| ctx.config.dataset.root.clone())
        .ok_or_else(|| usage("no corpus root: pass --root or set dataset.root"))?;
    let out = a
        .out
        .or_else(|| ctx.config.dataset.manifest.clone())
        .ok_or_else(|| usage("no output: pass --out or set dataset.manifest"))?;
    let split = SplitTag::from_str(&a.split).map_err(|e| usage(e.to_string()))?;
    let (manifest, skipped) = build_manifest(&root, split)?;
    for s in &skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    log::info!("{} recordings paired, {} files skipped", manifest.len(), skipped.len());
    for (class, n) in manifest.class_counts.named() {
        log::info!("  {class}: {n}");
    }
    match (a.val_ratio, a.val_out) {
        (Some(r), Some(val_out)) => {
            if !(r > 0.0 && r < 1.0) {
                return Err(usage(format!("--val-ratio {r} must lie strictly between 0 and 1")));
            }
            let (train, val) = stratified_split(&manifest, 1.0 - r, ctx.seed)?;
            train.write(&out)?;
            val.write(&val_out)?;
            log::info!("split {} train / {} validation", train.len(), val.len());
        }
        _ => manifest.write(&out)?,
    }
    Ok(())
}

fn file_slug(name: &str) -> String {
    name.to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn synth(ctx: &Context, a: SynthArgs) -> Result<()> {
    if !(a.duration > 0.0) {
        return Err(usage("--duration must be positive"));
    }
    let specs: Vec<Box<dyn Fn(f64, u64) -> SyntheticSpec>> = a
        .classes
        .iter()
        .map(|c| -> Result<Box<dyn Fn(f64, u64) -> SyntheticSpec>> {
            Ok(if a.record {
                let l = RecordLabel::parse(c).map_err(|e| usage(e.to_string()))?;
                Box::new(move |d, s| SyntheticSpec::preset_record(l, d, s))
            } else {
                let l = EventLabel::parse(c).map_err(|e| usage(e.to_string()))?;
                Box::new(move |d, s| SyntheticSpec::preset_event(l, d, s))
            })
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for i in 0..a.n {
        let seed = ctx.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let spec = specs[i % specs.len()](a.duration, seed);
        let class = match spec.class {
            AnyLabel::Event(l) => l.name(),
            AnyLabel::Record(l) => l.name(),
        };
        let stem = format!("{}_{i:04}", file_slug(class));
        let (mut rec, record, events) = synthesize_recording(&spec);
        rec.id = stem.clone();
        write_wav(&a.out.join(format!("{stem}.wav")), &rec)?;
        write_file(&a.out.join(format!("{stem}.json")), Annotations { record, events }.to_json())?;
    }
    log::info!("wrote {} recordings to {}", a.n, a.out.display());
    Ok(())
}

fn preprocess_file(ctx: &Context, a: PreprocessArgs) -> Result<()> {
    let rec = preprocess(&load_wav(&a.input)?, &ctx.config.dsp)?;
    write_wav_f32(&a.out, &rec)?;
    log::info!("{:.3} s at {} Hz -> {}", rec.duration(), rec.sample_rate, a.out.display());
    Ok(())
}

/// Segments grouped by the manifest entry they come from.
fn entry_groups(segments: Vec<SegmentRef>) -> Vec<Vec<SegmentRef>> {
    let mut groups: Vec<Vec<SegmentRef>> = Vec::new();
    for s in segments {
        match groups.last_mut() {
            Some(g) if g[0].entry == s.entry => g.push(s),
            _ => groups.push(vec![s]),
        }
    }
    groups
}

/// Counts of freshly computed and already cached segments.
pub struct FeaturizeStats {
    pub computed: usize,
    pub cached: usize,
}

/// Fill `cache` with every segment of `manifest`, one recording per work item.
pub fn featurize_manifest(
    manifest: &DatasetManifest,
    level: Level,
    spec: &FeatureSpec,
    cache: &ScalogramCache,
    workers: Option<usize>,
) -> Result<(Vec<SegmentRef>, FeaturizeStats)> {
    let segments = manifest_segments(manifest, level, &spec.dsp)?;
    let groups = entry_groups(segments.clone());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    let counts = pool.install(|| {
        groups
            .par_iter()
            .map(|g| -> pedilung::Result<(usize, usize)> {
                let keys: Vec<String> = g.iter().map(|s| s.cache_key(spec)).collect();
                if keys.iter().all(|k| cache.contains(k)) {
                    return Ok((0, g.len()));
                }
                let images = render_entry(&manifest.entries[g[0].entry], g, spec)?;
                for (k, img) in keys.iter().zip(&images) {
                    cache.store(k, img)?;
                }
                Ok((g.len(), 0))
            })
            .collect::<pedilung::Result<Vec<_>>>()
    })?;
    let stats = FeaturizeStats {
        computed: counts.iter().map(|c| c.0).sum(),
        cached: counts.iter().map(|c| c.1).sum(),
    };
    Ok((segments, stats))
}

fn featurize(ctx: &Context, a: FeaturizeArgs) -> Result<()> {
    let manifest = ctx.manifest(a.manifest.as_deref())?;
    let task = ctx.config.task(a.model.task);
    let spec = ctx.feature_spec(&ctx.model_config(&a.model, task));
    let root = a.out.unwrap_or_else(|| ctx.cache.clone());
    let cache = ScalogramCache::new(&root);
    let (segments, stats) = featurize_manifest(&manifest, task.level(), &spec, &cache, a.workers)?;
    log::info!("{} segments: {} computed, {} already cached", segments.len(), stats.computed, stats.cached);

    let mut index = String::from("segment\tlabel\tkey\n");
    for s in &segments {
        let label = match s.label {
            AnyLabel::Event(l) => l.name(),
            AnyLabel::Record(l) => l.name(),
        };
        index.push_str(&format!("{}\t{label}\t{}\n", s.id, s.cache_key(&spec)));
    }
    let stem = a.manifest.as_deref().or(ctx.config.dataset.manifest.as_deref()).and_then(Path::file_stem);
    let index_path = root.join(format!("{}.index.tsv", stem.map_or("manifest".into(), |s| s.to_string_lossy())));
    if std::fs::read_to_string(&index_path).ok().as_deref() != Some(index.as_str()) {
        write_file(&index_path, index)?;
    }
    Ok(())
}

fn load_features(
    ctx: &Context,
    manifest: &DatasetManifest,
    task: TaskId,
    spec: &FeatureSpec,
    workers: Option<usize>,
) -> Result<Dataset> {
    let cache = ScalogramCache::new(&ctx.cache);
    let (_, stats) = featurize_manifest(manifest, task.level(), spec, &cache, workers)?;
    if stats.computed > 0 {
        log::info!("cached {} new scalograms under {}", stats.computed, ctx.cache.display());
    }
    Ok(load_dataset(manifest, task, spec, &cache)?)
}

fn train_config(ctx: &Context, task: TaskId, gamma: Option<f64>, flags: &TrainFlags, out: &Path) -> TrainConfig {
    let mut c = ctx.config.train.clone();
    c.task = task;
    c.seed = ctx.seed;
    c.gamma = gamma.or(c.gamma);
    c.epochs = flags.epochs.unwrap_or(c.epochs);
    c.batch_size = flags.batch_size.unwrap_or(c.batch_size);
    c.learning_rate = flags.learning_rate.unwrap_or(c.learning_rate);
    c.lr_decay = flags.lr_decay.unwrap_or(c.lr_decay);
    c.checkpoint_dir = Some(out.to_path_buf());
    c
}

fn score(model: &pedilung::Model, ds: &Dataset, fine: TaskId, task: TaskId, batch: usize) -> Result<ScoreReport> {
    let probs = predict_dataset(model, ds, batch)?;
    let mut preds = argmax_rows(&probs);
    let mut labels = ds.labels.clone();
    if task != fine {
        for v in preds.iter_mut().chain(labels.iter_mut()) {
            *v = collapse_index(fine, *v)?;
        }
    }
    Ok(challenge_scores(&confusion(&preds, &labels, task.n_classes())?, task)?)
}

/// Train one model and, with a validation set, score it.
fn train_once(
    ctx: &Context,
    model_cfg: &ModelConfig,
    config: TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    resume: Option<&Path>,
) -> Result<(Trainer, Option<ScoreReport>)> {
    let out = config.checkpoint_dir.clone().expect("output directory set");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut t = match resume {
        Some(p) => {
            let mut t = Trainer::resume(Checkpoint::load(p)?, train, Some(config.epochs))?;
            t.config.checkpoint_dir = Some(out.clone());
            t
        }
        None => Trainer::new(build_model(model_cfg, ctx.seed)?, config, train)?,
    };
    t.fit(train, val)?;
    write_file(&out.join("history.json"), t.history.to_json())?;
    let report = match val {
        Some(v) => {
            let mut r = score(&t.model, v, t.config.task, t.config.task, t.config.eval_batch_size)?;
            r.gamma = Some(t.focal.gamma);
            write_file(&out.join("report.json"), reports_to_json(std::slice::from_ref(&r)))?;
            Some(r)
        }
        None => None,
    };
    Ok((t, report))
}

fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let task = a.model.task.unwrap_or(ctx.config.train.task);
    let model_cfg = ctx.model_config(&a.model, task);
    let spec = ctx.feature_spec(&model_cfg);
    let config = train_config(ctx, task, a.gamma, &a.train, &a.out);
    config.validate()?;
    let train = load_features(ctx, &ctx.manifest(a.manifest.as_deref())?, task, &spec, a.train.workers)?;
    let val = match &a.val_manifest {
        Some(p) => Some(load_features(ctx, &DatasetManifest::read(p)?, task, &spec, a.train.workers)?),
        None => None,
    };
    log::info!("task {task}: {} training segments, {} validation", train.len(), val.as_ref().map_or(0, Dataset::len));

    let mut resolved = ctx.config.clone();
    resolved.model = model_cfg.clone();
    resolved.scalogram = spec.scalogram.clone();
    resolved.train = config.clone();
    write_file(&a.out.join("run.toml"), resolved.to_toml())?;

    let (t, report) = train_once(ctx, &model_cfg, config, &train, val.as_ref(), a.resume.as_deref())?;
    if let Some(r) = report {
        println!("{}", render(&[r], ReportFormat::Json).trim_end());
    }
    log::info!("{} epochs; checkpoints in {}", t.completed_epochs(), a.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let format = ReportFormat::from_str(&a.format).map_err(|e| usage(e.to_string()))?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let fine = ckpt.meta.train.task;
    let task = a.task.or(ctx.config.eval.task).unwrap_or(fine);
    if task != fine && fine.coarse() != Some(task) {
        return Err(usage(format!("a task {fine} checkpoint cannot be scored on task {task}")));
    }
    let spec = ctx.feature_spec(&ckpt.model.config);
    let ds = load_features(ctx, &ctx.manifest(a.manifest.as_deref())?, fine, &spec, None)?;
    let mut report = score(&ckpt.model, &ds, fine, task, ctx.config.train.eval_batch_size)?;
    report.gamma = Some(ctx.config.gamma(None).unwrap_or_else(|| ckpt.meta.train.gamma()));
    let text = render(&[report], format);
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(out, text)?;
    }
    Ok(())
}

fn sweep(ctx: &Context, a: SweepArgs) -> Result<()> {
    if a.gammas.is_empty() {
        return Err(usage("--gammas is empty"));
    }
    let task = a.model.task.unwrap_or(ctx.config.train.task);
    let model_cfg = ctx.model_config(&a.model, task);
    let spec = ctx.feature_spec(&model_cfg);
    let train = load_features(ctx, &ctx.manifest(a.manifest.as_deref())?, task, &spec, a.train.workers)?;
    let val = load_features(ctx, &DatasetManifest::read(&a.val_manifest)?, task, &spec, a.train.workers)?;
    let mut reports = Vec::with_capacity(a.gammas.len());
    for &g in &a.gammas {
        let config = train_config(ctx, task, Some(g), &a.train, &a.out.join(format!("gamma-{g}")));
        let (_, r) = train_once(ctx, &model_cfg, config, &train, Some(&val), None)?;
        let r = r.expect("validation report");
        log::info!("gamma {g}: Score {:.4}", r.score);
        reports.push(r);
    }
    write_file(&a.out.join("sweep.json"), reports_to_json(&reports))?;
    write_file(&a.out.join("sweep.csv"), reports_to_csv(&reports))?;
    print!("{}", reports_to_csv(&reports));
    Ok(())
}

fn predict(ctx: &Context, a: PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let task = ckpt.meta.train.task;
    let spec = ctx.feature_spec(&ckpt.model.config);
    let ds = load_features(ctx, &ctx.manifest(a.manifest.as_deref())?, task, &spec, None)?;
    let probs = predict_dataset(&ckpt.model, &ds, ctx.config.train.eval_batch_size)?;
    let names = task.class_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id", "label", "predicted"];
    header.extend(names);
    w.write_record(&header)?;
    for ((id, &label), (p, row)) in ds.ids.iter().zip(&ds.labels).zip(argmax_rows(&probs).into_iter().zip(&probs)) {
        let mut rec = vec![id.clone(), names[label].to_string(), names[p].to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    let text = w.into_inner()?;
    match &a.out {
        Some(out) => write_file(out, text),
        None => {
            print!("{}", String::from_utf8(text)?);
            Ok(())
        }
    }
}

fn crop(rec: AudioRecording, start: Option<f64>, end: Option<f64>) -> Result<AudioRecording> {
    if start.is_none() && end.is_none() {
        return Ok(rec);
    }
    let fs = rec.sample_rate as f64;
    let s = start.unwrap_or(0.0);
    let e = end.unwrap_or(rec.duration());
    if !(s >= 0.0 && e > s && e <= rec.duration() + 1e-9) {
        return Err(usage(format!("window {s}..{e} s outside a {:.3} s recording", rec.duration())));
    }
    let (i, j) = ((s * fs).round() as usize, ((e * fs).round() as usize).min(rec.len()));
    Ok(AudioRecording::new(rec.id.clone(), rec.samples[i..j].to_vec(), rec.sample_rate))
}

fn plot(ctx: &Context, a: PlotArgs) -> Result<()> {
    let is_cache = a.input.extension().is_some_and(|e| e == pedilung::scalogram::cache::EXTENSION);
    let image = if is_cache {
        read_scalogram(&a.input)?
    } else {
        let mut rec = crop(load_wav(&a.input)?, a.start, a.end)?;
        if a.preprocess {
            rec = preprocess(&rec, &ctx.config.dsp)?;
        }
        scalogram_image(&rec.samples, rec.sample_rate as f64, &ctx.config.scalogram)?
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    image.write_png(&a.out)?;
    log::info!("{}x{} scalogram -> {}", image.width, image.height, a.out.display());
    Ok(())
}

fn export_embeddings(ctx: &Context, a: ExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let task = ckpt.meta.train.task;
    let spec = ctx.feature_spec(&ckpt.model.config);
    let ds = load_features(ctx, &ctx.manifest(a.manifest.as_deref())?, task, &spec, None)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut rows = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(ctx.config.train.eval_batch_size.max(1)) {
        rows.extend(ckpt.model.embed(&ds.batch(chunk), chunk.len())?);
    }
    let names = task.class_names();
    let labels: Vec<String> = ds.labels.iter().map(|&l| names[l].to_string()).collect();
    write_file(&a.out, embeddings_to_csv(&ds.ids, &labels, &rows)?)?;
    log::info!("{} embeddings of width {} -> {}", rows.len(), rows.first().map_or(0, Vec::len), a.out.display());
    Ok(())
}
