use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use neurovit::dataset::{
    cache_clahe, cached_relative_path, load_split, read_split_csv, scan_directory, stratified_split, write_split_csv,
    ClassLabel, LabeledImage, ManifestEntry, Split, SplitEntry, SplitRatios,
};
use neurovit::imaging::{clahe, load_image, resize_bilinear, save_png, ClaheConfig, ImageU8};
use neurovit::inference::{predict as predict_probs, render_rollout, rollout_for_image, tta_predict, write_grid_csv};
use neurovit::metrics::{confusion, MetricsReport};
use neurovit::rng;
use neurovit::synthetic::synthetic_set;
use neurovit::training::train_two_stage;
use neurovit::vit::{init_params, load_params, save_params, ViTParams};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{CliError, EvalArgs, PredictArgs, PreprocessArgs, RolloutArgs, SplitArgs, SynthArgs, TrainArgs};

type CliResult<T> = Result<T, CliError>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::User(format!("cannot open {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

fn class_names() -> Vec<&'static str> {
    ClassLabel::ALL.iter().map(|c| c.name()).collect()
}

/// Image root and entry paths, switched to the CLAHE cache when one is set.
fn resolve_entries(entries: Vec<SplitEntry>, data_root: &Path, cache_root: Option<&Path>) -> (PathBuf, Vec<SplitEntry>) {
    match cache_root.filter(|c| !c.as_os_str().is_empty()) {
        Some(cache) => (
            cache.to_path_buf(),
            entries
                .into_iter()
                .map(|e| SplitEntry {
                    path: cached_relative_path(&e.path),
                    ..e
                })
                .collect(),
        ),
        None => (data_root.to_path_buf(), entries),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<ViTParams<f32>> {
    Ok(load_params(path, None)?)
}

fn load_input(path: &Path, apply_clahe: bool) -> CliResult<ImageU8> {
    let img = load_image(path)?;
    Ok(if apply_clahe { clahe(&img, &ClaheConfig::default())? } else { img })
}

fn manifest_entries(entries: &[SplitEntry]) -> Vec<ManifestEntry> {
    entries
        .iter()
        .map(|e| ManifestEntry {
            path: e.path.clone(),
            label: e.label,
        })
        .collect()
}

pub fn split(a: SplitArgs) -> CliResult<()> {
    let scan = scan_directory(&a.data_root)?;
    for w in &scan.warnings {
        eprintln!("warning: {w}");
    }
    let ratios = SplitRatios {
        train: a.ratios[0],
        val: a.ratios[1],
        test: a.ratios[2],
    };
    let assignment = stratified_split(&scan.manifest, ratios, a.seed)?;
    let mut w = create(&a.out)?;
    write_split_csv(&assignment, &mut w)?;
    w.flush().map_err(|e| CliError::User(format!("cannot write {}: {e}", a.out.display())))?;
    print!("{}", assignment.summary_table());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> CliResult<()> {
    let split = read_split_csv(open(&a.manifest)?)?;
    let entries = manifest_entries(&split.entries);
    let cfg = ClaheConfig {
        tiles_x: a.tiles,
        tiles_y: a.tiles,
        clip_limit: a.clip_limit,
        ..ClaheConfig::default()
    };
    let report = cache_clahe(&entries, &a.src, &a.cache, &cfg)?;
    println!("{} written, {} skipped, {} failed", report.written, report.skipped, report.failed.len());
    for (path, msg) in &report.failed {
        eprintln!("failed: {path}: {msg}");
    }
    if report.failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::User(format!("{} files could not be processed", report.failed.len())))
    }
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:expr),*) => {$(if let Some(v) = $flag { cfg.$field = v; })*};
    }
    set!(output_dir <- a.out_dir, manifest <- a.manifest, data_root <- a.data_root, cache_root <- a.cache_root,
         preset <- a.preset, seed <- a.seed, batch_size <- a.batch_size, stage1_epochs <- a.stage1_epochs,
         stage2_max_epochs <- a.stage2_epochs);
    let model = cfg.model()?;
    let stages = cfg.stages();
    stages.validate()?;

    let split = read_split_csv(open(&cfg.manifest)?)?;
    if !cfg.cache_root.as_os_str().is_empty() {
        // Fill in any missing cache files; existing ones are skipped.
        let report = cache_clahe(&manifest_entries(&split.entries), &cfg.data_root, &cfg.cache_root, &cfg.clahe())?;
        if let Some((path, msg)) = report.failed.first() {
            return Err(CliError::User(format!("preprocessing {path} failed: {msg}")));
        }
    }
    let (root, entries) = resolve_entries(split.entries, &cfg.data_root, Some(&cfg.cache_root));
    let pick = |s: Split| -> CliResult<Vec<LabeledImage>> {
        let chosen: Vec<SplitEntry> = entries.iter().filter(|e| e.split == s).cloned().collect();
        if chosen.is_empty() {
            return Err(CliError::User(format!("manifest has no {} entries", s.name())));
        }
        Ok(load_split(&chosen, &root, model.image_size, model.channels)?)
    };
    let (train_set, val_set) = (pick(Split::Train)?, pick(Split::Val)?);
    log::info!("training on {} images, validating on {}", train_set.len(), val_set.len());

    let init: ViTParams<f32> = init_params(&model, &mut rng::stream(cfg.seed, "init", 0))?;
    let out = train_two_stage(init, &train_set, &val_set, &stages, cfg.seed)?;

    let dir = &cfg.output_dir;
    save_params(&out.raw, &dir.join("params_raw.ckpt"))?;
    save_params(&out.params, &dir.join("params_ema.ckpt"))?;
    save_params(&out.best, &dir.join("params_best.ckpt"))?;
    let mut w = create(&dir.join("train_report.csv"))?;
    out.report.write_csv(&mut w)?;
    let summary = out.report.summary();
    write_text(&dir.join("train_summary.txt"), &summary)?;
    print!("{summary}");
    println!("outputs written to {}", dir.display());
    Ok(())
}

fn read_predictions(path: &Path) -> CliResult<(Vec<usize>, Vec<usize>)> {
    let bad = |m: String| CliError::User(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_reader(open(path)?);
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name:?}")))
    };
    let (ti, pi) = (col("label")?, col("predicted")?);
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| rec.get(i).unwrap_or("").parse::<ClassLabel>().map(|l| l.index());
        truth.push(parse(ti)?);
        pred.push(parse(pi)?);
    }
    Ok((truth, pred))
}

struct Scored {
    path: String,
    label: usize,
    predicted: usize,
    probs: Vec<f64>,
}

fn write_predictions(path: &Path, rows: &[Scored]) -> CliResult<()> {
    let fail = |e: csv::Error| CliError::User(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["relative_path".to_string(), "label".into(), "predicted".into()];
    header.extend(class_names().iter().map(|n| format!("p_{n}")));
    w.write_record(&header).map_err(fail)?;
    for r in rows {
        let mut rec = vec![
            r.path.clone(),
            ClassLabel::ALL[r.label].name().to_string(),
            ClassLabel::ALL[r.predicted].name().to_string(),
        ];
        rec.extend(r.probs.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let mut scored = Vec::new();
    let (truth, pred) = match &a.predictions {
        Some(p) => read_predictions(p)?,
        None => {
            let params = load_checkpoint(a.checkpoint.as_deref().expect("required by clap"))?;
            let split: Split = a.split.parse()?;
            let manifest = read_split_csv(open(a.manifest.as_deref().expect("required by clap"))?)?;
            let chosen = manifest.entries_in(split);
            if chosen.is_empty() {
                return Err(CliError::User(format!("manifest has no {} entries", split.name())));
            }
            let (root, entries) = resolve_entries(chosen, &a.data_root, a.cache_root.as_deref());
            let mc = params.config().clone();
            let images = load_split(&entries, &root, mc.image_size, mc.channels)?;
            let probs: Vec<Vec<f64>> = images
                .par_chunks(a.batch_size.max(1))
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|li| {
                            if a.tta {
                                tta_predict(&params, &li.image).map(|r| r.mean)
                            } else {
                                predict_probs(&params, &li.image)
                            }
                        })
                        .collect::<neurovit::Result<Vec<_>>>()
                })
                .collect::<neurovit::Result<Vec<_>>>()?
                .concat();
            for ((e, li), p) in entries.iter().zip(&images).zip(probs) {
                scored.push(Scored {
                    path: e.path.clone(),
                    label: li.label.index(),
                    predicted: argmax(&p),
                    probs: p,
                });
            }
            (
                scored.iter().map(|s| s.label).collect(),
                scored.iter().map(|s| s.predicted).collect(),
            )
        }
    };
    let names = class_names();
    let report = MetricsReport::new(confusion(&truth, &pred, names.len())?, &names)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &a.out_dir {
        write_text(&dir.join("metrics.txt"), &text)?;
        let mut w = create(&dir.join("metrics.csv"))?;
        report.write_csv(&mut w)?;
        let mut w = create(&dir.join("confusion.csv"))?;
        report.confusion.write_csv(&names, &mut w)?;
        let mut w = create(&dir.join("confusion_normalized.csv"))?;
        report.write_normalized_csv(&mut w)?;
        if !scored.is_empty() {
            write_predictions(&dir.join("predictions.csv"), &scored)?;
        }
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let img = load_input(&a.image, a.clahe)?;
    let probs = if a.tta { tta_predict(&params, &img)?.mean } else { predict_probs(&params, &img)? };
    let names = class_names();
    println!("class: {}", names[argmax(&probs)]);
    for (n, p) in names.iter().zip(&probs) {
        println!("{n}: {p:.6}");
    }
    Ok(())
}

pub fn rollout(a: RolloutArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(CliError::User(format!("--alpha {} outside [0, 1]", a.alpha)));
    }
    let params = load_checkpoint(&a.checkpoint)?;
    let mc = params.config().clone();
    let img = load_input(&a.image, a.clahe)?.with_channels(mc.channels)?;
    let shown = resize_bilinear(&img, mc.image_size, mc.image_size);
    let map = rollout_for_image(&params, &shown)?;
    let overlay = render_rollout(&shown, &map, a.alpha)?;
    let stem = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let png = a.out.join(format!("{stem}_rollout.png"));
    let grid = a.out.join(format!("{stem}_rollout.csv"));
    save_png(&overlay, &png)?;
    let mut w = create(&grid)?;
    write_grid_csv(&map, &mut w)?;
    println!("{}", png.display());
    println!("{}", grid.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    if a.per_class == 0 || a.size < 8 {
        return Err(CliError::User("synth needs --per-class >= 1 and --size >= 8".into()));
    }
    let set = synthetic_set(a.per_class * ClassLabel::ALL.len(), a.size, a.seed);
    for (i, item) in set.iter().enumerate() {
        let path = a
            .out
            .join(item.label.name())
            .join(format!("{}_{:04}.png", item.label.name(), i / ClassLabel::ALL.len()));
        save_png(&item.image, &path)?;
    }
    println!("{} images written to {}", set.len(), a.out.display());
    Ok(())
}
