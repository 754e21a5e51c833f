use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dioptra_core::atlas::{aggregate_maps, extract_heatmap, write_atlas, write_heatmap_files, BandScheme};
use dioptra_core::autodiff::Tensor;
use dioptra_core::data::{
    generate_synthetic_dataset, load_manifest, pixel_to_unit, prepare_split, raster_to_tensor,
    GeneratorConfig, PreparedRecord, PreprocessedImage, Split,
};
use dioptra_core::model::{
    ensemble_predict, load_checkpoint, save_checkpoint, AttentionResNet, Target,
};
use dioptra_core::stats::{evaluate, EvalOptions, PredictionSet, ScoredRecord, SliceSpec};
use dioptra_core::train::{samples_for_target, train_ensemble};

use crate::args::{AttendArgs, EvaluateArgs, GenerateArgs, TrainArgs};
use crate::config::resolve_configs;
use crate::error::CliError;

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let config = GeneratorConfig {
        n_train: args.n_train,
        n_tune: args.n_tune,
        n_val: args.n_val,
        resolution: args.resolution,
        seed: args.seed,
        corrupt_fraction: args.corrupt_fraction,
    };
    let out = generate_synthetic_dataset(&config, &args.out)?;

    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in &out.records {
        *counts.entry((r.split.as_str(), r.cohort.as_str())).or_default() += 1;
    }
    println!(
        "wrote {} records to {}",
        out.records.len(),
        out.manifest_path.display()
    );
    for split in ["train", "tune", "validation"] {
        let total: usize = counts
            .iter()
            .filter(|((s, _), _)| *s == split)
            .map(|(_, n)| n)
            .sum();
        let detail: Vec<String> = counts
            .iter()
            .filter(|((s, _), _)| *s == split)
            .map(|((_, cohort), n)| format!("{cohort} {n}"))
            .collect();
        println!("  {split}: {total} images ({})", detail.join(", "));
    }
    Ok(())
}

fn parse_target_list(s: &str) -> Result<Vec<Target>, CliError> {
    if s == "all" {
        return Ok(vec![
            Target::SphericalEquivalent,
            Target::Sphere,
            Target::Cylinder,
        ]);
    }
    Target::parse(s)
        .map(|t| vec![t])
        .ok_or_else(|| CliError::Usage(format!("unknown target {s:?} (se|sphere|cylinder|all)")))
}

fn target_column(target: Target) -> &'static str {
    match target {
        Target::SphericalEquivalent => "se_d",
        Target::Sphere => "sphere_d",
        Target::Cylinder => "cylinder_d",
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let targets = parse_target_list(&args.target)?;
    let records = load_manifest(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;

    for &target in &targets {
        let (model_config, train_config) =
            resolve_configs(target, args.config.as_deref(), &args.overrides())?;
        let resolution = model_config.input_resolution;

        let train_prep = prepare_split(&args.manifest, &records, Split::Train, resolution)?;
        let tune_prep = prepare_split(&args.manifest, &records, Split::Tune, resolution)?;
        let rejected = train_prep.rejected.len() + tune_prep.rejected.len();
        if rejected > 0 {
            println!("quality filter excluded {rejected} images");
        }

        let train_samples = samples_for_target(&train_prep.prepared, target);
        let tune_samples = samples_for_target(&tune_prep.prepared, target);
        for (samples, prepared, split) in [
            (&train_samples, &train_prep.prepared, "train"),
            (&tune_samples, &tune_prep.prepared, "tune"),
        ] {
            if samples.is_empty() && !prepared.is_empty() {
                return Err(CliError::Usage(format!(
                    "manifest has no {} values in the {split} split",
                    target_column(target)
                )));
            }
        }

        let members = train_ensemble(&model_config, &train_samples, &tune_samples, &train_config)?;
        for (k, (model, log)) in members.iter().enumerate() {
            let ckpt = args.out.join(format!("model_{target}_{k}.ckpt"));
            save_checkpoint(model, &ckpt)?;
            let mut log_bytes = Vec::new();
            log.write_csv(&mut log_bytes)?;
            std::fs::write(args.out.join(format!("train_log_{target}_{k}.csv")), log_bytes)?;
            let best = log
                .epochs
                .iter()
                .find(|e| e.epoch == log.best_epoch)
                .expect("best epoch is logged");
            println!(
                "[{target}] member {k}: best epoch {} (tune MAE {:.4} D), stopped: {}",
                log.best_epoch, best.tune_mae, log.stopped
            );
            println!("wrote {}", ckpt.display());
        }
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    Split::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown split {s:?} (train|tune|validation)"))
    })
}

/// Load `model_<target>_<k>.ckpt` members from a directory, ordered by k.
fn load_ensemble(dir: &Path, target: Target) -> Result<Vec<AttentionResNet>, CliError> {
    let prefix = format!("model_{target}_");
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".ckpt")) {
            if let Ok(k) = rest.parse::<usize>() {
                indexed.push((k, path));
            }
        }
    }
    indexed.sort();
    if indexed.is_empty() {
        return Err(CliError::Io(format!(
            "no {prefix}*.ckpt checkpoints in {}",
            dir.display()
        )));
    }
    indexed
        .into_iter()
        .map(|(_, path)| load_checkpoint(&path).map_err(CliError::from))
        .collect()
}

/// Batched eval-mode ensemble predictions for prepared records.
fn ensemble_predictions(
    models: &[AttentionResNet],
    prepared: &[PreparedRecord],
    resolution: usize,
) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(64) {
        let mut data = vec![0.0; chunk.len() * 3 * resolution * resolution];
        for (bi, rec) in chunk.iter().enumerate() {
            for c in 0..3 {
                for y in 0..resolution {
                    for x in 0..resolution {
                        data[((bi * 3 + c) * resolution + y) * resolution + x] =
                            pixel_to_unit(rec.raster.get(x, y)[c]);
                    }
                }
            }
        }
        let batch = Tensor::new(
            vec![chunk.len(), 3, resolution, resolution],
            data,
        )
        .expect("finite pixels");
        out.extend(ensemble_predict(models, &batch)?);
    }
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let target = Target::parse(&args.target)
        .ok_or_else(|| CliError::Usage(format!("unknown target {:?}", args.target)))?;
    let split = parse_split(&args.split)?;
    let margins: Vec<f64> = args
        .margins
        .split(',')
        .map(|m| m.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad margins {:?}", args.margins)))?;
    let slices: Vec<SliceSpec> = args
        .slice
        .iter()
        .map(|s| {
            SliceSpec::parse(s)
                .ok_or_else(|| CliError::Usage(format!("unknown slice {s:?}")))
        })
        .collect::<Result<_, _>>()?;

    let models = load_ensemble(&args.checkpoints, target)?;
    let resolution = models[0].config().input_resolution;
    let records = load_manifest(&args.manifest)?;
    let prep = prepare_split(&args.manifest, &records, split, resolution)?;
    if prep.prepared.is_empty() {
        return Err(CliError::Eval(format!("{split} split is empty")));
    }

    let predictions = ensemble_predictions(&models, &prep.prepared, resolution)?;
    let mut entries = Vec::with_capacity(prep.prepared.len());
    for (rec, &predicted_d) in prep.prepared.iter().zip(&predictions) {
        let actual_d = match dioptra_core::train::target_value(&rec.record, target) {
            Some(v) => v,
            None => continue,
        };
        entries.push(ScoredRecord {
            record: rec.record.clone(),
            predicted_d,
            actual_d,
        });
    }
    if entries.is_empty() {
        return Err(CliError::Eval(format!(
            "no {} values in the {split} split",
            target_column(target)
        )));
    }
    let set = PredictionSet::new(entries).map_err(|e| CliError::Eval(e.to_string()))?;

    let opts = EvalOptions {
        margins,
        n_resamples: args.bootstrap,
        seed: args.seed,
        slices,
    };
    let report = evaluate(&set, &opts).map_err(CliError::from)?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.json"), report.to_json())?;
    let mut csv = Vec::new();
    set.write_predictions_csv(&mut csv)?;
    std::fs::write(args.out.join("predictions.csv"), csv)?;

    println!(
        "n={}  MAE {:.4} D [{:.4}, {:.4}]  R^2 {:.4} [{:.4}, {:.4}]  baseline MAE {:.4} D [{:.4}, {:.4}]",
        report.n,
        report.mae.point,
        report.mae.ci[0],
        report.mae.ci[1],
        report.r2.point,
        report.r2.ci[0],
        report.r2.ci[1],
        report.baseline_mae.point,
        report.baseline_mae.ci[0],
        report.baseline_mae.ci[1],
    );
    println!("margin   model_acc  baseline_acc  p_value");
    for row in &report.margins {
        println!(
            "+/-{:<5} {:<10.4} {:<13.4} {:.3e}",
            row.margin, row.model_acc, row.baseline_acc, row.p_value
        );
    }
    for (name, slice) in &report.slices {
        match slice {
            Some(s) => println!(
                "slice {name}: n={} MAE {:.4} D [{:.4}, {:.4}]",
                s.n, s.mae.point, s.mae.ci[0], s.mae.ci[1]
            ),
            None => println!("slice {name}: no matching records"),
        }
    }
    println!("wrote {}", args.out.join("report.json").display());
    Ok(())
}

pub fn cmd_attend(args: &AttendArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let resolution = model.config().input_resolution;
    let records = load_manifest(&args.manifest)?;
    let prep = prepare_split(&args.manifest, &records, split, resolution)?;

    let selected: Vec<&PreparedRecord> = match &args.image {
        Some(path) => {
            let found = prep
                .prepared
                .iter()
                .find(|p| &p.record.image_path == path)
                .ok_or_else(|| {
                    CliError::Usage(format!("image {path:?} not found in the {split} split"))
                })?;
            vec![found]
        }
        None => prep.prepared.iter().collect(),
    };

    std::fs::create_dir_all(&args.out)?;
    let mut maps = Vec::with_capacity(selected.len());
    for rec in &selected {
        let image = PreprocessedImage {
            pixels: raster_to_tensor(&rec.raster),
            source: Some(rec.record.image_path.clone()),
        };
        let map = extract_heatmap(&model, &image, &rec.record)?;
        let stem = Path::new(&rec.record.image_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        write_heatmap_files(&args.out, &stem, &map, &rec.raster)?;
        maps.push(map);
    }
    println!("wrote {} heatmaps to {}", maps.len(), args.out.display());

    if args.aggregate {
        // The atlas aggregates over the whole split regardless of --image.
        if args.image.is_some() {
            maps.clear();
            for rec in &prep.prepared {
                let image = PreprocessedImage {
                    pixels: raster_to_tensor(&rec.raster),
                    source: Some(rec.record.image_path.clone()),
                };
                maps.push(extract_heatmap(&model, &image, &rec.record)?);
            }
        }
        let atlas = aggregate_maps(&maps, &BandScheme::aggregate_default(), args.min_count)?;
        let atlas_dir = args.out.join("atlas");
        write_atlas(&atlas_dir, &atlas, args.min_count)?;
        if atlas.is_empty() {
            println!(
                "warning: no (eye, band) group reached min-count {}; atlas is empty",
                args.min_count
            );
        } else {
            println!(
                "wrote atlas with {} groups to {}",
                atlas.groups.len(),
                atlas_dir.display()
            );
        }
        for skipped in &atlas.skipped {
            println!(
                "warning: group {}/{} skipped ({} maps < min-count {})",
                skipped.eye, skipped.band, skipped.count, args.min_count
            );
        }
    }
    Ok(())
}
