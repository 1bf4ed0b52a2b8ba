use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;
use xmorph::correspond::{identity_pairs, kema_inputs, property_pairs};
use xmorph::data::{load_manifest, write_feature_csv, write_manifest, DatasetManifest, TrialFilter};
use xmorph::edn::train_edn;
use xmorph::eval::{read_report_csv, run_protocol, write_report_csv, write_summary_json};
use xmorph::featurize::{featurize, read_time_series, read_wav, SignalKind};
use xmorph::kema::fit_kema;
use xmorph::model_io::{save_model, StoredModel};
use xmorph::synth::generate_synthetic_dataset;
use xmorph::{LabelKind, Provenance, TrialRecord};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot;
use crate::{Cli, Command, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn name(command: &Command) -> &'static str {
    match command {
        Command::Synth { .. } => "synth",
        Command::Featurize { .. } => "featurize",
        Command::Augment { .. } => "augment",
        Command::TrainEdn(_) => "train-edn",
        Command::TrainKema(_) => "train-kema",
        Command::Evaluate(_) => "evaluate",
        Command::Report { .. } => "report",
    }
}

/// The run record: everything except `timestamp` is a function of the
/// arguments and the resolved configuration.
fn write_run_record(cli: &Cli, config: &RunConfig) -> Result<()> {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let record = json!({
        "command": name(&cli.command),
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": timestamp,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "config": config,
    });
    let text = serde_json::to_string_pretty(&record).map_err(xmorph::Error::from)?;
    write(&cli.global.out.join("run.json"), &(text + "\n"))
}

pub fn dispatch(cli: &Cli, config: &RunConfig) -> Result<()> {
    let out = &cli.global.out;
    create_dir(out)?;
    match &cli.command {
        Command::Synth { .. } => synth(config, out)?,
        Command::Featurize { inputs, .. } => featurize_files(config, inputs, out)?,
        Command::Augment { manifest, .. } => augment(config, manifest, out)?,
        Command::TrainEdn(args) => train(config, args, out, Projection::Edn)?,
        Command::TrainKema(args) => train(config, args, out, Projection::Kema)?,
        Command::Evaluate(args) => {
            let manifest = match (&args.manifest, args.synthetic) {
                (Some(path), _) => load_manifest(path)?,
                (None, true) => generate_synthetic_dataset(&config.synth)?.manifest,
                (None, false) => return Err(CliError::usage("evaluate needs --manifest or --synthetic")),
            };
            evaluate(config, &manifest, out)?;
        }
        Command::Report { input } => {
            let csv = if input.is_dir() { input.join("report.csv") } else { input.clone() };
            render_plots(&csv, &out.join("plots"))?;
        }
    }
    write_run_record(cli, config)
}

fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_synthetic_dataset(&config.synth)?;
    let path = write_manifest(&ds.manifest, out)?;
    log::info!("wrote {} records to {}", ds.manifest.records.len(), path.display());
    Ok(())
}

fn signal_kind(config: &RunConfig, path: &Path) -> Result<SignalKind> {
    if let Some(kind) = config.featurize.kind {
        return Ok(kind);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("wav") => Ok(SignalKind::AudioWave),
        _ => Err(CliError::usage(format!(
            "{}: pass --kind for non-WAV input",
            path.display()
        ))),
    }
}

fn featurize_files(config: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::with_capacity(inputs.len());
    for path in inputs {
        let signal = match signal_kind(config, path)? {
            SignalKind::AudioWave => read_wav(path)?,
            kind => read_time_series(path, kind)?,
        };
        rows.push(featurize(&signal)?.values);
    }
    let path = out.join("features.csv");
    write_feature_csv(&path, rows.iter().map(Vec::as_slice))?;
    log::info!("wrote {} feature vectors to {}", rows.len(), path.display());
    Ok(())
}

fn augment(config: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let mut manifest = load_manifest(manifest)?;
    let real: Vec<&TrialRecord> = manifest.records.iter().filter(|r| r.provenance == Provenance::Real).collect();
    let added: Vec<TrialRecord> = xmorph::augment::augment_trials(&real, config.augment.k, config.augment.seed)?
        .into_iter()
        .filter(|r| r.provenance == Provenance::Augmented)
        .collect();
    log::info!("adding {} augmented trials", added.len());
    manifest.extend_records(added)?;
    write_manifest(&manifest, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Projection {
    Edn,
    Kema,
}

fn train(config: &RunConfig, args: &TrainArgs, out: &Path, projection: Projection) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let t = &config.train;
    let src = manifest.select_trials(&TrialFilter::context(&t.source, t.behavior, t.modality))?;
    let tgt = manifest.select_trials(&TrialFilter::context(&t.target, t.behavior, t.modality))?;
    let model = match projection {
        Projection::Edn => {
            let pairs = match t.pairing {
                LabelKind::ObjectId => identity_pairs(&src, &tgt)?,
                kind => property_pairs(&src, &tgt, kind, &manifest.objects)?,
            };
            log::info!("training on {} pairs", pairs.len());
            StoredModel::Edn(train_edn(&pairs, &t.edn)?)
        }
        Projection::Kema => {
            let inputs = kema_inputs(&src, &tgt, t.pairing, &manifest.objects)?;
            StoredModel::Kema(fit_kema(&inputs, &t.kema)?)
        }
    };
    save_model(&model, &out.join("model.json"))?;
    Ok(())
}

fn evaluate(config: &RunConfig, manifest: &DatasetManifest, out: &Path) -> Result<()> {
    let report = run_protocol(manifest, &config.evaluate)?;
    let csv = out.join("report.csv");
    write_report_csv(&report, &csv)?;
    write_summary_json(&report, &out.join("summary.json"))?;
    for (condition, delta) in &report.summary.mean_accuracy_delta {
        log::info!("mean accuracy delta ({condition}): {delta:.2}");
    }
    render_plots(&csv, &out.join("plots"))
}

fn render_plots(csv: &Path, dir: &Path) -> Result<()> {
    let rows = read_report_csv(csv)?;
    create_dir(dir)?;
    for chart in plot::charts(&rows) {
        write(&dir.join(plot::file_name(&chart)), &plot::render(&chart))?;
    }
    Ok(())
}
