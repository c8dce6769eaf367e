//! The pipeline stages behind each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use comir::data::{load_dataset, synthetic_pair, DatasetSplit, LayoutDescriptor, MultimodalSample};
use comir::encoder::{infer_with, train_with_progress, visualize, Checkpoint, VisualizationMode};
use comir::equivariance::checkpoint_equivariance_curve;
use comir::imaging::io::{load_any, save_npy, save_png8};
use comir::imaging::Image;
use comir_eval::{
    generate_eval_transforms, read_records, register_pairs, summarize, synthetic_eval_pairs, timing_report,
    write_outputs, write_timing_csv, EvalPair, EvalSummary, PairRecord, PairSource, Stage, TimingEntry,
};
use comir_registration::Method;

use crate::config::{validate_config_with, DatasetConfig, RefModality, RegistrationInputs, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{create_run_dir, Manifest};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECORDS_DIR: &str = "records";
const VIS_TEMPERATURE: f64 = 1.0;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Manifest skeleton carrying the config echo and every resolved seed.
fn config_manifest(command: &str, cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new(command)
        .seed("root", cfg.seed)
        .seed("train", cfg.train.seed.unwrap_or_default())
        .seed("train_data", cfg.train.data_seed.unwrap_or_default())
        .seed("transforms", cfg.evaluation.transform_seed.unwrap_or_default())
        .seed("scenes", cfg.evaluation.scene_seed.unwrap_or_default())
        .seed("registration", cfg.registration.seed.unwrap_or_default());
    if let DatasetConfig::Synthetic { seed: Some(s), .. } = cfg.dataset {
        m = m.seed("dataset", s);
    }
    if let DatasetConfig::Layout { descriptor, .. } = &cfg.dataset {
        m.add_input(descriptor)?;
    }
    m.config = Some(serde_json::to_value(cfg)?);
    Ok(m)
}

fn start_run(command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(&cfg.output_dir, command, cfg.seed)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    info!("{command}: writing to {}", dir.display());
    Ok(dir)
}

/// Training samples: the synthetic scene pair, or the layout's training split.
pub fn load_training_samples(cfg: &RunConfig) -> Result<Vec<MultimodalSample>> {
    match &cfg.dataset {
        DatasetConfig::Synthetic { size, noise_sigma, seed } => {
            Ok(vec![synthetic_pair("scene", *size, *size, *noise_sigma, seed.unwrap_or_default())?])
        }
        DatasetConfig::Layout { descriptor, root } => {
            let layout = LayoutDescriptor::load(descriptor)?;
            let root = root.as_deref().unwrap_or(Path::new("."));
            let all = load_dataset(root, &layout)?;
            Ok(match &layout.split {
                Some(split) if !split.train.is_empty() => {
                    DatasetSplit::select(&all, &split.train).into_iter().cloned().collect()
                }
                _ => all,
            })
        }
    }
}

/// Trains one encoder per modality and wraps the result in a checkpoint.
pub fn train_checkpoint(cfg: &RunConfig, samples: &[MultimodalSample]) -> Result<Checkpoint> {
    let first = samples.first().ok_or_else(|| CliError::Stage("dataset has no samples".into()))?;
    let encoders: Vec<_> = first.images.iter().map(|im| cfg.encoder.for_channels(im.channels())).collect();
    let train_cfg = cfg.train.to_train_config();
    let total = train_cfg.total_steps();
    let mut trained = train_with_progress(samples, &encoders, &train_cfg, &cfg.augmentation, |e| {
        if (e.step + 1) % 20 == 0 || e.step + 1 == total {
            info!("step {}/{total}: loss {:.4}", e.step + 1, e.loss);
        }
    })?;
    Ok(Checkpoint::from_trained(&mut trained, &train_cfg)?)
}

fn save_training_outputs(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    let loss = dir.join("loss.csv");
    let file = fs::File::create(&loss).map_err(|e| CliError::io(&loss, e))?;
    ckpt.history.write_csv(file).map_err(|e| CliError::io(&loss, e))
}

/// `train --config C`: writes `checkpoint.bin`, `loss.csv` and `timing.csv`.
pub fn train(config: &Path, seed_override: Option<u64>) -> Result<PathBuf> {
    let cfg = validate_config_with(config, seed_override)?;
    let mut manifest = config_manifest("train", &cfg)?;
    manifest.add_input(config)?;
    let dir = start_run("train", &cfg)?;
    let samples = load_training_samples(&cfg)?;
    let t = Instant::now();
    let ckpt = train_checkpoint(&cfg, &samples)?;
    let entry = TimingEntry { stage: Stage::Train, seconds: seconds_since(t), images: samples.len() };
    save_training_outputs(&dir, &ckpt)?;
    write_timing_csv(&dir.join("timing.csv"), &timing_report(&[entry]))?;
    manifest.arguments.insert("checkpoint_id".into(), ckpt.id().to_string());
    manifest.finish(&dir)?;
    Ok(dir)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff" | "npy"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn visualization(rep: &Image) -> Option<Image> {
    match rep.channels() {
        1 => Some(visualize(rep, VisualizationMode::Logistic { temperature: VIS_TEMPERATURE })),
        3 => Some(visualize(rep, VisualizationMode::JointPercentile)),
        _ => None,
    }
}

/// `infer --checkpoint K --input DIR`: encodes every image in `DIR` with the
/// `modality` encoder (the checkpoint's first by default) and writes raw
/// `.npy` representations plus 8-bit renderings.
pub fn infer(checkpoint: &Path, input: &Path, modality: Option<&str>, output_dir: &Path, seed: u64) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let modality = modality.unwrap_or(&ckpt.modalities[0]).to_string();
    let m = ckpt.modality_index(&modality)?;
    let files = image_files(input)?;
    if files.is_empty() {
        return Err(CliError::Config(format!("`--input`: no images in {}", input.display())));
    }
    let mut manifest = Manifest::new("infer")
        .seed("root", seed)
        .argument("modality", &modality)
        .argument("checkpoint_id", ckpt.id());
    manifest.add_input(checkpoint)?;
    for f in &files {
        manifest.add_input(f)?;
    }
    let dir = create_run_dir(output_dir, "infer", seed)?;
    let mut net = ckpt.encoder(m)?;
    let t = Instant::now();
    for f in &files {
        let img = load_any(f)?;
        let rep = infer_with(&mut net, &ckpt, &modality, &img)?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        save_npy(&rep.image, &dir.join(format!("{stem}.npy")))?;
        if let Some(vis) = visualization(&rep.image) {
            save_png8(&vis, &dir.join(format!("{stem}.png")))?;
        }
    }
    let entry = TimingEntry { stage: Stage::Infer, seconds: seconds_since(t), images: files.len() };
    write_timing_csv(&dir.join("timing.csv"), &timing_report(&[entry]))?;
    manifest.finish(&dir)?;
    Ok(dir)
}

/// The synthetic evaluation pairs of a config, reference view from `reference`.
pub fn evaluation_pairs(cfg: &RunConfig, reference: RefModality) -> Result<Vec<EvalPair>> {
    let ev = &cfg.evaluation;
    let protocol = ev.protocol();
    let mut rng = ChaCha8Rng::seed_from_u64(ev.transform_seed.unwrap_or_default());
    let transforms = generate_eval_transforms(ev.pairs, ev.quotas.unwrap_or_default(), &mut rng, &protocol)?;
    let source = PairSource::Multimodal {
        noise_sigma: ev.noise_sigma,
        reference_modality: reference.index(),
    };
    Ok(synthetic_eval_pairs(&transforms, &protocol, ev.scene_seed.unwrap_or_default(), source)?)
}

/// Replaces both views of every pair by their representations. The
/// reference goes through the encoder of checkpoint modality `reference`,
/// the floating view through the other one.
pub fn encode_pairs(ckpt: &Checkpoint, pairs: &[EvalPair], reference: RefModality) -> Result<Vec<EvalPair>> {
    if ckpt.modalities.len() != 2 {
        return Err(CliError::Stage(format!(
            "pair registration needs a two-modality checkpoint, this one has {:?}",
            ckpt.modalities
        )));
    }
    let r = reference.index();
    let (ref_name, flt_name) = (ckpt.modalities[r].clone(), ckpt.modalities[1 - r].clone());
    let mut ref_net = ckpt.encoder(r)?;
    let mut flt_net = ckpt.encoder(1 - r)?;
    pairs
        .iter()
        .map(|p| {
            Ok(EvalPair {
                id: p.id.clone(),
                reference: infer_with(&mut ref_net, ckpt, &ref_name, &p.reference)?.image,
                floating: infer_with(&mut flt_net, ckpt, &flt_name, &p.floating)?.image,
                truth: p.truth,
            })
        })
        .collect()
}

/// Options of `register` that override the config.
#[derive(Debug, Clone, Default)]
pub struct RegisterOptions {
    pub methods: Vec<Method>,
    pub reference: Option<RefModality>,
    pub checkpoint: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Registration inputs and per-method records, plus the timing log.
struct Registered {
    records: Vec<PairRecord>,
    timing: Vec<TimingEntry>,
}

fn register_all(cfg: &RunConfig, pairs: &[EvalPair], methods: &[Method], jobs: usize) -> Result<Registered> {
    let protocol = cfg.evaluation.protocol();
    let root = cfg.registration.seed.unwrap_or_default();
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for &method in methods {
        let t = Instant::now();
        let rs = register_pairs(pairs, &cfg.registration.backend(method), &protocol, root, jobs)?;
        let ok = rs.iter().filter(|r| r.error.is_some()).count();
        info!("{method}: {ok}/{} pairs registered", rs.len());
        timing.push(TimingEntry { stage: Stage::Register, seconds: seconds_since(t), images: pairs.len() });
        records.extend(rs);
    }
    Ok(Registered { records, timing })
}

fn write_records(dir: &Path, records: &[PairRecord], methods: &[Method]) -> Result<()> {
    let rec_dir = dir.join(RECORDS_DIR);
    fs::create_dir_all(&rec_dir).map_err(|e| CliError::io(&rec_dir, e))?;
    for &m in methods {
        let mine: Vec<&PairRecord> = records.iter().filter(|r| r.method == m).collect();
        write_text(&rec_dir.join(format!("{m}.json")), &(serde_json::to_string_pretty(&mine)? + "\n"))?;
    }
    Ok(())
}

fn dedup_methods(methods: &[Method]) -> Vec<Method> {
    let mut out: Vec<Method> = Vec::new();
    for &m in methods {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

/// `register --config C [--method M]... [--ref-modality A|B] [--checkpoint K]`:
/// registers the configured synthetic pairs and writes one record file per method.
pub fn register(config: &Path, opts: &RegisterOptions, seed_override: Option<u64>) -> Result<PathBuf> {
    let mut cfg = validate_config_with(config, seed_override)?;
    if !opts.methods.is_empty() {
        cfg.registration.methods = dedup_methods(&opts.methods);
    }
    if let Some(r) = opts.reference {
        cfg.registration.reference_modality = r;
    }
    if let Some(j) = opts.jobs {
        if j == 0 {
            return Err(CliError::Config("`--jobs` must be at least 1".into()));
        }
        cfg.evaluation.jobs = j;
    }
    let ckpt = match (cfg.registration.inputs, &opts.checkpoint) {
        (RegistrationInputs::Comir, None) => {
            return Err(CliError::Config(
                "`registration.inputs` is \"comir\" but no `--checkpoint` was given; pass a trained checkpoint or set inputs = \"raw\"".into(),
            ))
        }
        (RegistrationInputs::Comir, Some(p)) => Some(Checkpoint::load(p)?),
        (RegistrationInputs::Raw, _) => None,
    };
    let mut manifest = config_manifest("register", &cfg)?;
    manifest.add_input(config)?;
    if let Some(p) = &opts.checkpoint {
        manifest.add_input(p)?;
    }
    let dir = start_run("register", &cfg)?;
    let reference = cfg.registration.reference_modality;
    let mut pairs = evaluation_pairs(&cfg, reference)?;
    let mut timing = Vec::new();
    if let Some(ckpt) = &ckpt {
        let t = Instant::now();
        pairs = encode_pairs(ckpt, &pairs, reference)?;
        timing.push(TimingEntry { stage: Stage::Infer, seconds: seconds_since(t), images: 2 * pairs.len() });
    }
    let methods = cfg.registration.methods.clone();
    let reg = register_all(&cfg, &pairs, &methods, cfg.evaluation.jobs)?;
    timing.extend(reg.timing);
    write_records(&dir, &reg.records, &methods)?;
    write_timing_csv(&dir.join("timing.csv"), &timing_report(&timing))?;
    manifest.finish(&dir)?;
    Ok(dir)
}

/// Image side and interval level recorded by the run that produced `results`.
fn results_context(results: &Path) -> Result<(usize, f64, u64)> {
    let m = Manifest::load(results)
        .map_err(|e| CliError::Config(format!("`--results`: {} is not a registration run ({e})", results.display())))?;
    let cfg: RunConfig = m
        .config
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| CliError::Config("`--results`: manifest has no config".into()))?;
    Ok((cfg.evaluation.image_size, cfg.evaluation.level, cfg.seed))
}

fn summarize_into(dir: &Path, records: &[PairRecord], side: usize, level: f64) -> Result<EvalSummary> {
    let summary = summarize(records, side, level)?;
    write_outputs(dir, records, &summary)?;
    Ok(summary)
}

/// `evaluate --results DIR`: summarizes the records of a registration run
/// into a new run directory next to it (or under `output_dir`).
pub fn evaluate(results: &Path, output_dir: Option<&Path>) -> Result<PathBuf> {
    let (side, level, seed) = results_context(results)?;
    let rec_dir = results.join(RECORDS_DIR);
    let records = read_records(&rec_dir)?;
    if records.is_empty() {
        return Err(CliError::Stage(format!("no registration records in {}", rec_dir.display())));
    }
    let mut manifest = Manifest::new("evaluate").seed("root", seed).argument("results", results.display());
    for e in fs::read_dir(&rec_dir).map_err(|e| CliError::io(&rec_dir, e))?.flatten() {
        manifest.add_input(&e.path())?;
    }
    manifest.inputs.sort_by(|a, b| a.path.cmp(&b.path));
    let root = match output_dir {
        Some(d) => d.to_path_buf(),
        None => results.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    let dir = create_run_dir(&root, "evaluate", seed)?;
    summarize_into(&dir, &records, side, level)?;
    manifest.finish(&dir)?;
    Ok(dir)
}

/// `equivariance --checkpoint K --image P --step DEG`: writes `curve.csv`.
pub fn equivariance(
    checkpoint: &Path,
    image: &Path,
    step: f64,
    modality: Option<&str>,
    output_dir: &Path,
    seed: u64,
) -> Result<PathBuf> {
    if !(step > 0.0 && step <= 360.0) {
        return Err(CliError::Config(format!("`--step` must lie in (0, 360], got {step}")));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let modality = modality.unwrap_or(&ckpt.modalities[0]).to_string();
    let img = load_any(image)?;
    let mut manifest = Manifest::new("equivariance")
        .seed("root", seed)
        .argument("modality", &modality)
        .argument("step_degrees", step)
        .argument("checkpoint_id", ckpt.id());
    manifest.add_input(checkpoint)?;
    manifest.add_input(image)?;
    let curve = checkpoint_equivariance_curve(&ckpt, &modality, &img, step)?;
    let dir = create_run_dir(output_dir, "equivariance", seed)?;
    write_text(&dir.join("curve.csv"), &curve.to_csv())?;
    info!("minimum correlation {:.4}", curve.min());
    manifest.finish(&dir)?;
    Ok(dir)
}

/// `reproduce --config C`: train, encode the evaluation pairs, register them
/// with every configured method and summarize, all in one run directory.
pub fn reproduce(config: &Path, seed_override: Option<u64>) -> Result<PathBuf> {
    let cfg = validate_config_with(config, seed_override)?;
    let mut manifest = config_manifest("reproduce", &cfg)?;
    manifest.add_input(config)?;
    let dir = start_run("reproduce", &cfg)?;
    let mut timing = Vec::new();

    let samples = load_training_samples(&cfg)?;
    let t = Instant::now();
    let ckpt = train_checkpoint(&cfg, &samples)?;
    timing.push(TimingEntry { stage: Stage::Train, seconds: seconds_since(t), images: samples.len() });
    save_training_outputs(&dir, &ckpt)?;

    let reference = cfg.registration.reference_modality;
    let mut pairs = evaluation_pairs(&cfg, reference)?;
    if cfg.registration.inputs == RegistrationInputs::Comir {
        let t = Instant::now();
        pairs = encode_pairs(&ckpt, &pairs, reference)?;
        timing.push(TimingEntry { stage: Stage::Infer, seconds: seconds_since(t), images: 2 * pairs.len() });
    }
    let methods = cfg.registration.methods.clone();
    let reg = register_all(&cfg, &pairs, &methods, cfg.evaluation.jobs)?;
    timing.extend(reg.timing);
    write_records(&dir, &reg.records, &methods)?;
    summarize_into(&dir, &reg.records, cfg.evaluation.image_size, cfg.evaluation.level)?;
    write_timing_csv(&dir.join("timing.csv"), &timing_report(&timing))?;
    manifest.arguments.insert("checkpoint_id".into(), ckpt.id().to_string());
    manifest.finish(&dir)?;
    Ok(dir)
}
