//! `camoforge`: dataset generation, surrogate detector training, attacks,
//! sweeps and evaluation. Stages talk to each other only through files in
//! the output directory.

mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use camoforge_core::config::RunConfig;
use camoforge_core::dataset::Manifest;
use camoforge_core::de::Individual;
use camoforge_core::detector::{DetectorNet, DetectorTrainReport};
use camoforge_core::metrics::EvalReport;
use camoforge_core::pipeline::{
    build_manifest, ledger_row, load_mesh, sweep, sweep_csv, train_surrogate, AttackMode, AttackOutcome, Attacker,
    MaskSpec, Scenario, SweepAxis, FACE_FRACTIONS, LAMBDA1_VALUES,
};
use camoforge_core::render::compose;
use camoforge_core::scene::SceneKind;
use camoforge_core::texture::{SceneTextures, TextureMap};
use camoforge_core::{Error, Exec};

use files::{write_atomic, write_json, Meta};

#[derive(Parser, Debug)]
#[command(name = "camoforge", version, about = "Adversarial camouflage textures against a surrogate detector")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Redo a stage even when its outputs already match the config.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenes and camera samples for both splits.
    GenData(DataArgs),
    /// Train the surrogate objectness detector.
    TrainDetector(DetectorArgs),
    /// Train adversarial textures and evaluate them on the test split.
    Attack(AttackArgs),
    /// Run the attack at several face budgets or λ₁ values.
    Sweep(SweepArgs),
    /// Evaluate a texture file on the test split.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Renders per scene in the training split.
    #[arg(long)]
    renders: Option<usize>,
    #[arg(long)]
    test_renders: Option<usize>,
    /// Comma-separated scene kinds (winter, forest, desert).
    #[arg(long, value_delimiter = ',')]
    scenes: Option<Vec<SceneKind>>,
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// OBJ mesh; the built-in boxperson when omitted.
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    subdivide: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct DetectorArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    detector_lr: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct DacArgs {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    /// Attacked share of the faces for de-dac, adaptive and dac-masked.
    #[arg(long)]
    face_fraction: Option<f64>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Stage1Only,
    DacFull,
    DacMasked,
    DeDac,
    Adaptive,
}

impl From<ModeArg> for AttackMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stage1Only => AttackMode::Stage1Only,
            ModeArg::DacFull => AttackMode::DacFull,
            ModeArg::DacMasked => AttackMode::DacMasked,
            ModeArg::DeDac => AttackMode::DeDac,
            ModeArg::Adaptive => AttackMode::Adaptive,
        }
    }
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Newline-separated 1-based face indices (dac-masked, adaptive).
    #[arg(long)]
    faces: Option<PathBuf>,
    #[command(flatten)]
    dac: DacArgs,
    /// Label for the results ledger; defaults to the mode name.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Faces,
    Lambda1,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Axis values; the standard grid when omitted.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[command(flatten)]
    dac: DacArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Texture JSON (array of [r,g,b]); the raw clothing texture when omitted.
    #[arg(long)]
    texture: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Missing(anyhow::Error),
    Numeric(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Missing(e) | Failure::Numeric(e) | Failure::Other(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Missing(_)) => Failure::Missing(e),
            Some(Error::NonFinite(_)) => Failure::Numeric(e),
            Some(Error::Invalid(_) | Error::Parse { .. } | Error::Json(_)) => Failure::Config(e),
            _ => Failure::Other(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    let exec = match g.jobs {
        Some(0) => return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1"))),
        Some(1) => Exec::Sequential,
        Some(n) => {
            set_threads(n);
            Exec::default()
        }
        None => Exec::default(),
    };
    match &cli.command {
        Command::GenData(a) => {
            apply_data(&mut cfg, a);
            validate(&cfg)?;
            gen_data(&cfg, g)
        }
        Command::TrainDetector(a) => {
            apply_detector(&mut cfg, a);
            validate(&cfg)?;
            train(&cfg, g, exec)
        }
        Command::Attack(a) => {
            apply_dac(&mut cfg, &a.dac);
            validate(&cfg)?;
            attack(&cfg, g, a, exec)
        }
        Command::Sweep(a) => {
            apply_dac(&mut cfg, &a.dac);
            validate(&cfg)?;
            run_sweep(&cfg, g, a, exec)
        }
        Command::Eval(a) => {
            validate(&cfg)?;
            eval(&cfg, g, a, exec)
        }
    }
}

#[cfg(feature = "rayon")]
fn set_threads(n: usize) {
    // a pool can only be installed once per process; later calls keep the first
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

#[cfg(not(feature = "rayon"))]
fn set_threads(_n: usize) {}

fn load_config(g: &GlobalArgs) -> Outcome<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(Failure::Config)?;
            serde_json::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(Failure::Config)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Outcome<()> {
    cfg.validate()
        .map_err(|e| Failure::Config(anyhow::Error::from(e).context("invalid configuration")))
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(v) = a.renders {
        cfg.train_renders = v;
    }
    if let Some(v) = a.test_renders {
        cfg.test_renders = v;
    }
    if let Some(v) = &a.scenes {
        cfg.scene_kinds = v.clone();
        if a.n_scenes.is_none() {
            cfg.n_scenes = v.len();
        }
    }
    if let Some(v) = a.n_scenes {
        cfg.n_scenes = v;
    }
    if let Some(v) = a.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = &a.mesh {
        cfg.mesh = Some(v.clone());
    }
    if let Some(v) = a.subdivide {
        cfg.subdivide = v;
    }
}

fn apply_detector(cfg: &mut RunConfig, a: &DetectorArgs) {
    if let Some(v) = a.epochs {
        cfg.detector.epochs = v;
    }
    if let Some(v) = a.detector_lr {
        cfg.detector.lr = v;
    }
}

fn apply_dac(cfg: &mut RunConfig, a: &DacArgs) {
    let d = &mut cfg.dac;
    if let Some(v) = a.lambda1 {
        d.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        d.lambda2 = v;
    }
    if let Some(v) = a.lr {
        d.lr = v;
    }
    if let Some(v) = a.epochs_stage1 {
        d.epochs_stage1 = v;
    }
    if let Some(v) = a.epochs_stage2 {
        d.epochs_stage2 = v;
    }
    if let Some(v) = a.face_fraction {
        cfg.de.face_fraction = v;
    }
    if let Some(v) = a.pop_size {
        cfg.de.pop_size = v;
    }
    if let Some(v) = a.max_iters {
        cfg.de.max_iters = v;
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

fn detector_path(out: &Path) -> PathBuf {
    out.join("detector.bin")
}

fn detector_report_path(out: &Path) -> PathBuf {
    out.join("detector_report.json")
}

fn ledger_path(out: &Path) -> PathBuf {
    out.join("results.csv")
}

fn gen_data(cfg: &RunConfig, g: &GlobalArgs) -> Outcome<()> {
    let out = &g.out;
    let path = manifest_path(out);
    if !g.force {
        if let Ok(m) = read_manifest(&path) {
            if m.config_hash == cfg.data_hash() {
                println!("gen-data: {} is up to date", path.display());
                return Ok(());
            }
        }
    }
    let manifest = build_manifest(cfg)?;
    let (train, _) = manifest.materialize()?;
    let scene_dir = out.join("scenes");
    for (record, scene) in manifest.scenes.iter().zip(train.scenes.iter()) {
        let mut bytes = Vec::new();
        scene.image.write_ppm(&mut bytes)?;
        write_atomic(&scene_dir.join(&record.file), &bytes)?;
    }
    write_json(&out.join("config.json"), cfg)?;
    write_json(&path, &manifest)?;
    println!(
        "gen-data: {} train + {} test samples over {} scenes -> {}",
        manifest.train.len(),
        manifest.test.len(),
        manifest.scenes.len(),
        out.display()
    );
    Ok(())
}

fn read_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn missing(what: String) -> Failure {
    Failure::Missing(anyhow::Error::from(Error::Missing(what)))
}

/// The scenario for `cfg`, provided gen-data ran with the same data settings.
fn load_scenario(cfg: &RunConfig, out: &Path, exec: Exec) -> Outcome<Scenario> {
    let path = manifest_path(out);
    let manifest = read_manifest(&path).map_err(|_| missing(format!("{} (run gen-data first)", path.display())))?;
    if manifest.config_hash != cfg.data_hash() {
        return Err(missing(format!(
            "{} was generated for data hash {}, this config needs {} (rerun gen-data)",
            path.display(),
            manifest.config_hash,
            cfg.data_hash()
        )));
    }
    Ok(Scenario::from_manifest(load_mesh(cfg)?, &manifest, exec)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectorReportFile {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: DetectorTrainReport,
    warning: Option<String>,
}

/// Accuracy below which the detector report carries a warning.
const MIN_TRAIN_ACCURACY: f64 = 0.95;

fn train(cfg: &RunConfig, g: &GlobalArgs, exec: Exec) -> Outcome<()> {
    let out = &g.out;
    let report_path = detector_report_path(out);
    if !g.force && detector_path(out).exists() {
        if let Ok(r) = read_json::<DetectorReportFile>(&report_path) {
            if r.config_hash == cfg.detector_hash() {
                println!("train-detector: {} is up to date", detector_path(out).display());
                return Ok(());
            }
        }
    }
    let scenario = load_scenario(cfg, out, exec)?;
    let (net, report) = train_surrogate(cfg, &scenario, exec)?;
    let warning = (report.train_accuracy < MIN_TRAIN_ACCURACY).then(|| {
        format!(
            "train accuracy {:.3} is below {MIN_TRAIN_ACCURACY}; attack metrics against this detector are not meaningful",
            report.train_accuracy
        )
    });
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let mut bytes = Vec::new();
    net.write_weights(&mut bytes)?;
    write_atomic(&detector_path(out), &bytes)?;
    println!(
        "train-detector: accuracy {:.3} on {} images",
        report.train_accuracy, report.n_samples
    );
    write_json(
        &report_path,
        &DetectorReportFile {
            config_hash: cfg.detector_hash(),
            seed: cfg.seed,
            report,
            warning,
        },
    )?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn load_detector(cfg: &RunConfig, out: &Path) -> Outcome<DetectorNet> {
    let report: DetectorReportFile = read_json(&detector_report_path(out))
        .map_err(|_| missing(format!("{} (run train-detector first)", detector_report_path(out).display())))?;
    if report.config_hash != cfg.detector_hash() {
        return Err(missing(format!(
            "detector was trained for hash {}, this config needs {} (rerun train-detector)",
            report.config_hash,
            cfg.detector_hash()
        )));
    }
    let bytes = std::fs::read(detector_path(out))
        .map_err(|_| missing(format!("{} (run train-detector first)", detector_path(out).display())))?;
    Ok(DetectorNet::read_weights(bytes.as_slice())?)
}

fn read_face_file(path: &Path) -> Outcome<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| missing(format!("face index file {}", path.display())))?;
    Ok(Individual::parse_index_list(&text)?)
}

fn attack(cfg: &RunConfig, g: &GlobalArgs, a: &AttackArgs, exec: Exec) -> Outcome<()> {
    let mode = AttackMode::from(a.mode);
    let dir = g.out.join("attack").join(mode.to_string());
    let eval_path = dir.join("eval.json");
    if !g.force {
        if let Ok(m) = read_json::<Meta<EvalReport>>(&eval_path) {
            if m.config_hash == cfg.hash() {
                println!("attack {mode}: {} is up to date", eval_path.display());
                return Ok(());
            }
        }
    }
    let spec = match (&a.faces, mode) {
        (Some(path), AttackMode::DacMasked | AttackMode::Adaptive) => MaskSpec::Indices(read_face_file(path)?),
        (Some(_), _) => {
            return Err(Failure::Config(anyhow::anyhow!("--faces only applies to dac-masked and adaptive")));
        }
        (None, AttackMode::DacMasked) => MaskSpec::RandomFraction {
            fraction: cfg.de.face_fraction,
            seed: cfg.random_mask_seed(),
        },
        (None, _) => MaskSpec::Search,
    };
    let scenario = load_scenario(cfg, &g.out, exec)?;
    let net = load_detector(cfg, &g.out)?;
    let attacker = Attacker {
        cfg,
        scenario: &scenario,
        net: &net,
        exec,
    };
    let outcome = attacker.run(mode, &spec)?;
    write_attack(cfg, &dir, &scenario, &outcome)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| mode.to_string());
    let n_selected = outcome.mask.as_ref().map_or(0, |m| m.count());
    append_ledger(&g.out, &ledger_row(&run_id, cfg, &mode.to_string(), n_selected, &outcome.eval))?;
    write_json(&eval_path, &Meta::new(cfg, &outcome.eval))?;
    let e = &outcome.eval;
    println!(
        "attack {mode}: asr {:.3}, p@0.5 (surrogate) {:.3}, mse {:.1} on {} test images",
        e.asr, e.p_at_05, e.mse_naturalness, e.n_images
    );
    Ok(())
}

fn write_texture(cfg: &RunConfig, path: &Path, texture: &TextureMap) -> anyhow::Result<()> {
    write_atomic(path, texture.to_json().as_bytes())?;
    write_json(&files::meta_path(path), &Meta::new(cfg, &()))?;
    Ok(())
}

fn write_scene_textures(cfg: &RunConfig, dir: &Path, stem: &str, t: &SceneTextures) -> anyhow::Result<()> {
    match t {
        SceneTextures::Universal(tex) => write_texture(cfg, &dir.join(format!("{stem}.json")), tex),
        SceneTextures::PerScene(map) => {
            for (id, tex) in map {
                write_texture(cfg, &dir.join(format!("{stem}_scene{id:03}.json")), tex)?;
            }
            Ok(())
        }
    }
}

fn write_attack(cfg: &RunConfig, dir: &Path, scenario: &Scenario, o: &AttackOutcome) -> anyhow::Result<()> {
    write_scene_textures(cfg, dir, "texture", &o.adversarial)?;
    write_scene_textures(cfg, dir, "global", &o.globals)?;
    if let Some(local) = &o.local {
        write_texture(cfg, &dir.join("local.json"), local)?;
    }
    if let Some(mask) = &o.mask {
        let text: String = mask.indices().iter().map(|i| format!("{i}\n")).collect();
        write_atomic(&dir.join("faces.txt"), text.as_bytes())?;
    }
    if let Some(search) = &o.search {
        write_json(&dir.join("search.json"), &Meta::new(cfg, search))?;
        write_atomic(&dir.join("search_trace.csv"), with_hash_comment(cfg, &search.trace_csv()).as_bytes())?;
        write_atomic(&dir.join("best_faces.txt"), search.best.to_index_list().as_bytes())?;
    }
    for (i, r) in o.stage1.iter().enumerate() {
        write_atomic(&dir.join(format!("stage1_{i}.csv")), with_hash_comment(cfg, &r.to_csv()).as_bytes())?;
    }
    if let Some(r) = &o.stage2 {
        write_atomic(&dir.join("stage2.csv"), with_hash_comment(cfg, &r.to_csv()).as_bytes())?;
    }
    // first test sample, before (raw clothing) and after (adversarial texture)
    let test = &scenario.test;
    let scene = test.dataset.scene(test.scene_id(0))?;
    let before = compose(&test.rasters[0].shade(&scenario.raw)?, scene)?;
    let after = compose(&test.rasters[0].shade(o.adversarial.for_scene(scene.scene_id)?)?, scene)?;
    for (name, img) in [("before.ppm", before), ("after.ppm", after)] {
        let mut bytes = Vec::new();
        img.write_ppm(&mut bytes)?;
        write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

fn with_hash_comment(cfg: &RunConfig, csv: &str) -> String {
    format!("# config_hash={} seed={}\n{csv}", cfg.hash(), cfg.seed)
}

fn append_ledger(out: &Path, row: &str) -> anyhow::Result<()> {
    let path = ledger_path(out);
    let mut text = std::fs::read_to_string(&path).unwrap_or_default();
    if text.is_empty() {
        text.push_str(camoforge_core::pipeline::LEDGER_HEADER);
    }
    text.push_str(row);
    write_atomic(&path, text.as_bytes())
}

fn run_sweep(cfg: &RunConfig, g: &GlobalArgs, a: &SweepArgs, exec: Exec) -> Outcome<()> {
    let axis = match a.axis {
        AxisArg::Faces => SweepAxis::Faces,
        AxisArg::Lambda1 => SweepAxis::Lambda1,
    };
    let values = a.values.clone().unwrap_or_else(|| match axis {
        SweepAxis::Faces => FACE_FRACTIONS.to_vec(),
        SweepAxis::Lambda1 => LAMBDA1_VALUES.to_vec(),
    });
    let name = match axis {
        SweepAxis::Faces => "faces",
        SweepAxis::Lambda1 => "lambda1",
    };
    let path = g.out.join(format!("sweep_{name}.csv"));
    let header = format!("# config_hash={} seed={} values={values:?}\n", cfg.hash(), cfg.seed);
    if !g.force {
        if let Ok(text) = std::fs::read_to_string(&path) {
            if text.starts_with(&header) {
                println!("sweep {name}: {} is up to date", path.display());
                return Ok(());
            }
        }
    }
    let scenario = load_scenario(cfg, &g.out, exec)?;
    let net = load_detector(cfg, &g.out)?;
    let attacker = Attacker {
        cfg,
        scenario: &scenario,
        net: &net,
        exec,
    };
    let points = sweep(&attacker, axis, &values)?;
    let csv = sweep_csv(axis, &points);
    write_atomic(&path, format!("{header}{csv}").as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn eval(cfg: &RunConfig, g: &GlobalArgs, a: &EvalArgs, exec: Exec) -> Outcome<()> {
    let scenario = load_scenario(cfg, &g.out, exec)?;
    let net = load_detector(cfg, &g.out)?;
    let texture = match &a.texture {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|_| missing(format!("texture {}", path.display())))?;
            let t = TextureMap::from_json(&text)?;
            t.check_len(scenario.n_faces())?;
            t
        }
        None => scenario.raw.clone(),
    };
    let attacker = Attacker {
        cfg,
        scenario: &scenario,
        net: &net,
        exec,
    };
    let report = attacker.evaluate(&SceneTextures::Universal(texture))?;
    let run_id = a.run_id.clone().unwrap_or_else(|| "eval".into());
    let stem = a
        .texture
        .as_ref()
        .and_then(|p| p.file_stem())
        .map_or("raw".to_string(), |s| s.to_string_lossy().into_owned());
    write_json(&g.out.join("eval").join(format!("{stem}.json")), &Meta::new(cfg, &report))?;
    append_ledger(&g.out, &ledger_row(&run_id, cfg, "eval", 0, &report))?;
    println!(
        "eval: asr {:.3}, p@0.5 (surrogate) {:.3}, mse {:.1}",
        report.asr, report.p_at_05, report.mse_naturalness
    );
    Ok(())
}
