//! End-to-end experiment wiring: scenario construction, surrogate detector
//! training data, the DE fitness, attack modes, and the two sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dac::{train_adaptive_globals, train_local, train_stage1, DacConfig, PreparedSet, TrainReport};
use crate::dataset::{build_dataset, generate_scenes, Dataset, Manifest, SceneRecord, Split};
use crate::de::{de_search, Fitness, SearchReport};
use crate::detector::{init_detector, train_detector, DetectorNet, DetectorTrainReport, Label, LabeledImage};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{compose_texture, make_face_mask, FaceMask};
use crate::mesh::{load_obj, Mesh};
use crate::metrics::{evaluate, p_at_05_for, EvalReport};
use crate::par::Exec;
use crate::render::compose;
use crate::scene::SceneImage;
use crate::texture::{SceneTextures, TextureMap};

pub const FACE_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const LAMBDA1_VALUES: [f64; 5] = [0.0001, 0.0005, 0.01, 0.02, 0.03];

/// The configured mesh, subdivided as requested.
pub fn load_mesh(cfg: &RunConfig) -> Result<Mesh> {
    let base = match &cfg.mesh {
        Some(path) => load_obj(path)?,
        None => Mesh::boxperson(),
    };
    base.subdivided(cfg.subdivide)
}

pub fn scene_file(scene_id: usize) -> String {
    format!("scene_{scene_id:03}.ppm")
}

/// Scenes and camera samples for both splits.
pub fn build_manifest(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let size = (cfg.image_size, cfg.image_size);
    let specs = cfg.scene_specs();
    let scenes = Arc::new(generate_scenes(&specs, size)?);
    let train = build_dataset(Arc::clone(&scenes), cfg.train_renders, cfg.train_camera_seed(), &cfg.camera, Split::Train)?;
    let test = build_dataset(scenes, cfg.test_renders, cfg.test_camera_seed(), &cfg.camera, Split::Test)?;
    Ok(Manifest {
        config_hash: cfg.data_hash(),
        seed: cfg.seed,
        image_size: size,
        scenes: specs
            .iter()
            .enumerate()
            .map(|(id, &(kind, seed))| SceneRecord {
                scene_id: id,
                kind,
                seed,
                file: scene_file(id),
            })
            .collect(),
        train: train.samples,
        test: test.samples,
    })
}

/// Mesh plus both splits with their rasters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: Mesh,
    pub train: PreparedSet,
    pub test: PreparedSet,
    pub raw: TextureMap,
}

impl Scenario {
    pub fn from_manifest(mesh: Mesh, manifest: &Manifest, exec: Exec) -> Result<Self> {
        let (train, test) = manifest.materialize()?;
        Self::from_datasets(mesh, train, test, exec)
    }

    pub fn from_datasets(mesh: Mesh, train: Dataset, test: Dataset, exec: Exec) -> Result<Self> {
        Ok(Self {
            raw: TextureMap::raw(&mesh),
            train: PreparedSet::new(&mesh, train, exec)?,
            test: PreparedSet::new(&mesh, test, exec)?,
            mesh,
        })
    }

    pub fn build(cfg: &RunConfig, exec: Exec) -> Result<Self> {
        Self::from_manifest(load_mesh(cfg)?, &build_manifest(cfg)?, exec)
    }

    pub fn n_faces(&self) -> usize {
        self.mesh.n_faces()
    }
}

/// Circular shift plus an optional horizontal flip, so the detector cannot
/// memorize scene pixels.
fn augment_scene(scene: &SceneImage, rng: &mut ChaCha8Rng) -> SceneImage {
    let img = &scene.image;
    let (h, w) = (img.height, img.width);
    let (dy, dx) = (rng.gen_range(0..h), rng.gen_range(0..w));
    let flip = rng.gen_bool(0.5);
    let mut out = Image::zeros(h, w, img.channels);
    for y in 0..h {
        for x in 0..w {
            let sx = if flip { w - 1 - x } else { x };
            let src = img.index((y + dy) % h, (sx + dx) % w, 0);
            let dst = out.index(y, x, 0);
            out.data[dst..dst + img.channels].copy_from_slice(&img.data[src..src + img.channels]);
        }
    }
    SceneImage {
        image: out,
        ..scene.clone()
    }
}

/// Textures for object-present examples, cycling through three families:
/// the raw clothing colors, one uniform random color, and per-face noise.
fn positive_texture(k: usize, raw: &TextureMap, rng: &mut ChaCha8Rng) -> TextureMap {
    let n = raw.len();
    match k % 3 {
        0 => raw.clone(),
        1 => TextureMap::uniform(n, [rng.gen(), rng.gen(), rng.gen()]),
        _ => TextureMap::random(n, rng),
    }
}

/// One labeled, detector-resolution image per training sample. Labels
/// alternate over each scene's own samples, so every scene contributes both
/// classes equally and the label cannot be read off the background.
pub fn detector_data(set: &PreparedSet, raw: &TextureMap, seed: u64, input_size: usize) -> Result<Vec<LabeledImage>> {
    if set.len() < 2 {
        return Err(Error::invalid("detector data needs at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = vec![0usize; set.dataset.scenes.len()];
    let mut n_pos = 0;
    let mut out = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let id = set.scene_id(i);
        let k = seen[id];
        seen[id] += 1;
        let scene = augment_scene(set.dataset.scene(id)?, &mut rng);
        let (image, label) = if k % 2 == 0 {
            n_pos += 1;
            let texture = positive_texture(n_pos - 1, raw, &mut rng);
            (compose(&set.rasters[i].shade(&texture)?, &scene)?, Label::ObjectPresent)
        } else {
            (scene.image, Label::BackgroundOnly)
        };
        let factor = image.height / input_size;
        if factor == 0 || image.height % input_size != 0 {
            return Err(Error::shape(input_size, image.height));
        }
        out.push(LabeledImage {
            image: image.downsample(factor)?,
            label,
        });
    }
    Ok(out)
}

/// Trains the surrogate detector on the scenario's training split.
pub fn train_surrogate(cfg: &RunConfig, scenario: &Scenario, exec: Exec) -> Result<(DetectorNet, DetectorTrainReport)> {
    let data = detector_data(&scenario.train, &scenario.raw, cfg.detector_data_seed(), cfg.detector.input_size)?;
    let net = init_detector(cfg.detector_init_seed(), cfg.detector.input_size);
    train_detector(&net, &data, &cfg.detector_train(), exec)
}

/// Sorted 1-based indices of the first `k` entries of a seeded permutation.
/// Subsets drawn with one seed are nested as `k` grows.
pub fn random_face_subset(n_faces: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n_faces {
        return Err(Error::invalid(format!("cannot pick {k} of {n_faces} faces")));
    }
    let mut perm: Vec<usize> = (1..=n_faces).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pick = perm[..k].to_vec();
    pick.sort_unstable();
    Ok(pick)
}

/// DE fitness: stage 2 under a reduced budget on the candidate mask, then
/// p@0.5 (surrogate) of the result on a fixed slice of the training split.
pub struct DacFitness<'a> {
    pub train: PreparedSet,
    pub eval: PreparedSet,
    pub globals: &'a SceneTextures,
    pub net: &'a DetectorNet,
    pub cfg: DacConfig,
    pub threshold: f64,
}

impl<'a> DacFitness<'a> {
    pub fn new(run: &RunConfig, train: &PreparedSet, globals: &'a SceneTextures, net: &'a DetectorNet) -> Self {
        let budget = run.de.budget;
        let mut cfg = run.dac();
        cfg.epochs_stage2 = budget.epochs_stage2;
        Self {
            train: train.truncated(budget.train_subset.unwrap_or(train.len())),
            eval: train.truncated(budget.eval_subset),
            globals,
            net,
            cfg,
            threshold: run.threshold,
        }
    }

    /// Adversarial textures produced by a reduced-budget run on `indices`.
    pub fn textures(&self, indices: &[usize]) -> Result<SceneTextures> {
        let mask = make_face_mask(indices, self.train.n_faces)?;
        let (local, _) = train_local(&self.train, self.globals, &mask, self.net, &self.cfg)?;
        self.globals.map(|g| compose_texture(g, &local, &mask))
    }
}

impl Fitness for DacFitness<'_> {
    fn evaluate(&self, indices: &[usize]) -> Result<f64> {
        let textures = self.textures(indices)?;
        // already inside a parallel map over candidates
        p_at_05_for(&self.eval, self.net, &textures, self.threshold, Exec::Sequential)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Stage1Only,
    DacFull,
    DacMasked,
    DeDac,
    Adaptive,
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMode::Stage1Only => "stage1-only",
            AttackMode::DacFull => "dac-full",
            AttackMode::DacMasked => "dac-masked",
            AttackMode::DeDac => "de-dac",
            AttackMode::Adaptive => "adaptive",
        })
    }
}

/// How the attacked faces are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Full,
    /// Explicit 1-based indices.
    Indices(Vec<usize>),
    /// `round(fraction * n_m)` faces from a seeded permutation.
    RandomFraction { fraction: f64, seed: u64 },
    /// Differential-evolution search at the configured face fraction.
    Search,
}

/// Everything an attack run produces.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub mode: AttackMode,
    pub mask: Option<FaceMask>,
    pub globals: SceneTextures,
    pub local: Option<TextureMap>,
    pub adversarial: SceneTextures,
    pub eval: EvalReport,
    pub search: Option<SearchReport>,
    pub stage1: Vec<TrainReport>,
    pub stage2: Option<TrainReport>,
}

/// Runs attacks against one scenario and detector.
pub struct Attacker<'a> {
    pub cfg: &'a RunConfig,
    pub scenario: &'a Scenario,
    pub net: &'a DetectorNet,
    pub exec: Exec,
}

impl Attacker<'_> {
    pub fn stage1_universal(&self) -> Result<(TextureMap, TrainReport)> {
        train_stage1(&self.scenario.train, &self.cfg.dac())
    }

    pub fn stage1_per_scene(&self) -> Result<(BTreeMap<usize, TextureMap>, Vec<TrainReport>)> {
        train_adaptive_globals(&self.scenario.train, &self.cfg.dac())
    }

    pub fn evaluate(&self, adversarial: &SceneTextures) -> Result<EvalReport> {
        evaluate(
            &self.scenario.test,
            self.net,
            &self.scenario.raw,
            adversarial,
            self.cfg.threshold,
            self.exec,
        )
    }

    /// Resolves a mask spec, running the DE search when asked.
    pub fn resolve_mask(&self, spec: &MaskSpec, globals: &SceneTextures) -> Result<(FaceMask, Option<SearchReport>)> {
        let n = self.scenario.n_faces();
        match spec {
            MaskSpec::Full => Ok((FaceMask::full(n)?, None)),
            MaskSpec::Indices(idx) => Ok((make_face_mask(idx, n)?, None)),
            MaskSpec::RandomFraction { fraction, seed } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::invalid(format!("face fraction {fraction} outside (0, 1]")));
                }
                let k = ((fraction * n as f64).round() as usize).clamp(1, n);
                Ok((make_face_mask(&random_face_subset(n, k, *seed)?, n)?, None))
            }
            MaskSpec::Search => {
                let fitness = DacFitness::new(self.cfg, &self.scenario.train, globals, self.net);
                let (best, report) = de_search(&self.cfg.de(n), n, &fitness, self.exec)?;
                Ok((make_face_mask(&best.indices, n)?, Some(report)))
            }
        }
    }

    /// Stage 2 on top of already trained global textures.
    pub fn attack_with_globals(
        &self,
        mode: AttackMode,
        globals: SceneTextures,
        stage1: Vec<TrainReport>,
        spec: &MaskSpec,
        dac: &DacConfig,
    ) -> Result<AttackOutcome> {
        let (mask, search) = self.resolve_mask(spec, &globals)?;
        let (local, report) = train_local(&self.scenario.train, &globals, &mask, self.net, dac)?;
        let adversarial = globals.map(|g| compose_texture(g, &local, &mask))?;
        Ok(AttackOutcome {
            mode,
            eval: self.evaluate(&adversarial)?,
            mask: Some(mask),
            globals,
            local: Some(local),
            adversarial,
            search,
            stage1,
            stage2: Some(report),
        })
    }

    /// `spec` is ignored by the modes that fix their own mask
    /// (stage1-only, dac-full, de-dac).
    pub fn run(&self, mode: AttackMode, spec: &MaskSpec) -> Result<AttackOutcome> {
        let dac = self.cfg.dac();
        match mode {
            AttackMode::Stage1Only => {
                let (global, r) = self.stage1_universal()?;
                let globals = SceneTextures::Universal(global);
                Ok(AttackOutcome {
                    mode,
                    eval: self.evaluate(&globals)?,
                    mask: None,
                    adversarial: globals.clone(),
                    globals,
                    local: None,
                    search: None,
                    stage1: vec![r],
                    stage2: None,
                })
            }
            AttackMode::DacFull | AttackMode::DacMasked | AttackMode::DeDac => {
                let spec = match mode {
                    AttackMode::DacFull => &MaskSpec::Full,
                    AttackMode::DeDac => &MaskSpec::Search,
                    _ => spec,
                };
                let (global, r) = self.stage1_universal()?;
                self.attack_with_globals(mode, SceneTextures::Universal(global), vec![r], spec, &dac)
            }
            AttackMode::Adaptive => {
                let (globals, reports) = self.stage1_per_scene()?;
                self.attack_with_globals(mode, SceneTextures::PerScene(globals), reports, spec, &dac)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Faces,
    Lambda1,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faces" => Ok(SweepAxis::Faces),
            "lambda1" => Ok(SweepAxis::Lambda1),
            _ => Err(Error::invalid(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub n_selected: usize,
    pub eval: EvalReport,
}

pub fn sweep_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let name = match axis {
        SweepAxis::Faces => "face_fraction",
        SweepAxis::Lambda1 => "lambda1",
    };
    let mut out = format!("{name},n_selected,asr,p_at_05_surrogate,mse_naturalness,mse_unit,mean_objectness\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{:.9e},{:.9}\n",
            p.value, p.n_selected, p.eval.asr, p.eval.p_at_05, p.eval.mse_naturalness, p.eval.mse_unit, p.eval.mean_objectness
        ));
    }
    out
}

/// One stage-1 run shared by every point. The faces axis uses nested random
/// subsets (prefixes of one seeded permutation); the λ₁ axis uses the full mask.
pub fn sweep(attacker: &Attacker, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let (global, r) = attacker.stage1_universal()?;
    let globals = SceneTextures::Universal(global);
    let mask_seed = attacker.cfg.random_mask_seed();
    values
        .iter()
        .map(|&value| {
            let mut dac = attacker.cfg.dac();
            let spec = match axis {
                SweepAxis::Faces => MaskSpec::RandomFraction {
                    fraction: value,
                    seed: mask_seed,
                },
                SweepAxis::Lambda1 => {
                    if !(value >= 0.0) {
                        return Err(Error::invalid(format!("lambda1 {value} must be non-negative")));
                    }
                    dac.lambda1 = value;
                    MaskSpec::Full
                }
            };
            let mode = match axis {
                SweepAxis::Faces => AttackMode::DacMasked,
                SweepAxis::Lambda1 => AttackMode::DacFull,
            };
            let out = attacker.attack_with_globals(mode, globals.clone(), vec![r.clone()], &spec, &dac)?;
            Ok(SweepPoint {
                value,
                n_selected: out.mask.as_ref().map_or(0, FaceMask::count),
                eval: out.eval,
            })
        })
        .collect()
}

/// Header of the results ledger.
pub const LEDGER_HEADER: &str = "run_id,config_hash,seed,mode,n_selected,asr,p_at_05_surrogate,clean_p_at_05_surrogate,mse_naturalness,mse_unit,mean_objectness,n_images,threshold\n";

/// One results-ledger row. No wall-clock fields, so equal configs give equal rows.
pub fn ledger_row(run_id: &str, cfg: &RunConfig, mode: &str, n_selected: usize, e: &EvalReport) -> String {
    format!(
        "{run_id},{},{},{mode},{n_selected},{:.9},{:.9},{:.9},{:.9},{:.9e},{:.9},{},{}\n",
        cfg.hash(),
        cfg.seed,
        e.asr,
        e.p_at_05,
        e.clean_p_at_05,
        e.mse_naturalness,
        e.mse_unit,
        e.mean_objectness,
        e.n_images,
        e.threshold
    )
}
