//! Run-level configuration shared by the command line and the experiments.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::CameraRanges;
use crate::dac::DacConfig;
use crate::de::DeConfig;
use crate::detector::DetectorTrainConfig;
use crate::error::{Error, Result};
use crate::scene::SceneKind;

fn short_hash(value: &serde_json::Value) -> String {
    let json = serde_json::to_vec(value).expect("json value serializes");
    Sha256::digest(&json)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Mixes a run seed with a component tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

mod tag {
    pub const TRAIN_CAMERAS: u64 = 1;
    pub const TEST_CAMERAS: u64 = 2;
    pub const DETECTOR_INIT: u64 = 3;
    pub const DETECTOR_TRAIN: u64 = 4;
    pub const DETECTOR_DATA: u64 = 5;
    pub const DAC: u64 = 6;
    pub const DE: u64 = 7;
    pub const RANDOM_MASK: u64 = 8;
    pub const SCENES: u64 = 100;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub input_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            input_size: 64,
            epochs: 30,
            lr: 0.01,
            batch_size: 8,
            label_smoothing: DetectorTrainConfig::default().label_smoothing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DacSettings {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
}

impl Default for DacSettings {
    fn default() -> Self {
        let d = DacConfig::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lr: d.lr,
            epochs_stage1: d.epochs_stage1,
            epochs_stage2: d.epochs_stage2,
            batch_size: d.batch_size,
        }
    }
}

/// Reduced training budget used inside each DE fitness evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessBudget {
    pub epochs_stage2: usize,
    /// Leading training samples used for the inner stage-2 run (`None` = all).
    pub train_subset: Option<usize>,
    /// Leading training samples on which p@0.5 is measured.
    pub eval_subset: usize,
}

impl Default for FitnessBudget {
    fn default() -> Self {
        Self {
            epochs_stage2: 2,
            train_subset: None,
            eval_subset: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeSettings {
    pub pop_size: usize,
    pub max_iters: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Attacked share of the faces; `n_f = round(face_fraction * n_m)`.
    pub face_fraction: f64,
    pub budget: FitnessBudget,
}

impl Default for DeSettings {
    fn default() -> Self {
        Self {
            pop_size: 20,
            max_iters: 10,
            crossover_rate: 0.6,
            mutation_rate: 0.6,
            face_fraction: 0.5,
            budget: FitnessBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// OBJ file; the built-in boxperson when absent.
    pub mesh: Option<String>,
    pub subdivide: usize,
    pub scene_kinds: Vec<SceneKind>,
    pub n_scenes: usize,
    pub image_size: usize,
    pub train_renders: usize,
    pub test_renders: usize,
    pub camera: CameraRanges,
    pub detector: DetectorSettings,
    pub dac: DacSettings,
    pub de: DeSettings,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mesh: None,
            subdivide: 1,
            scene_kinds: SceneKind::ALL.to_vec(),
            n_scenes: 4,
            image_size: 128,
            train_renders: 50,
            test_renders: 10,
            camera: CameraRanges::default(),
            detector: DetectorSettings::default(),
            dac: DacSettings::default(),
            de: DeSettings::default(),
            threshold: 0.5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.scene_kinds.is_empty() || self.n_scenes == 0 {
            return Err(Error::invalid("at least one scene is required"));
        }
        if self.image_size < 16 {
            return Err(Error::invalid("image size must be at least 16"));
        }
        let d = &self.detector;
        if d.input_size == 0 || self.image_size % d.input_size != 0 {
            return Err(Error::invalid(format!(
                "detector input {} must divide the image size {}",
                d.input_size, self.image_size
            )));
        }
        if self.train_renders == 0 || self.test_renders == 0 {
            return Err(Error::invalid("both splits need at least one render"));
        }
        if self.subdivide == 0 {
            return Err(Error::invalid("subdivide must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        if !(self.de.face_fraction > 0.0 && self.de.face_fraction <= 1.0) {
            return Err(Error::invalid("face fraction must lie in (0, 1]"));
        }
        if self.de.budget.eval_subset == 0 {
            return Err(Error::invalid("fitness evaluation subset must be non-empty"));
        }
        self.dac().validate()
    }

    /// Hex SHA-256 (first 16 digits) of the canonical JSON form.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash of the fields that determine the dataset.
    pub fn data_hash(&self) -> String {
        short_hash(&serde_json::json!({
            "seed": self.seed,
            "mesh": self.mesh,
            "subdivide": self.subdivide,
            "scene_kinds": self.scene_kinds,
            "n_scenes": self.n_scenes,
            "image_size": self.image_size,
            "train_renders": self.train_renders,
            "test_renders": self.test_renders,
            "camera": self.camera,
        }))
    }

    /// Hash of the fields that determine the trained detector.
    pub fn detector_hash(&self) -> String {
        short_hash(&serde_json::json!({
            "data": self.data_hash(),
            "detector": self.detector,
        }))
    }

    pub fn scene_specs(&self) -> Vec<(SceneKind, u64)> {
        (0..self.n_scenes)
            .map(|j| {
                (
                    self.scene_kinds[j % self.scene_kinds.len()],
                    derive_seed(self.seed, tag::SCENES + j as u64),
                )
            })
            .collect()
    }

    pub fn train_camera_seed(&self) -> u64 {
        derive_seed(self.seed, tag::TRAIN_CAMERAS)
    }

    pub fn test_camera_seed(&self) -> u64 {
        derive_seed(self.seed, tag::TEST_CAMERAS)
    }

    pub fn detector_init_seed(&self) -> u64 {
        derive_seed(self.seed, tag::DETECTOR_INIT)
    }

    pub fn detector_data_seed(&self) -> u64 {
        derive_seed(self.seed, tag::DETECTOR_DATA)
    }

    pub fn random_mask_seed(&self) -> u64 {
        derive_seed(self.seed, tag::RANDOM_MASK)
    }

    pub fn detector_train(&self) -> DetectorTrainConfig {
        DetectorTrainConfig {
            epochs: self.detector.epochs,
            lr: self.detector.lr,
            batch_size: self.detector.batch_size,
            label_smoothing: self.detector.label_smoothing,
            seed: derive_seed(self.seed, tag::DETECTOR_TRAIN),
        }
    }

    pub fn dac(&self) -> DacConfig {
        let d = &self.dac;
        DacConfig {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lr: d.lr,
            epochs_stage1: d.epochs_stage1,
            epochs_stage2: d.epochs_stage2,
            batch_size: d.batch_size,
            seed: derive_seed(self.seed, tag::DAC),
        }
    }

    pub fn n_selected(&self, n_faces: usize) -> usize {
        ((self.de.face_fraction * n_faces as f64).round() as usize).clamp(1, n_faces)
    }

    pub fn de(&self, n_faces: usize) -> DeConfig {
        DeConfig {
            pop_size: self.de.pop_size,
            max_iters: self.de.max_iters,
            crossover_rate: self.de.crossover_rate,
            mutation_rate: self.de.mutation_rate,
            n_selected: self.n_selected(n_faces),
            seed: derive_seed(self.seed, tag::DE),
        }
    }
}
