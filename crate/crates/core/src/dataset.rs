use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, CameraRanges};
use crate::error::{Error, Result};
use crate::scene::{generate_scene, SceneImage, SceneKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One training/test example: which scene to compose onto, and from where to look.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scene_id: usize,
    pub camera: CameraParams,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    /// Shared between the splits built from the same scene list.
    pub scenes: Arc<Vec<SceneImage>>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scene(&self, id: usize) -> Result<&SceneImage> {
        self.scenes
            .get(id)
            .ok_or_else(|| Error::invalid(format!("scene id {id} not in dataset")))
    }

    /// First `n` samples (or all of them).
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            split: self.split,
            scenes: Arc::clone(&self.scenes),
            samples: self.samples.iter().take(n).copied().collect(),
        }
    }

    pub fn only_scene(&self, scene_id: usize) -> Dataset {
        Dataset {
            split: self.split,
            scenes: Arc::clone(&self.scenes),
            samples: self
                .samples
                .iter()
                .filter(|s| s.scene_id == scene_id)
                .copied()
                .collect(),
        }
    }

    /// Scene ids that occur in at least one sample, ascending.
    pub fn scene_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.scene_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Pairs every scene with `n_renders` freshly sampled cameras
/// (`n_renders * scenes.len()` samples, render-major order).
pub fn build_dataset(
    scenes: Arc<Vec<SceneImage>>,
    n_renders: usize,
    seed: u64,
    ranges: &CameraRanges,
    split: Split,
) -> Result<Dataset> {
    if scenes.is_empty() {
        return Err(Error::invalid("dataset needs at least one scene"));
    }
    if n_renders == 0 {
        return Err(Error::invalid("n_renders must be >= 1"));
    }
    ranges.validate()?;
    for (i, s) in scenes.iter().enumerate() {
        if s.scene_id != i {
            return Err(Error::invalid(format!(
                "scene at position {i} carries id {}",
                s.scene_id
            )));
        }
    }
    let size = (scenes[0].image.height, scenes[0].image.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_renders * scenes.len());
    for _ in 0..n_renders {
        for scene in scenes.iter() {
            samples.push(Sample {
                scene_id: scene.scene_id,
                camera: ranges.sample(&mut rng, size),
            });
        }
    }
    Ok(Dataset {
        split,
        scenes,
        samples,
    })
}

/// Procedural scenes for `(kind, seed)` pairs, ids assigned by position.
pub fn generate_scenes(specs: &[(SceneKind, u64)], size: (usize, usize)) -> Result<Vec<SceneImage>> {
    specs
        .iter()
        .enumerate()
        .map(|(id, &(kind, seed))| {
            let mut s = generate_scene(kind, seed, size)?;
            s.scene_id = id;
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: usize,
    pub kind: SceneKind,
    pub seed: u64,
    pub file: String,
}

/// On-disk description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub image_size: (usize, usize),
    pub scenes: Vec<SceneRecord>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Manifest {
    /// Regenerates the scene images (bit-identical to the originals) and both splits.
    pub fn materialize(&self) -> Result<(Dataset, Dataset)> {
        let specs: Vec<_> = self.scenes.iter().map(|s| (s.kind, s.seed)).collect();
        let scenes = Arc::new(generate_scenes(&specs, self.image_size)?);
        let check = |samples: &[Sample]| -> Result<()> {
            for s in samples {
                if s.scene_id >= scenes.len() {
                    return Err(Error::invalid(format!("sample references scene {}", s.scene_id)));
                }
                s.camera.validate()?;
            }
            Ok(())
        };
        check(&self.train)?;
        check(&self.test)?;
        Ok((
            Dataset {
                split: Split::Train,
                scenes: Arc::clone(&scenes),
                samples: self.train.clone(),
            },
            Dataset {
                split: Split::Test,
                scenes,
                samples: self.test.clone(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenes(n: usize) -> Arc<Vec<SceneImage>> {
        let specs: Vec<_> = (0..n).map(|i| (SceneKind::Forest, i as u64)).collect();
        Arc::new(generate_scenes(&specs, (16, 16)).unwrap())
    }

    #[test]
    fn size_is_product() {
        let r = CameraRanges::default();
        assert_eq!(build_dataset(scenes(10), 500, 0, &r, Split::Train).unwrap().len(), 5000);
        assert_eq!(build_dataset(scenes(1), 1, 0, &r, Split::Train).unwrap().len(), 1);
        assert_eq!(build_dataset(scenes(4), 50, 0, &r, Split::Train).unwrap().len(), 200);
    }

    #[test]
    fn empty_scene_list_is_an_error() {
        let r = CameraRanges::default();
        assert!(build_dataset(Arc::new(vec![]), 3, 0, &r, Split::Train).is_err());
    }

    #[test]
    fn manifest_materializes_same_scenes() {
        let s = scenes(2);
        let r = CameraRanges::default();
        let train = build_dataset(Arc::clone(&s), 3, 1, &r, Split::Train).unwrap();
        let m = Manifest {
            config_hash: "x".into(),
            seed: 0,
            image_size: (16, 16),
            scenes: s
                .iter()
                .map(|sc| SceneRecord {
                    scene_id: sc.scene_id,
                    kind: sc.kind,
                    seed: sc.seed,
                    file: String::new(),
                })
                .collect(),
            train: train.samples.clone(),
            test: vec![],
        };
        let json = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&json).unwrap();
        let (t, _) = back.materialize().unwrap();
        assert_eq!(*t.scenes, *s);
        assert_eq!(t.samples, train.samples);
    }
}
