//! Dual adversarial camouflage training.
//!
//! Stage 1 fits a global texture whose renders match the scene under the
//! object's silhouette. Stage 2 trains a local texture on the masked faces
//! against the detector's objectness, held near the global texture by the
//! color loss and kept smooth by the smoothness loss on the rendered object.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::detector::DetectorNet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{loss_color, loss_first, loss_smooth, loss_total};
use crate::mask::{compose_texture, FaceMask};
use crate::mesh::Mesh;
use crate::optim::AdamState;
use crate::par::Exec;
use crate::render::{compose, rasterize_all, Raster, RenderOutput};
use crate::texture::{SceneTextures, TextureMap};

const STAGE2_SALT: u64 = 0x5EC0_4D00_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self {
            lambda1: 5e-4,
            lambda2: 1e-7,
            lr: 0.01,
            epochs_stage1: 5,
            epochs_stage2: 10,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl DacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Loss terms of one optimizer step. Stage 1 only fills `total`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    pub total: f64,
    pub adv: f64,
    pub color: f64,
    pub smooth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// One entry per optimizer step, `epochs * steps_per_epoch` in total.
    pub steps: Vec<StepLoss>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn epoch_means(&self) -> Vec<StepLoss> {
        (0..self.epochs)
            .map(|e| {
                let s: Vec<&StepLoss> = self.steps.iter().filter(|s| s.epoch == e).collect();
                let n = s.len().max(1) as f64;
                StepLoss {
                    epoch: e,
                    total: s.iter().map(|x| x.total).sum::<f64>() / n,
                    adv: s.iter().map(|x| x.adv).sum::<f64>() / n,
                    color: s.iter().map(|x| x.color).sum::<f64>() / n,
                    smooth: s.iter().map(|x| x.smooth).sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// Per-epoch means as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total,adv,color,smooth\n");
        for m in self.epoch_means() {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                m.epoch, m.total, m.adv, m.color, m.smooth
            ));
        }
        out
    }
}

/// A dataset with its rasterizations precomputed. Geometry never changes
/// during training, so visibility is solved once per camera.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub dataset: Dataset,
    pub rasters: Vec<Arc<Raster>>,
    pub n_faces: usize,
}

impl PreparedSet {
    pub fn new(mesh: &Mesh, dataset: Dataset, exec: Exec) -> Result<Self> {
        let cameras: Vec<_> = dataset.samples.iter().map(|s| s.camera).collect();
        let rasters = rasterize_all(mesh, &cameras, exec)?;
        Ok(Self {
            dataset,
            rasters,
            n_faces: mesh.n_faces(),
        })
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn scene_image(&self, i: usize) -> &Image {
        &self.dataset.scenes[self.dataset.samples[i].scene_id].image
    }

    pub fn scene_id(&self, i: usize) -> usize {
        self.dataset.samples[i].scene_id
    }

    pub fn truncated(&self, n: usize) -> PreparedSet {
        PreparedSet {
            dataset: self.dataset.truncated(n),
            rasters: self.rasters.iter().take(n).cloned().collect(),
            n_faces: self.n_faces,
        }
    }

    pub fn only_scene(&self, scene_id: usize) -> PreparedSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.scene_id(i) == scene_id).collect();
        PreparedSet {
            dataset: Dataset {
                split: self.dataset.split,
                scenes: Arc::clone(&self.dataset.scenes),
                samples: keep.iter().map(|&i| self.dataset.samples[i]).collect(),
            },
            rasters: keep.iter().map(|&i| Arc::clone(&self.rasters[i])).collect(),
            n_faces: self.n_faces,
        }
    }
}

fn check_finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Stage 1: fit the global texture to the scenes, starting from uniform noise.
pub fn train_stage1(set: &PreparedSet, cfg: &DacConfig) -> Result<(TextureMap, TrainReport)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("stage 1 needs a non-empty dataset"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut texture = TextureMap::random(set.n_faces, &mut rng);
    let mut adam = AdamState::new(set.n_faces * 3);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs_stage1 {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let outputs: Vec<RenderOutput> = batch
                .iter()
                .map(|&i| set.rasters[i].shade(&texture))
                .collect::<Result<_>>()?;
            let scenes: Vec<&Image> = batch.iter().map(|&i| set.scene_image(i)).collect();
            let (loss, pixel_grads) = loss_first(&outputs, &scenes)?;
            let mut grad = vec![0.0; set.n_faces * 3];
            for (out, pg) in outputs.iter().zip(&pixel_grads) {
                let g = crate::render::backprop_to_texture(&out.raster, pg)?;
                for (acc, v) in grad.iter_mut().zip(g.as_flattened()) {
                    *acc += v;
                }
            }
            adam.step(texture.as_flat_mut(), &grad, cfg.lr)?;
            texture.clamp_unit();
            steps.push(StepLoss {
                epoch,
                total: check_finite(loss, "stage-1 loss")?,
                ..Default::default()
            });
        }
    }
    Ok((
        texture,
        TrainReport {
            stage: "stage1".into(),
            seed: cfg.seed,
            epochs: cfg.epochs_stage1,
            steps_per_epoch: set.len().div_ceil(cfg.batch_size),
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Everything one stage-2 forward/backward pass produces for a single sample.
#[derive(Debug, Clone)]
pub struct SecondStagePass {
    pub loss: StepLoss,
    /// Gradient of the total loss with respect to the local texture (zero on unmasked faces).
    pub grad_local: Vec<[f64; 3]>,
    pub adv_image: Image,
    pub render: RenderOutput,
}

/// Compose texture, render, composite onto the scene, score, and chain all
/// three loss gradients back to the local texture.
#[allow(clippy::too_many_arguments)]
pub fn second_stage_pass(
    raster: &Arc<Raster>,
    scene: &crate::scene::SceneImage,
    global: &TextureMap,
    local: &TextureMap,
    mask: &FaceMask,
    net: &DetectorNet,
    lambda1: f64,
    lambda2: f64,
) -> Result<SecondStagePass> {
    let t_adv = compose_texture(global, local, mask)?;
    let render = raster.shade(&t_adv)?;
    let adv_image = compose(&render, scene)?;
    let (adv, dimg) = net.score_and_grad(&adv_image)?;
    let (smooth, dsmooth) = loss_smooth(&render.color)?;
    let (color, dcolor) = loss_color(global, local, mask)?;
    // d I_adv / d O is the silhouette; uncovered pixels are dropped by the
    // texture adjoint anyway, so the smooth gradient can be added everywhere
    let mut dobj = dimg;
    for (d, s) in dobj.data.iter_mut().zip(&dsmooth.data) {
        *d += lambda2 * s;
    }
    let dtex = crate::render::backprop_to_texture(raster, &dobj)?;
    let grad_local = (0..mask.len())
        .map(|f| {
            if mask.selected(f) {
                [0, 1, 2].map(|c| dtex[f][c] + lambda1 * dcolor[f][c])
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok(SecondStagePass {
        loss: StepLoss {
            epoch: 0,
            total: loss_total(adv, color, smooth, lambda1, lambda2),
            adv,
            color,
            smooth,
        },
        grad_local,
        adv_image,
        render,
    })
}

/// Stage 2 over a dataset with one global texture or one per scene.
pub fn train_local(
    set: &PreparedSet,
    globals: &SceneTextures,
    mask: &FaceMask,
    net: &DetectorNet,
    cfg: &DacConfig,
) -> Result<(TextureMap, TrainReport)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("stage 2 needs a non-empty dataset"));
    }
    if mask.len() != set.n_faces {
        return Err(Error::shape(set.n_faces, mask.len()));
    }
    for id in set.dataset.scene_ids() {
        globals.for_scene(id)?.check_len(set.n_faces)?;
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STAGE2_SALT);
    let mut local = TextureMap::random(set.n_faces, &mut rng);
    let mut adam = AdamState::new(set.n_faces * 3);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs_stage2 {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; set.n_faces * 3];
            let mut loss = StepLoss {
                epoch,
                ..Default::default()
            };
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let scene = set.dataset.scene(set.scene_id(i))?;
                let global = globals.for_scene(scene.scene_id)?;
                let pass = second_stage_pass(
                    &set.rasters[i],
                    scene,
                    global,
                    &local,
                    mask,
                    net,
                    cfg.lambda1,
                    cfg.lambda2,
                )?;
                for (acc, v) in grad.iter_mut().zip(pass.grad_local.as_flattened()) {
                    *acc += v * scale;
                }
                loss.total += pass.loss.total * scale;
                loss.adv += pass.loss.adv * scale;
                loss.color += pass.loss.color * scale;
                loss.smooth += pass.loss.smooth * scale;
            }
            check_finite(loss.total, "stage-2 loss")?;
            adam.step(local.as_flat_mut(), &grad, cfg.lr)?;
            local.clamp_unit();
            steps.push(loss);
        }
    }
    Ok((
        local,
        TrainReport {
            stage: "stage2".into(),
            seed: cfg.seed,
            epochs: cfg.epochs_stage2,
            steps_per_epoch: set.len().div_ceil(cfg.batch_size),
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Stage 2 with a single universal global texture.
pub fn train_stage2(
    set: &PreparedSet,
    global: &TextureMap,
    mask: &FaceMask,
    net: &DetectorNet,
    cfg: &DacConfig,
) -> Result<(TextureMap, TrainReport)> {
    train_local(set, &SceneTextures::Universal(global.clone()), mask, net, cfg)
}

#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    /// Per-scene global textures.
    pub globals: BTreeMap<usize, TextureMap>,
    /// The universal local texture.
    pub local: TextureMap,
    pub stage1: Vec<TrainReport>,
    pub stage2: TrainReport,
}

impl AdaptiveResult {
    pub fn adversarial_textures(&self, mask: &FaceMask) -> Result<SceneTextures> {
        SceneTextures::PerScene(self.globals.clone()).map(|g| compose_texture(g, &self.local, mask))
    }
}

/// Stage 1 once per scene, then one universal local texture trained against
/// each sample's own scene texture.
pub fn train_adaptive_globals(set: &PreparedSet, cfg: &DacConfig) -> Result<(BTreeMap<usize, TextureMap>, Vec<TrainReport>)> {
    let mut globals = BTreeMap::new();
    let mut reports = Vec::new();
    for id in set.dataset.scene_ids() {
        let (t, r) = train_stage1(&set.only_scene(id), cfg)?;
        globals.insert(id, t);
        reports.push(r);
    }
    Ok((globals, reports))
}

pub fn train_adaptive(
    set: &PreparedSet,
    mask: &FaceMask,
    net: &DetectorNet,
    cfg: &DacConfig,
) -> Result<AdaptiveResult> {
    let (globals, stage1) = train_adaptive_globals(set, cfg)?;
    let (local, stage2) = train_local(set, &SceneTextures::PerScene(globals.clone()), mask, net, cfg)?;
    Ok(AdaptiveResult {
        globals,
        local,
        stage1,
        stage2,
    })
}
