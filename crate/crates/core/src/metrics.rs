//! Attack and naturalness metrics.
//!
//! P@0.5 here is a box-free surrogate: an image counts as detected when the
//! detector's objectness reaches the threshold. Reports label it
//! `p_at_05_surrogate` so it is not mistaken for the IoU-based metric.

use serde::{Deserialize, Serialize};

use crate::dac::PreparedSet;
use crate::detector::DetectorNet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par::Exec;
use crate::render::{compose, RenderOutput};
use crate::texture::{SceneTextures, TextureMap};

/// 8-bit intensity scale applied to the reported MSE.
pub const MSE_SCALE: f64 = 255.0 * 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "p_at_05_surrogate")]
    pub p_at_05: f64,
    pub asr: f64,
    pub mse_naturalness: f64,
    pub mse_unit: f64,
    pub clean_p_at_05: f64,
    pub mean_objectness: f64,
    pub n_images: usize,
    pub threshold: f64,
}

/// Fraction of detection flags that are set.
pub fn detection_rate(detected: &[bool]) -> Result<f64> {
    if detected.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    Ok(detected.iter().filter(|&&d| d).count() as f64 / detected.len() as f64)
}

/// Among indices where the clean image is detected, the fraction whose
/// adversarial counterpart is not.
pub fn asr_from_flags(clean: &[bool], adv: &[bool]) -> Result<f64> {
    if clean.len() != adv.len() {
        return Err(Error::shape(clean.len(), adv.len()));
    }
    let detected = clean.iter().filter(|&&c| c).count();
    if detected == 0 {
        return Err(Error::UndefinedAsr);
    }
    let evaded = clean.iter().zip(adv).filter(|(&c, &a)| c && !a).count();
    Ok(evaded as f64 / detected as f64)
}

fn flags(net: &DetectorNet, images: &[Image], threshold: f64, exec: Exec) -> Result<Vec<bool>> {
    exec.map(images, |img| net.score(img).map(|s| s >= threshold))
        .into_iter()
        .collect()
}

/// Surrogate P@0.5 over full-resolution composed images.
pub fn p_at_05(net: &DetectorNet, images: &[Image], threshold: f64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    detection_rate(&flags(net, images, threshold, Exec::default())?)
}

pub fn asr(net: &DetectorNet, clean: &[Image], adv: &[Image], threshold: f64) -> Result<f64> {
    if clean.len() != adv.len() {
        return Err(Error::shape(clean.len(), adv.len()));
    }
    let exec = Exec::default();
    asr_from_flags(&flags(net, clean, threshold, exec)?, &flags(net, adv, threshold, exec)?)
}

/// Silhouette-masked mean squared error of one render against its scene,
/// on the unit intensity scale. `None` when the silhouette is empty.
pub fn masked_mse(render: &RenderOutput, scene: &Image) -> Result<Option<f64>> {
    render.color.same_dims(scene)?;
    let covered = render.raster.covered_pixels();
    if covered == 0 {
        return Ok(None);
    }
    let mut sq = 0.0;
    for (p, &f) in render.raster.face_id.iter().enumerate() {
        if f != 0 {
            for (o, s) in render.color.pixel(p).iter().zip(scene.pixel(p)) {
                sq += (o - s) * (o - s);
            }
        }
    }
    Ok(Some(sq / (3 * covered) as f64))
}

/// Mean unit-scale masked MSE over samples with a non-empty silhouette.
pub fn mse_naturalness_unit(renders: &[RenderOutput], scenes: &[&Image]) -> Result<f64> {
    if renders.len() != scenes.len() {
        return Err(Error::shape(renders.len(), scenes.len()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, s) in renders.iter().zip(scenes) {
        if let Some(m) = masked_mse(r, s)? {
            sum += m;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// [`mse_naturalness_unit`] on the 8-bit scale (times 255²).
pub fn mse_naturalness(renders: &[RenderOutput], scenes: &[&Image]) -> Result<f64> {
    Ok(mse_naturalness_unit(renders, scenes)? * MSE_SCALE)
}

struct SampleEval {
    clean_detected: bool,
    adv_detected: bool,
    adv_score: f64,
    mse: Option<f64>,
}

/// Scores the clean (`raw`) and adversarial textures on every sample of `set`.
pub fn evaluate(
    set: &PreparedSet,
    net: &DetectorNet,
    raw: &TextureMap,
    adversarial: &SceneTextures,
    threshold: f64,
    exec: Exec,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let per_sample: Vec<SampleEval> = exec
        .map_range(set.len(), |i| -> Result<SampleEval> {
            let scene = set.dataset.scene(set.scene_id(i))?;
            let clean = set.rasters[i].shade(raw)?;
            let adv = set.rasters[i].shade(adversarial.for_scene(scene.scene_id)?)?;
            let adv_score = net.score(&compose(&adv, scene)?)?;
            Ok(SampleEval {
                clean_detected: net.score(&compose(&clean, scene)?)? >= threshold,
                adv_detected: adv_score >= threshold,
                adv_score,
                mse: masked_mse(&adv, &scene.image)?,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let clean: Vec<bool> = per_sample.iter().map(|s| s.clean_detected).collect();
    let adv: Vec<bool> = per_sample.iter().map(|s| s.adv_detected).collect();
    let mses: Vec<f64> = per_sample.iter().filter_map(|s| s.mse).collect();
    let mse_unit = if mses.is_empty() {
        0.0
    } else {
        mses.iter().sum::<f64>() / mses.len() as f64
    };
    Ok(EvalReport {
        p_at_05: detection_rate(&adv)?,
        asr: asr_from_flags(&clean, &adv)?,
        mse_naturalness: mse_unit * MSE_SCALE,
        mse_unit,
        clean_p_at_05: detection_rate(&clean)?,
        mean_objectness: per_sample.iter().map(|s| s.adv_score).sum::<f64>() / set.len() as f64,
        n_images: set.len(),
        threshold,
    })
}

/// Adversarial-set detection rate only; the DE fitness.
pub fn p_at_05_for(
    set: &PreparedSet,
    net: &DetectorNet,
    textures: &SceneTextures,
    threshold: f64,
    exec: Exec,
) -> Result<f64> {
    let flags: Vec<bool> = exec
        .map_range(set.len(), |i| -> Result<bool> {
            let scene = set.dataset.scene(set.scene_id(i))?;
            let out = set.rasters[i].shade(textures.for_scene(scene.scene_id)?)?;
            Ok(net.score(&compose(&out, scene)?)? >= threshold)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    detection_rate(&flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Raster;
    use std::sync::Arc;

    #[test]
    fn counting_cases() {
        assert_eq!(detection_rate(&[true, true, false, true]).unwrap(), 0.75);
        assert_eq!(detection_rate(&[true; 3]).unwrap(), 1.0);
        assert_eq!(detection_rate(&[false; 3]).unwrap(), 0.0);
        assert!(detection_rate(&[]).is_err());
        let clean = [false, true, true, true];
        let adv = [true, true, false, false];
        assert!((asr_from_flags(&clean, &adv).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(asr_from_flags(&clean, &clean).unwrap(), 0.0);
        assert!(matches!(asr_from_flags(&[false], &[false]), Err(Error::UndefinedAsr)));
    }

    #[test]
    fn mse_scale_convention() {
        let raster = Arc::new(Raster::from_face_ids(2, 2, 1, vec![1, 0, 0, 1]).unwrap());
        let out = raster.shade(&TextureMap::uniform(1, [1.0; 3])).unwrap();
        let black = Image::zeros(2, 2, 3);
        assert_eq!(mse_naturalness(&[out.clone()], &[&black]).unwrap(), 65025.0);
        assert_eq!(mse_naturalness(&[out.clone()], &[&out.color]).unwrap(), 0.0);
        assert!(mse_naturalness(&[out], &[]).is_err());
    }
}
