//! Scalar objectives with their exact gradients.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::FaceMask;
use crate::render::RenderOutput;
use crate::texture::TextureMap;

/// Mean over all (render, scene) pairs of the squared error between the
/// render and the scene on the render's silhouette pixels.
///
/// Returns the loss and, per render, its gradient with respect to the
/// rendered color image (non-zero only on silhouette pixels). A render with
/// an empty silhouette contributes zero.
pub fn loss_first(rendered: &[RenderOutput], scenes: &[&Image]) -> Result<(f64, Vec<Image>)> {
    if rendered.is_empty() || scenes.is_empty() {
        return Err(Error::invalid("loss_first needs at least one render and one scene"));
    }
    let pairs = (rendered.len() * scenes.len()) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(rendered.len());
    for out in rendered {
        let mut grad = Image::zeros(out.color.height, out.color.width, 3);
        let covered = out.raster.covered_pixels();
        for scene in scenes {
            out.color.same_dims(scene)?;
            if covered == 0 {
                continue;
            }
            let norm = 1.0 / (3 * covered) as f64;
            let mut sq = 0.0;
            for (p, &f) in out.raster.face_id.iter().enumerate() {
                if f == 0 {
                    continue;
                }
                let o = out.color.pixel(p);
                let s = scene.pixel(p);
                let g = grad.pixel_mut(p);
                for c in 0..3 {
                    let d = o[c] - s[c];
                    sq += d * d;
                    g[c] += 2.0 * d * norm / pairs;
                }
            }
            loss += sq * norm / pairs;
        }
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// `sum over masked faces of |T_g - T_l|^2` and its gradient with respect to `T_l`.
pub fn loss_color(global: &TextureMap, local: &TextureMap, mask: &FaceMask) -> Result<(f64, Vec<[f64; 3]>)> {
    global.check_len(mask.len())?;
    local.check_len(mask.len())?;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; mask.len()];
    for (f, g) in grad.iter_mut().enumerate() {
        if !mask.selected(f) {
            continue;
        }
        for c in 0..3 {
            let d = global.colors[f][c] - local.colors[f][c];
            loss += d * d;
            g[c] = -2.0 * d;
        }
    }
    Ok((loss, grad))
}

/// Sum of squared differences between vertically and horizontally adjacent
/// pixels over every channel, with its gradient.
pub fn loss_smooth(image: &Image) -> Result<(f64, Image)> {
    let (h, w, ch) = image.dims();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("smooth loss needs at least 2x2, got {h}x{w}")));
    }
    let mut loss = 0.0;
    let mut grad = Image::zeros(h, w, ch);
    let x = &image.data;
    for y in 0..h {
        for xx in 0..w {
            let i = (y * w + xx) * ch;
            for c in 0..ch {
                if y + 1 < h {
                    let j = i + w * ch + c;
                    let d = x[i + c] - x[j];
                    loss += d * d;
                    grad.data[i + c] += 2.0 * d;
                    grad.data[j] -= 2.0 * d;
                }
                if xx + 1 < w {
                    let j = i + ch + c;
                    let d = x[i + c] - x[j];
                    loss += d * d;
                    grad.data[i + c] += 2.0 * d;
                    grad.data[j] -= 2.0 * d;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// `adv + lambda1 * color + lambda2 * smooth`.
pub fn loss_total(adv: f64, color: f64, smooth: f64, lambda1: f64, lambda2: f64) -> f64 {
    adv + lambda1 * color + lambda2 * smooth
}
