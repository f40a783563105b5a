//! Procedural background scenes: low-frequency value noise mapped through a
//! per-kind palette.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Winter,
    Forest,
    Desert,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::Winter, SceneKind::Forest, SceneKind::Desert];

    /// (low, high, accent) palette anchors.
    fn palette(self) -> [[f64; 3]; 3] {
        match self {
            SceneKind::Winter => [[0.62, 0.64, 0.68], [0.95, 0.96, 0.98], [0.74, 0.77, 0.82]],
            SceneKind::Forest => [[0.10, 0.30, 0.08], [0.36, 0.56, 0.20], [0.28, 0.27, 0.12]],
            SceneKind::Desert => [[0.64, 0.50, 0.30], [0.90, 0.78, 0.55], [0.76, 0.62, 0.42]],
        }
    }

    fn salt(self) -> u64 {
        match self {
            SceneKind::Winter => 0x57,
            SceneKind::Forest => 0xF0,
            SceneKind::Desert => 0xDE,
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Winter => "winter",
            SceneKind::Forest => "forest",
            SceneKind::Desert => "desert",
        })
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "winter" => Ok(SceneKind::Winter),
            "forest" => Ok(SceneKind::Forest),
            "desert" => Ok(SceneKind::Desert),
            _ => Err(Error::invalid(format!("unknown scene kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub scene_id: usize,
    pub kind: SceneKind,
    pub seed: u64,
    pub image: Image,
}

/// Multi-octave value noise in [0, 1].
struct ValueNoise {
    octaves: Vec<(usize, Vec<f64>)>,
}

impl ValueNoise {
    const BASE_CELLS: usize = 3;

    fn new<R: Rng>(rng: &mut R, n_octaves: usize) -> Self {
        let octaves = (0..n_octaves)
            .map(|o| {
                let cells = Self::BASE_CELLS << o;
                let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f64>()).collect();
                (cells, lattice)
            })
            .collect();
        Self { octaves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for (cells, lattice) in &self.octaves {
            let (fx, fy) = (u * *cells as f64, v * *cells as f64);
            let (x0, y0) = ((fx.floor() as usize).min(cells - 1), (fy.floor() as usize).min(cells - 1));
            let (tx, ty) = (smoothstep(fx - x0 as f64), smoothstep(fy - y0 as f64));
            let stride = cells + 1;
            let l = |x: usize, y: usize| lattice[y * stride + x];
            let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
            let bottom = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
            sum += amp * (top * (1.0 - ty) + bottom * ty);
            norm += amp;
            amp *= 0.5;
        }
        sum / norm
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

/// Deterministic procedural scene for `(kind, seed, size)`.
pub fn generate_scene(kind: SceneKind, seed: u64, size: (usize, usize)) -> Result<SceneImage> {
    let (h, w) = size;
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!("scene size {h}x{w} is below 16x16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind.salt() << 56));
    let n_octaves = rng.gen_range(2..=4);
    let base = ValueNoise::new(&mut rng, n_octaves);
    let accent = ValueNoise::new(&mut rng, 2);
    let [low, high, acc] = kind.palette();
    let mut image = Image::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let c = lerp3(low, high, base.at(u, v));
            let c = lerp3(c, acc, 0.35 * accent.at(u, v));
            let i = image.index(y, x, 0);
            image.data[i..i + 3].copy_from_slice(&c.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(SceneImage {
        scene_id: 0,
        kind,
        seed,
        image,
    })
}

/// A flat single-color scene, used for convergence checks.
pub fn constant_scene(color: [f64; 3], size: (usize, usize), scene_id: usize) -> SceneImage {
    SceneImage {
        scene_id,
        kind: SceneKind::Winter,
        seed: 0,
        image: Image::filled(size.0, size.1, color),
    }
}
