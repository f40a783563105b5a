//! Per-face flat colors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// One RGB color per mesh face, indexed 0-based in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub colors: Vec<[f64; 3]>,
}

impl TextureMap {
    pub fn uniform(n_faces: usize, color: [f64; 3]) -> Self {
        Self {
            colors: vec![color; n_faces],
        }
    }

    /// Uniform(0, 1) noise in every channel.
    pub fn random<R: Rng>(n_faces: usize, rng: &mut R) -> Self {
        Self {
            colors: (0..n_faces).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
        }
    }

    /// The unmodified "clothing" look: trousers, shirt and skin bands by face height.
    pub fn raw(mesh: &Mesh) -> Self {
        let ys: Vec<f64> = mesh.vertices().iter().map(|v| v[1]).collect();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(f64::EPSILON);
        let colors = (0..mesh.n_faces())
            .map(|f| {
                let t = (mesh.face_centroid(f)[1] - lo) / span;
                if t < 0.45 {
                    [0.12, 0.16, 0.42]
                } else if t < 0.84 {
                    [0.78, 0.14, 0.12]
                } else {
                    [0.86, 0.66, 0.52]
                }
            })
            .collect();
        Self { colors }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        self.colors.as_flattened()
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        self.colors.as_flattened_mut()
    }

    pub fn clamp_unit(&mut self) {
        for v in self.as_flat_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn check_len(&self, n_faces: usize) -> Result<()> {
        if self.len() != n_faces {
            return Err(Error::shape(
                format!("{n_faces} face colors"),
                format!("{} face colors", self.len()),
            ));
        }
        Ok(())
    }

    /// JSON array of `[r, g, b]` triples with 9 significant digits.
    pub fn to_json(&self) -> String {
        let mut s = String::from("[\n");
        for (i, c) in self.colors.iter().enumerate() {
            let sep = if i + 1 == self.colors.len() { "" } else { "," };
            let _ = writeln!(
                s,
                "  [{}, {}, {}]{sep}",
                sig9(c[0]),
                sig9(c[1]),
                sig9(c[2])
            );
        }
        s.push_str("]\n");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let colors: Vec<[f64; 3]> = serde_json::from_str(text)?;
        if colors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("texture file"));
        }
        Ok(Self { colors })
    }
}

/// Either one texture for every sample or one per scene id.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneTextures {
    Universal(TextureMap),
    PerScene(BTreeMap<usize, TextureMap>),
}

impl SceneTextures {
    pub fn for_scene(&self, scene_id: usize) -> Result<&TextureMap> {
        match self {
            SceneTextures::Universal(t) => Ok(t),
            SceneTextures::PerScene(map) => map
                .get(&scene_id)
                .ok_or_else(|| Error::Missing(format!("no texture trained for scene {scene_id}"))),
        }
    }

    pub fn map<F>(&self, mut f: F) -> Result<SceneTextures>
    where
        F: FnMut(&TextureMap) -> Result<TextureMap>,
    {
        Ok(match self {
            SceneTextures::Universal(t) => SceneTextures::Universal(f(t)?),
            SceneTextures::PerScene(map) => SceneTextures::PerScene(
                map.iter()
                    .map(|(&k, t)| Ok((k, f(t)?)))
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

/// Decimal rendering with nine significant digits.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_owned();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).clamp(1, 30) as usize;
    format!("{v:.decimals$}")
}
