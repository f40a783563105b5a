//! Triangle meshes and the minimal OBJ reader.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const BOXPERSON_OBJ: &str = include_str!("../assets/boxperson.obj");

/// Immutable triangle mesh. Face indices are stored 0-based; the public
/// face numbering used by masks and individuals is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::invalid("mesh has no faces"));
        }
        if let Some(bad) = faces.iter().flatten().find(|&&i| i >= vertices.len()) {
            return Err(Error::invalid(format!(
                "face references vertex {} but the mesh has {} vertices",
                bad + 1,
                vertices.len()
            )));
        }
        Ok(Self { vertices, faces })
    }

    /// The built-in 80-triangle blocky humanoid, 1.76 units tall.
    pub fn boxperson() -> Self {
        parse_obj(BOXPERSON_OBJ).expect("built-in asset is valid")
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Number of faces, `n_m`.
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        c.map(|s| s / n)
    }

    /// Radius of the smallest sphere around `center` containing every vertex.
    pub fn bounding_radius(&self, center: [f64; 3]) -> f64 {
        self.vertices
            .iter()
            .map(|v| {
                let d = [v[0] - center[0], v[1] - center[1], v[2] - center[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn face_centroid(&self, face: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[face];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / 3.0)
    }

    /// Splits every triangle into `level²` congruent sub-triangles.
    /// `subdivided(5)` turns the 80-face boxperson into 2000 faces.
    pub fn subdivided(&self, level: usize) -> Result<Mesh> {
        if level == 0 {
            return Err(Error::invalid("subdivision level must be >= 1"));
        }
        if level == 1 {
            return Ok(self.clone());
        }
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.faces.len() * level * level);
        let n = level as f64;
        for &[ia, ib, ic] in &self.faces {
            let (a, b, c) = (self.vertices[ia], self.vertices[ib], self.vertices[ic]);
            let base = vertices.len();
            // barycentric lattice rows: row i has level - i + 1 points
            let mut row_start = Vec::with_capacity(level + 1);
            for i in 0..=level {
                row_start.push(vertices.len() - base);
                for j in 0..=(level - i) {
                    let (u, v) = (i as f64 / n, j as f64 / n);
                    let w = 1.0 - u - v;
                    vertices.push([0, 1, 2].map(|k| w * a[k] + v * b[k] + u * c[k]));
                }
            }
            let at = |i: usize, j: usize| base + row_start[i] + j;
            for i in 0..level {
                for j in 0..(level - i) {
                    faces.push([at(i, j), at(i, j + 1), at(i + 1, j)]);
                    if j + 1 < level - i {
                        faces.push([at(i, j + 1), at(i + 1, j + 1), at(i + 1, j)]);
                    }
                }
            }
        }
        Mesh::new(vertices, faces)
    }
}

/// Reads the `v x y z` / `f i j k` subset of Wavefront OBJ.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => {}
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| err(format!("bad vertex coordinate {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("vertex needs exactly three finite coordinates".into()));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<usize>()
                            .map_err(|_| err(format!("bad face index {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(format!(
                        "non-triangle face with {} vertices",
                        idx.len()
                    )));
                }
                for &i in &idx {
                    if i == 0 || i > vertices.len() {
                        return Err(err(format!(
                            "face index {i} out of range (1..={} defined so far)",
                            vertices.len()
                        )));
                    }
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            Some(other) => {
                return Err(err(format!("unsupported OBJ directive {other:?}")));
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "no faces".into(),
        });
    }
    Mesh::new(vertices, faces)
}
