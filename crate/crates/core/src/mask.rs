use crate::error::{Error, Result};
use crate::texture::TextureMap;

/// Binary selector over faces: set bits take the local texture.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaceMask {
    bits: Vec<bool>,
    count: usize,
}

impl FaceMask {
    pub fn full(n_faces: usize) -> Result<Self> {
        make_face_mask(&(1..=n_faces).collect::<Vec<_>>(), n_faces)
    }

    /// Any bit pattern, including the empty selection.
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let count = bits.iter().filter(|&&b| b).count();
        Self { bits, count }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of selected faces, `n_f`.
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn selected(&self, face: usize) -> bool {
        self.bits[face]
    }

    /// Selected faces as sorted 1-based indices.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect()
    }
}

/// Mask with bits set at the given 1-based face indices.
pub fn make_face_mask(indices: &[usize], n_faces: usize) -> Result<FaceMask> {
    if indices.is_empty() {
        return Err(Error::invalid("face mask needs at least one face"));
    }
    let mut bits = vec![false; n_faces];
    for &i in indices {
        if i == 0 || i > n_faces {
            return Err(Error::invalid(format!("face index {i} outside 1..={n_faces}")));
        }
        if std::mem::replace(&mut bits[i - 1], true) {
            return Err(Error::invalid(format!("duplicate face index {i}")));
        }
    }
    Ok(FaceMask {
        bits,
        count: indices.len(),
    })
}

/// Per face: local color where the mask is set, global color elsewhere.
pub fn compose_texture(global: &TextureMap, local: &TextureMap, mask: &FaceMask) -> Result<TextureMap> {
    global.check_len(mask.len())?;
    local.check_len(mask.len())?;
    let colors = global
        .colors
        .iter()
        .zip(&local.colors)
        .zip(mask.bits())
        .map(|((g, l), &m)| if m { *l } else { *g })
        .collect();
    Ok(TextureMap { colors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction() {
        let m = make_face_mask(&[2, 5], 6).unwrap();
        assert_eq!(m.bits(), &[false, true, false, false, true, false]);
        assert_eq!(m.count(), 2);
        assert_eq!(m.indices(), vec![2, 5]);
        assert_eq!(FaceMask::full(4).unwrap().count(), 4);
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(make_face_mask(&[], 3).is_err());
        assert!(make_face_mask(&[0], 3).is_err());
        assert!(make_face_mask(&[4], 3).is_err());
        assert!(make_face_mask(&[1, 1], 3).is_err());
    }

    #[test]
    fn composition_picks_per_face() {
        let g = TextureMap {
            colors: vec![[0.1; 3], [0.2; 3], [0.3; 3], [0.4; 3]],
        };
        let l = TextureMap {
            colors: vec![[0.9; 3], [0.8; 3], [0.7; 3], [0.6; 3]],
        };
        let t = compose_texture(&g, &l, &make_face_mask(&[1, 3], 4).unwrap()).unwrap();
        assert_eq!(t.colors, vec![[0.9; 3], [0.2; 3], [0.7; 3], [0.4; 3]]);
        assert_eq!(compose_texture(&g, &l, &FaceMask::full(4).unwrap()).unwrap(), l);
        let short = TextureMap { colors: vec![[0.0; 3]; 3] };
        assert!(compose_texture(&short, &l, &FaceMask::full(4).unwrap()).is_err());
    }
}
