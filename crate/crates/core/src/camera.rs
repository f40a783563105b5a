use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spherical camera pose around the mesh centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub distance: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::invalid(format!(
                "camera distance must be positive, got {}",
                self.distance
            )));
        }
        if !(0.0..=90.0).contains(&self.elevation_deg) {
            return Err(Error::invalid(format!(
                "elevation must lie in [0, 90], got {}",
                self.elevation_deg
            )));
        }
        // azimuth is reduced modulo 360 at render time; any finite value is accepted
        if !self.azimuth_deg.is_finite() {
            return Err(Error::invalid("azimuth must be finite"));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        Ok(())
    }
}

/// Closed sampling intervals `[min, max]` for each pose parameter.
/// Azimuth is drawn from the half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRanges {
    pub distance: (f64, f64),
    pub elevation: (f64, f64),
    pub azimuth: (f64, f64),
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            distance: (2.0, 7.0),
            elevation: (0.0, 45.0),
            azimuth: (0.0, 360.0),
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("distance", self.distance),
            ("elevation", self.elevation),
            ("azimuth", self.azimuth),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(format!(
                    "{name} range [{lo}, {hi}] is inverted or non-finite"
                )));
            }
        }
        if self.distance.0 <= 0.0 {
            return Err(Error::invalid("distance range must be positive"));
        }
        if self.elevation.0 < 0.0 || self.elevation.1 > 90.0 {
            return Err(Error::invalid("elevation range must lie within [0, 90]"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, image_size: (usize, usize)) -> CameraParams {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        CameraParams {
            distance: draw(self.distance),
            elevation_deg: draw(self.elevation),
            azimuth_deg: draw(self.azimuth),
            image_size,
        }
    }
}

/// Deterministic camera draw for a given seed.
pub fn sample_camera(
    seed: u64,
    ranges: &CameraRanges,
    image_size: (usize, usize),
) -> Result<CameraParams> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ranges.sample(&mut rng, image_size))
}
