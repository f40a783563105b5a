//! Flat-shaded z-buffer rasterizer and the exact texture backward pass.
//!
//! Geometry is fixed, so rasterization (which face owns which pixel) is
//! computed once per camera and reused; shading a [`Raster`] with a texture is
//! a linear map from face colors to pixels whose adjoint is
//! [`backprop_to_texture`].

use std::io::Write;
use std::sync::Arc;

use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::Mesh;
use crate::par::Exec;
use crate::scene::SceneImage;
use crate::texture::TextureMap;

/// Vertical field of view of the virtual camera.
pub const FOV_Y_DEG: f64 = 60.0;

pub type AdvImage = Image;

/// Per-pixel face ownership for one camera; 0 is background, otherwise the
/// 1-based face index.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub n_faces: usize,
    pub face_id: Vec<u32>,
}

impl Raster {
    pub fn from_face_ids(height: usize, width: usize, n_faces: usize, face_id: Vec<u32>) -> Result<Self> {
        if face_id.len() != height * width {
            return Err(Error::shape(height * width, face_id.len()));
        }
        if face_id.iter().any(|&f| f as usize > n_faces) {
            return Err(Error::invalid("face id exceeds face count"));
        }
        Ok(Self {
            height,
            width,
            n_faces,
            face_id,
        })
    }

    #[inline]
    pub fn covered(&self, p: usize) -> bool {
        self.face_id[p] != 0
    }

    /// Single-channel 0/1 silhouette image.
    pub fn silhouette(&self) -> Image {
        let data = self.face_id.iter().map(|&f| if f != 0 { 1.0 } else { 0.0 }).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn covered_pixels(&self) -> usize {
        self.face_id.iter().filter(|&&f| f != 0).count()
    }

    /// Pixel count per face (0-based face index).
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_faces];
        for &f in &self.face_id {
            if f != 0 {
                counts[f as usize - 1] += 1;
            }
        }
        counts
    }

    pub fn shade(self: &Arc<Self>, texture: &TextureMap) -> Result<RenderOutput> {
        texture.check_len(self.n_faces)?;
        let mut color = Image::zeros(self.height, self.width, 3);
        for (p, &f) in self.face_id.iter().enumerate() {
            if f != 0 {
                color.pixel_mut(p).copy_from_slice(&texture.colors[f as usize - 1]);
            }
        }
        Ok(RenderOutput {
            color,
            raster: Arc::clone(self),
        })
    }

    /// Little-endian dump: width and height as u32, then one u32 per pixel.
    pub fn write_face_ids<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for &f in &self.face_id {
            out.write_all(&f.to_le_bytes())?;
        }
        Ok(())
    }
}

/// A rendered object on a black background plus its coverage.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub raster: Arc<Raster>,
}

impl RenderOutput {
    pub fn silhouette(&self) -> Image {
        self.raster.silhouette()
    }

    pub fn face_id(&self) -> &[u32] {
        &self.raster.face_id
    }

    pub fn write_dump(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = |ext: &str| std::fs::File::create(dir.join(format!("{stem}.{ext}")));
        self.color.write_ppm(std::io::BufWriter::new(file("ppm")?))?;
        self.silhouette().write_pgm(std::io::BufWriter::new(file("pgm")?))?;
        self.raster.write_face_ids(std::io::BufWriter::new(file("faceid")?))?;
        Ok(())
    }
}

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Look-at frame for a spherical pose around `target` (y is up).
struct View {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
}

impl View {
    fn new(target: Vec3, camera: &CameraParams) -> Self {
        let az = camera.azimuth_deg.rem_euclid(360.0).to_radians();
        let el = camera.elevation_deg.to_radians();
        let offset = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];
        let eye = [0, 1, 2].map(|k| target[k] + camera.distance * offset[k]);
        let forward = normalize(sub(target, eye));
        // straight overhead the world up is parallel to the view axis;
        // fall back to the horizontal direction pointing away from the camera
        let up_hint = if forward[1].abs() > 1.0 - 1e-9 {
            [-az.sin(), 0.0, -az.cos()]
        } else {
            [0.0, 1.0, 0.0]
        };
        let right = normalize(cross(forward, up_hint));
        let up = cross(right, forward);
        Self {
            eye,
            right,
            up,
            forward,
        }
    }

    /// Screen position (pixels) and view depth.
    fn project(&self, p: Vec3, focal: f64, h: usize, w: usize) -> (f64, f64, f64) {
        let d = sub(p, self.eye);
        let (x, y, z) = (dot(d, self.right), dot(d, self.up), dot(d, self.forward));
        (
            w as f64 * 0.5 + focal * x / z,
            h as f64 * 0.5 - focal * y / z,
            z,
        )
    }
}

/// Visibility pass: which face is front-most at each pixel center.
/// Equal depths resolve to the lower face index.
pub fn rasterize(mesh: &Mesh, camera: &CameraParams) -> Result<Raster> {
    camera.validate()?;
    let target = mesh.centroid();
    let radius = mesh.bounding_radius(target);
    if camera.distance <= radius {
        return Err(Error::DegenerateViewpoint {
            distance: camera.distance,
            radius,
        });
    }
    let (h, w) = camera.image_size;
    let view = View::new(target, camera);
    let focal = 0.5 * h as f64 / (FOV_Y_DEG.to_radians() * 0.5).tan();
    let projected: Vec<(f64, f64, f64)> = mesh
        .vertices()
        .iter()
        .map(|&v| view.project(v, focal, h, w))
        .collect();

    let mut depth = vec![f64::INFINITY; h * w];
    let mut face_id = vec![0u32; h * w];
    for (fi, tri) in mesh.faces().iter().enumerate() {
        let [a, b, c] = tri.map(|i| projected[i]);
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let max_x = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(w);
        let min_y = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let max_y = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(h);
        let inv_area = 1.0 / area;
        for py in min_y..max_y {
            let sy = py as f64 + 0.5;
            for px in min_x..max_x {
                let sx = px as f64 + 0.5;
                let w0 = ((b.0 - sx) * (c.1 - sy) - (b.1 - sy) * (c.0 - sx)) * inv_area;
                let w1 = ((c.0 - sx) * (a.1 - sy) - (c.1 - sy) * (a.0 - sx)) * inv_area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (w0 / a.2 + w1 / b.2 + w2 / c.2);
                let p = py * w + px;
                if z < depth[p] {
                    depth[p] = z;
                    face_id[p] = fi as u32 + 1;
                }
            }
        }
    }
    Ok(Raster {
        height: h,
        width: w,
        n_faces: mesh.n_faces(),
        face_id,
    })
}

/// Renders `texture` on `mesh` from `camera`.
pub fn render(mesh: &Mesh, texture: &TextureMap, camera: &CameraParams) -> Result<RenderOutput> {
    texture.check_len(mesh.n_faces())?;
    Arc::new(rasterize(mesh, camera)?).shade(texture)
}

pub fn rasterize_all(mesh: &Mesh, cameras: &[CameraParams], exec: Exec) -> Result<Vec<Arc<Raster>>> {
    exec.map(cameras, |c| rasterize(mesh, c).map(Arc::new))
        .into_iter()
        .collect()
}

/// `m * color + (1 - m) * scene` with a binary per-pixel mask.
pub fn compose_with_mask(color: &Image, mask: &[bool], scene: &Image) -> Result<AdvImage> {
    color.same_dims(scene)?;
    if mask.len() != color.n_pixels() {
        return Err(Error::shape(color.n_pixels(), mask.len()));
    }
    let mut out = scene.clone();
    for (p, &m) in mask.iter().enumerate() {
        if m {
            out.pixel_mut(p).copy_from_slice(color.pixel(p));
        }
    }
    Ok(out)
}

/// Places the rendered object over the scene using its silhouette.
pub fn compose(out: &RenderOutput, scene: &SceneImage) -> Result<AdvImage> {
    let mask: Vec<bool> = out.raster.face_id.iter().map(|&f| f != 0).collect();
    compose_with_mask(&out.color, &mask, &scene.image)
}

/// Adjoint of shading: sums pixel gradients into the face that owns each pixel.
pub fn backprop_to_texture(raster: &Raster, pixel_grad: &Image) -> Result<Vec<[f64; 3]>> {
    if (pixel_grad.height, pixel_grad.width, pixel_grad.channels) != (raster.height, raster.width, 3) {
        return Err(Error::shape(
            format!("({}, {}, 3)", raster.height, raster.width),
            format!("{:?}", pixel_grad.dims()),
        ));
    }
    let mut grad = vec![[0.0; 3]; raster.n_faces];
    for (p, &f) in raster.face_id.iter().enumerate() {
        if f != 0 {
            let g = &mut grad[f as usize - 1];
            let px = pixel_grad.pixel(p);
            g[0] += px[0];
            g[1] += px[1];
            g[2] += px[2];
        }
    }
    Ok(grad)
}
