//! Analytic gradients against central differences.

use std::sync::Arc;

use camoforge_core::camera::CameraParams;
use camoforge_core::detector::init_detector;
use camoforge_core::image::Image;
use camoforge_core::losses::{loss_color, loss_first, loss_smooth};
use camoforge_core::mask::make_face_mask;
use camoforge_core::mesh::Mesh;
use camoforge_core::dac::second_stage_pass;
use camoforge_core::render::rasterize;
use camoforge_core::scene::{generate_scene, SceneKind};
use camoforge_core::texture::TextureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

/// Relative error of the directional derivative along a random direction.
fn directional_error(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shifted = |s: f64| x.iter().zip(&d).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let numeric = (f(&shifted(H)) - f(&shifted(-H))) / (2.0 * H);
    let analytic: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-10)
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn cam(rng: &mut ChaCha8Rng, n: usize) -> CameraParams {
    CameraParams {
        distance: rng.gen_range(2.5..5.0),
        elevation_deg: rng.gen_range(0.0..45.0),
        azimuth_deg: rng.gen_range(0.0..360.0),
        image_size: (n, n),
    }
}

#[test]
fn smooth_and_first_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mesh = Mesh::boxperson();
    for _ in 0..5 {
        let img = random_image(12, 10, &mut rng);
        let (_, g) = loss_smooth(&img).unwrap();
        let f = |x: &[f64]| loss_smooth(&Image::from_vec(12, 10, 3, x.to_vec()).unwrap()).unwrap().0;
        assert!(directional_error(&img.data, &g.data, f, &mut rng) < 1e-6);

        let r = Arc::new(rasterize(&mesh, &cam(&mut rng, 32)).unwrap());
        let t = TextureMap::random(mesh.n_faces(), &mut rng);
        let scene = random_image(32, 32, &mut rng);
        let out = r.shade(&t).unwrap();
        let (_, g) = loss_first(&[out], &[&scene]).unwrap();
        let back = camoforge_core::render::backprop_to_texture(&r, &g[0]).unwrap();
        let f = |x: &[f64]| {
            let tex = TextureMap { colors: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
            loss_first(&[r.shade(&tex).unwrap()], &[&scene]).unwrap().0
        };
        assert!(directional_error(t.as_flat(), back.as_flattened(), f, &mut rng) < 1e-6);
    }
}

#[test]
fn color_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mask = make_face_mask(&[1, 4, 7, 9], 10).unwrap();
    for _ in 0..5 {
        let g = TextureMap::random(10, &mut rng);
        let l = TextureMap::random(10, &mut rng);
        let (_, grad) = loss_color(&g, &l, &mask).unwrap();
        let f = |x: &[f64]| {
            let tex = TextureMap { colors: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
            loss_color(&g, &tex, &mask).unwrap().0
        };
        assert!(directional_error(l.as_flat(), grad.as_flattened(), f, &mut rng) < 1e-6);
    }
}

#[test]
fn detector_input_and_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let net = init_detector(seed, 16);
        let img = random_image(16, 16, &mut rng);
        let (_, g) = net.objectness_and_grad(&img).unwrap();
        let f = |x: &[f64]| net.objectness(&Image::from_vec(16, 16, 3, x.to_vec()).unwrap()).unwrap();
        assert!(directional_error(&img.data, &g.data, f, &mut rng) < 1e-5);

        let pg = net.objectness_param_grad(&img).unwrap();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.params_mut().copy_from_slice(p);
            n.objectness(&img).unwrap()
        };
        assert!(directional_error(net.params(), &pg, f, &mut rng) < 1e-5);
    }
}

#[test]
fn stage_two_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mesh = Mesh::boxperson();
    let n = mesh.n_faces();
    let scene = generate_scene(SceneKind::Forest, 9, (32, 32)).unwrap();
    for seed in 0..5 {
        let net = init_detector(seed, 16);
        let r = Arc::new(rasterize(&mesh, &cam(&mut rng, 32)).unwrap());
        let idx: Vec<usize> = (1..=n).filter(|i| i % 3 != 0).collect();
        let mask = make_face_mask(&idx, n).unwrap();
        let g = TextureMap::random(n, &mut rng);
        let l = TextureMap::random(n, &mut rng);
        let pass = second_stage_pass(&r, &scene, &g, &l, &mask, &net, 0.3, 1e-3).unwrap();
        let f = |x: &[f64]| {
            let tex = TextureMap { colors: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
            second_stage_pass(&r, &scene, &g, &tex, &mask, &net, 0.3, 1e-3).unwrap().loss.total
        };
        assert!(directional_error(l.as_flat(), pass.grad_local.as_flattened(), f, &mut rng) < 1e-5);
    }
}
