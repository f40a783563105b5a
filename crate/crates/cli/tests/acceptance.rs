//! Acceptance gates. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any gate fails.
//!
//! `CAMOFORGE_GATES=1,4,6` restricts the run to the listed gates.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use camoforge_core::camera::{CameraParams, CameraRanges};
use camoforge_core::config::{derive_seed, RunConfig};
use camoforge_core::dac::{second_stage_pass, train_stage1, DacConfig, PreparedSet};
use camoforge_core::dataset::{build_dataset, Split};
use camoforge_core::de::{de_search, AdditiveFitness, DeConfig, Fitness};
use camoforge_core::detector::{init_detector, DetectorNet};
use camoforge_core::image::Image;
use camoforge_core::losses::{loss_color, loss_first, loss_smooth};
use camoforge_core::mask::{compose_texture, make_face_mask, FaceMask};
use camoforge_core::mesh::Mesh;
use camoforge_core::metrics::{asr, asr_from_flags, detection_rate, masked_mse, p_at_05};
use camoforge_core::pipeline::{
    random_face_subset, sweep, train_surrogate, AttackMode, Attacker, DacFitness, MaskSpec, Scenario, SweepAxis,
    SweepPoint, FACE_FRACTIONS, LAMBDA1_VALUES,
};
use camoforge_core::render::{backprop_to_texture, compose_with_mask, rasterize};
use camoforge_core::scene::{constant_scene, generate_scene, SceneKind};
use camoforge_core::texture::{SceneTextures, TextureMap};
use camoforge_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Default scenario plus its trained surrogate, built once per seed.
struct Fixture {
    cfg: RunConfig,
    scenario: Scenario,
    net: DetectorNet,
    train_accuracy: f64,
}

impl Fixture {
    fn attacker<'a>(&'a self, cfg: &'a RunConfig) -> Attacker<'a> {
        Attacker {
            cfg,
            scenario: &self.scenario,
            net: &self.net,
            exec: Exec::default(),
        }
    }
}

#[derive(Default)]
struct Fixtures(BTreeMap<u64, Arc<Fixture>>);

impl Fixtures {
    fn get(&mut self, seed: u64) -> Arc<Fixture> {
        self.0
            .entry(seed)
            .or_insert_with(|| {
                let cfg = RunConfig {
                    seed,
                    ..RunConfig::default()
                };
                let scenario = Scenario::build(&cfg, Exec::default()).expect("scenario");
                let (net, report) = train_surrogate(&cfg, &scenario, Exec::default()).expect("detector");
                Arc::new(Fixture {
                    cfg,
                    scenario,
                    net,
                    train_accuracy: report.train_accuracy,
                })
            })
            .clone()
    }
}

// ---- 1: gradients -------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const FD_CASES: usize = 20;

/// Relative error between the analytic and central-difference directional
/// derivatives along a random direction.
fn fd_error(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let at = |s: f64| x.iter().zip(&d).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let numeric = (f(&at(FD_STEP)) - f(&at(-FD_STEP))) / (2.0 * FD_STEP);
    let analytic: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12)
}

fn tex(x: &[f64]) -> TextureMap {
    TextureMap {
        colors: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
    }
}

fn rand_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_vec(h, w, 3, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn rand_camera(rng: &mut ChaCha8Rng, n: usize) -> CameraParams {
    CameraRanges {
        distance: (2.5, 6.0),
        ..CameraRanges::default()
    }
    .sample(rng, (n, n))
}

fn gate_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mesh = Mesh::boxperson();
    let n = mesh.n_faces();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for case in 0..FD_CASES as u64 {
        let r = Arc::new(rasterize(&mesh, &rand_camera(&mut rng, 64)).unwrap());
        let scene = rand_image(64, 64, &mut rng);
        let t = TextureMap::random(n, &mut rng);
        let (_, g) = loss_first(&[r.shade(&t).unwrap()], &[&scene]).unwrap();
        let back = backprop_to_texture(&r, &g[0]).unwrap();
        let f = |x: &[f64]| loss_first(&[r.shade(&tex(x)).unwrap()], &[&scene]).unwrap().0;
        note("L_first", fd_error(t.as_flat(), back.as_flattened(), f, &mut rng));

        let idx: Vec<usize> = (1..=n).filter(|i| (i + case as usize) % 2 == 0).collect();
        let mask = make_face_mask(&idx, n).unwrap();
        let (tg, tl) = (TextureMap::random(n, &mut rng), TextureMap::random(n, &mut rng));
        let (_, g) = loss_color(&tg, &tl, &mask).unwrap();
        let f = |x: &[f64]| loss_color(&tg, &tex(x), &mask).unwrap().0;
        note("L_color", fd_error(tl.as_flat(), g.as_flattened(), f, &mut rng));

        let img = rand_image(24, 20, &mut rng);
        let (_, g) = loss_smooth(&img).unwrap();
        let f = |x: &[f64]| loss_smooth(&Image::from_vec(24, 20, 3, x.to_vec()).unwrap()).unwrap().0;
        note("L_smooth", fd_error(&img.data, &g.data, f, &mut rng));

        let net = init_detector(case, 32);
        let img = rand_image(32, 32, &mut rng);
        let (_, g) = net.objectness_and_grad(&img).unwrap();
        let f = |x: &[f64]| net.objectness(&Image::from_vec(32, 32, 3, x.to_vec()).unwrap()).unwrap();
        note("objectness/input", fd_error(&img.data, &g.data, f, &mut rng));

        let pg = net.objectness_param_grad(&img).unwrap();
        let f = |p: &[f64]| {
            let mut m = net.clone();
            m.params_mut().copy_from_slice(p);
            m.objectness(&img).unwrap()
        };
        note("objectness/params", fd_error(net.params(), &pg, f, &mut rng));

        let bg = generate_scene(SceneKind::ALL[case as usize % 3], case, (64, 64)).unwrap();
        let pass = second_stage_pass(&r, &bg, &tg, &tl, &mask, &net, 5e-4, 1e-7).unwrap();
        let f = |x: &[f64]| {
            second_stage_pass(&r, &bg, &tg, &tex(x), &mask, &net, 5e-4, 1e-7)
                .unwrap()
                .loss
                .total
        };
        note("L_second->texture", fd_error(tl.as_flat(), pass.grad_local.as_flattened(), f, &mut rng));
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(max <= 1e-4, format!("{FD_CASES} cases each, worst rel err: {detail}"))
}

// ---- 2: adjoint ---------------------------------------------------------

fn gate_adjoint() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mesh = Mesh::boxperson().subdivided(2).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let r = Arc::new(rasterize(&mesh, &rand_camera(&mut rng, 128)).unwrap());
        let u = TextureMap {
            colors: (0..r.n_faces).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect(),
        };
        let mut v = rand_image(128, 128, &mut rng);
        v.data.iter_mut().for_each(|x| *x = 2.0 * *x - 1.0);
        let lhs = r.shade(&u).unwrap().color.dot(&v);
        let back = backprop_to_texture(&r, &v).unwrap();
        let rhs: f64 = u.as_flat().iter().zip(back.as_flattened()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    verdict(worst <= 1e-12, format!("50 pairs, max |<Ru,v> - <u,R*v>| = {worst:.1e}"))
}

// ---- 3: compositing -----------------------------------------------------

fn gate_compositing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (o, s) = (rand_image(16, 16, &mut rng), rand_image(16, 16, &mut rng));
    let mixed: Vec<bool> = (0..256).map(|_| rng.gen()).collect();
    let mut ok = compose_with_mask(&o, &[false; 256], &s).unwrap() == s
        && compose_with_mask(&o, &[true; 256], &s).unwrap() == o;
    let out = compose_with_mask(&o, &mixed, &s).unwrap();
    ok &= (0..256).all(|p| out.pixel(p) == if mixed[p] { o.pixel(p) } else { s.pixel(p) });

    let n = 40;
    let (tg, tl) = (TextureMap::random(n, &mut rng), TextureMap::random(n, &mut rng));
    let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    ok &= compose_texture(&tg, &tl, &FaceMask::from_bits(vec![false; n])).unwrap() == tg;
    ok &= compose_texture(&tg, &tl, &FaceMask::full(n).unwrap()).unwrap() == tl;
    let t = compose_texture(&tg, &tl, &FaceMask::from_bits(bits.clone())).unwrap();
    ok &= (0..n).all(|f| t.colors[f] == if bits[f] { tl.colors[f] } else { tg.colors[f] });
    verdict(ok, "image and texture compositing, m/M in {0, 1, mixed}, bit-exact".into())
}

// ---- 4: stage-1 convergence --------------------------------------------

fn gate_stage1() -> Verdict {
    let color = [0.3, 0.6, 0.2];
    let scenes = Arc::new(vec![constant_scene(color, (128, 128), 0)]);
    let mesh = Mesh::boxperson();
    let data = build_dataset(scenes, 8, 5, &CameraRanges::default(), Split::Train).unwrap();
    let set = PreparedSet::new(&mesh, data, Exec::default()).unwrap();
    let cfg = DacConfig {
        epochs_stage1: 200,
        batch_size: set.len(),
        lr: 0.01,
        seed: 9,
        ..DacConfig::default()
    };
    let init = TextureMap::random(set.n_faces, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (fit, report) = train_stage1(&set, &cfg).unwrap();
    let mse = |t: &TextureMap| {
        let v: Vec<f64> = (0..set.len())
            .filter_map(|i| masked_mse(&set.rasters[i].shade(t).unwrap(), set.scene_image(i)).unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut visible = vec![false; set.n_faces];
    for r in &set.rasters {
        for (f, c) in r.coverage().into_iter().enumerate() {
            visible[f] |= c > 0;
        }
    }
    let worst = (0..set.n_faces)
        .filter(|&f| visible[f])
        .flat_map(|f| (0..3).map(move |c| (f, c)))
        .map(|(f, c)| (fit.colors[f][c] - color[c]).abs())
        .fold(0.0, f64::max);
    let (m0, m1) = (mse(&init), mse(&fit));
    let drop = 1.0 - m1 / m0;
    verdict(
        report.steps.len() <= 200 && worst <= 0.05 && drop >= 0.9,
        format!(
            "{} steps, {} visible faces, max color error {worst:.4}, masked MSE {m0:.4} -> {m1:.2e} ({:.1}% drop)",
            report.steps.len(),
            visible.iter().filter(|&&v| v).count(),
            100.0 * drop
        ),
    )
}

// ---- 5: stage-2 attack success -----------------------------------------

fn gate_stage2(fx: &mut Fixtures) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let f = fx.get(seed);
        let att = f.attacker(&f.cfg);
        let s1 = att.run(AttackMode::Stage1Only, &MaskSpec::Full).unwrap().eval.asr;
        let full = att.run(AttackMode::DacFull, &MaskSpec::Full).unwrap().eval.asr;
        ok &= f.train_accuracy >= 0.95 && full >= 0.70 && full > s1;
        parts.push(format!("seed {seed}: acc {:.3}, stage1-only {s1:.3}, dac-full {full:.3}", f.train_accuracy));
    }
    verdict(ok, parts.join("; "))
}

// ---- 6: DE vs enumeration ----------------------------------------------

fn gate_de_oracle() -> Verdict {
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 600));
        let fitness = AdditiveFitness {
            weights: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let mut best = f64::INFINITY;
        for a in 1..=8 {
            for b in a + 1..=8 {
                best = best.min(fitness.evaluate(&[a, b]).unwrap());
            }
        }
        let cfg = DeConfig {
            pop_size: 10,
            max_iters: 15,
            crossover_rate: 0.6,
            mutation_rate: 0.6,
            n_selected: 2,
            seed,
        };
        let (found, _) = de_search(&cfg, 8, &fitness, Exec::default()).unwrap();
        if found.fitness == Some(best) {
            hits += 1;
        }
    }
    verdict(hits >= 9, format!("optimum over 28 subsets found in {hits}/10 seeds"))
}

// ---- 7: DE beats random subsets ----------------------------------------

/// Reduced inner budget shared by the search-based gates.
fn lean(cfg: &RunConfig, pop: usize, iters: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.de.pop_size = pop;
    c.de.max_iters = iters;
    c.de.budget.train_subset = Some(80);
    c
}

fn gate_de_vs_random(fx: &mut Fixtures) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let f = fx.get(seed);
        let cfg = lean(&f.cfg, 10, 4);
        let att = f.attacker(&cfg);
        let (global, _) = att.stage1_universal().unwrap();
        let globals = SceneTextures::Universal(global);
        let fitness = DacFitness::new(&cfg, &f.scenario.train, &globals, &f.net);
        let n = f.scenario.n_faces();
        let k = cfg.n_selected(n);
        let random: Vec<f64> = (0..20)
            .map(|r| fitness.evaluate(&random_face_subset(n, k, derive_seed(seed, 700 + r)).unwrap()).unwrap())
            .collect();
        let mean = random.iter().sum::<f64>() / random.len() as f64;
        let (best, report) = de_search(&cfg.de(n), n, &fitness, Exec::default()).unwrap();
        let de = best.fitness.unwrap();
        wins += usize::from(de <= mean);
        parts.push(format!("seed {seed}: de {de:.3} vs random {mean:.3} ({} evals)", report.evaluations));
    }
    verdict(wins >= 4, format!("{wins}/5 seeds; {}", parts.join("; ")))
}

// ---- 8: monotone sweeps -------------------------------------------------

fn inversions(xs: &[f64], increasing: bool) -> usize {
    xs.windows(2)
        .filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] })
        .count()
}

fn gate_sweeps(fx: &mut Fixtures) -> Verdict {
    let f = fx.get(0);
    let att = f.attacker(&f.cfg);
    let series = |pts: &[SweepPoint]| {
        (
            pts.iter().map(|p| p.eval.asr).collect::<Vec<_>>(),
            pts.iter().map(|p| p.eval.mse_naturalness).collect::<Vec<_>>(),
        )
    };
    let (fa, fm) = series(&sweep(&att, SweepAxis::Faces, &FACE_FRACTIONS).unwrap());
    let (la, lm) = series(&sweep(&att, SweepAxis::Lambda1, &LAMBDA1_VALUES).unwrap());
    let face_inv = inversions(&fa, true) + inversions(&fm, true);
    let lambda_inv = inversions(&la, false) + inversions(&lm, false);
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.prec$}", prec = p)).collect::<Vec<_>>().join("/");
    verdict(
        face_inv <= 1 && lambda_inv <= 1,
        format!(
            "faces: asr {} mse {} ({face_inv} inversion(s)); lambda1: asr {} mse {} ({lambda_inv} inversion(s))",
            fmt(&fa, 3),
            fmt(&fm, 0),
            fmt(&la, 3),
            fmt(&lm, 0)
        ),
    )
}

// ---- 9: adaptive vs universal ------------------------------------------

fn gate_adaptive(fx: &mut Fixtures) -> Verdict {
    let (mut mse_wins, mut asr_close) = (0, 0);
    let (mut su, mut sa) = (0.0, 0.0);
    let mut parts = Vec::new();
    for seed in 0..5 {
        let f = fx.get(seed);
        let cfg = lean(&f.cfg, 6, 2);
        let att = f.attacker(&cfg);
        let u = att.run(AttackMode::DeDac, &MaskSpec::Search).unwrap().eval;
        let a = att.run(AttackMode::Adaptive, &MaskSpec::Search).unwrap().eval;
        mse_wins += usize::from(a.mse_naturalness <= u.mse_naturalness);
        asr_close += usize::from((a.asr - u.asr).abs() <= 0.15);
        su += u.asr / 5.0;
        sa += a.asr / 5.0;
        parts.push(format!(
            "seed {seed}: asr {:.3}/{:.3} mse {:.0}/{:.0}",
            u.asr, a.asr, u.mse_naturalness, a.mse_naturalness
        ));
    }
    verdict(
        mse_wins >= 4 && asr_close >= 4,
        format!(
            "de-dac/adaptive; mse lower in {mse_wins}/5, asr within 0.15 in {asr_close}/5 (means {su:.3}/{sa:.3}); {}",
            parts.join("; ")
        ),
    )
}

// ---- 10: metric definitions ---------------------------------------------

fn gate_metrics() -> Verdict {
    let (t, f) = (true, false);
    // (clean, adv, asr, p@0.5 of adv), counted by hand
    let cases: [(&[bool], &[bool], f64, f64); 10] = [
        (&[t, t, t, t], &[f, f, f, f], 1.0, 0.0),
        (&[t, t, t, t], &[t, t, t, t], 0.0, 1.0),
        (&[t, t, t, t], &[t, f, t, f], 0.5, 0.5),
        (&[t, f, t, f], &[f, t, f, t], 1.0, 0.5),
        (&[t, t, f, f], &[t, f, t, f], 0.5, 0.5),
        (&[t, t, t, f], &[f, t, t, t], 1.0 / 3.0, 0.75),
        (&[t], &[f], 1.0, 0.0),
        (&[t, t, t, t, t], &[f, f, f, t, t], 0.6, 0.4),
        (&[f, f, t, t, t, t, t, t], &[t, t, f, f, f, t, t, t], 0.5, 0.625),
        (&[t, t, t, t, t, t, t, t, t, t], &[f, t, f, t, f, t, f, t, f, f], 0.6, 0.4),
    ];
    let mut ok = true;
    for (clean, adv, a, p) in cases {
        ok &= asr_from_flags(clean, adv).unwrap() == a && detection_rate(adv).unwrap() == p;
    }
    ok &= asr_from_flags(&[f, f], &[f, t]).is_err();

    // the same counting against a real detector
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let net = init_detector(3, 16);
    let imgs: Vec<Image> = (0..24).map(|_| rand_image(32, 32, &mut rng)).collect();
    let thr = {
        let mut s: Vec<f64> = imgs.iter().map(|i| net.score(i).unwrap()).collect();
        s.sort_by(f64::total_cmp);
        (s[11] + s[12]) / 2.0
    };
    let (clean, adv) = imgs.split_at(12);
    let hits = |v: &[Image]| v.iter().filter(|i| net.score(i).unwrap() >= thr).count();
    let det: Vec<bool> = clean.iter().map(|i| net.score(i).unwrap() >= thr).collect();
    let evaded = det
        .iter()
        .zip(adv)
        .filter(|(&d, i)| d && net.score(i).unwrap() < thr)
        .count();
    let n_det = det.iter().filter(|&&d| d).count();
    if n_det > 0 {
        ok &= asr(&net, clean, adv, thr).unwrap() == evaded as f64 / n_det as f64;
    }
    ok &= p_at_05(&net, adv, thr).unwrap() == hits(adv) as f64 / 12.0;

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let adv: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let s = asr_from_flags(&vec![true; n], &adv).unwrap() + detection_rate(&adv).unwrap();
        worst = worst.max((s - 1.0).abs());
    }
    ok &= worst <= 1e-15;
    verdict(
        ok,
        format!("10 counting cases exact, detector-backed case exact, max |asr + p - 1| = {worst:.1e}"),
    )
}

// ---- 11: determinism ----------------------------------------------------

fn run_all(bin: &str, config: &Path, out: &Path, jobs: &str) -> bool {
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-data"],
        vec!["train-detector"],
        vec!["attack", "--mode", "stage1-only"],
        vec!["attack", "--mode", "dac-full"],
        vec!["attack", "--mode", "dac-masked"],
        vec!["attack", "--mode", "de-dac"],
        vec!["attack", "--mode", "adaptive"],
        vec!["sweep", "--axis", "faces"],
        vec!["sweep", "--axis", "lambda1"],
        vec!["eval"],
    ];
    steps.iter().all(|args| {
        Command::new(bin)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(out)
            .args(["--jobs", jobs])
            .args(args)
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    })
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn gate_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_camoforge");
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    std::fs::write(
        &config,
        r#"{"seed": 5, "n_scenes": 2, "image_size": 64, "train_renders": 4, "test_renders": 2,
            "detector": {"input_size": 32, "epochs": 2},
            "dac": {"epochs_stage1": 1, "epochs_stage2": 1},
            "de": {"pop_size": 4, "max_iters": 1, "budget": {"epochs_stage2": 1, "eval_subset": 4}}}"#,
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if !run_all(bin, &config, &a, "2") || !run_all(bin, &config, &b, "1") {
        return verdict(false, "a subcommand failed".into());
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let textures = ta.keys().filter(|k| k.ends_with(".json") && k.contains("texture")).count();
    verdict(
        ta.len() == tb.len() && differing.is_empty() && textures > 0 && ta.contains_key("results.csv"),
        format!(
            "{} files ({textures} texture files, results.csv) over 10 subcommands, {} differ",
            ta.len(),
            differing.len()
        ),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("CAMOFORGE_GATES")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut fx = Fixtures::default();
    let gates: Vec<(u32, &str, Box<dyn FnOnce(&mut Fixtures) -> Verdict>)> = vec![
        (1, "gradient correctness", Box::new(|_| gate_gradients())),
        (2, "adjoint identity", Box::new(|_| gate_adjoint())),
        (3, "compositing exactness", Box::new(|_| gate_compositing())),
        (4, "stage-1 convergence", Box::new(|_| gate_stage1())),
        (5, "stage-2 attack success", Box::new(gate_stage2)),
        (6, "DE oracle equivalence", Box::new(|_| gate_de_oracle())),
        (7, "DE beats random", Box::new(gate_de_vs_random)),
        (8, "monotone sweeps", Box::new(gate_sweeps)),
        (9, "adaptive trend", Box::new(gate_adaptive)),
        (10, "metric definitions", Box::new(|_| gate_metrics())),
        (11, "determinism", Box::new(|_| gate_determinism())),
    ];
    let mut failed = 0;
    for (id, name, gate) in gates {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = gate(&mut fx);
        let secs = start.elapsed().as_secs_f64();
        failed += usize::from(!v.pass);
        println!(
            "[{}] {id:>2} {name} ({secs:.1}s): {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance gate(s) failed");
        std::process::exit(1);
    }
}
