//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the console.
//! `PANO360_ACCEPTANCE=1,4,7` restricts the run to the listed criteria
//! (all eleven run by default). Criterion 8 trains for 2000 steps with the
//! default configuration and takes the better part of an hour on one core.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pano360::checkpoint::{group_checksums, params_of};
use pano360::dataset::{build_dataset, BuildOptions, DatasetManifest, Split};
use pano360::discriminator::{Discriminator, DiscriminatorConfig};
use pano360::fov::{fov_loss, FovClassSpec, FovNet};
use pano360::generator::{unify, upsample2x, Generator, GeneratorConfig};
use pano360::geometry::{
    cubemap_to_equirect, embed_view_with_fov, equirect_to_cubemap, render_view, EquirectPanorama, FaceKey, FovScaleLaw,
    ValueRange, ViewSet,
};
use pano360::image::Image;
use pano360::metrics::{evaluate, psnr, EvalFov, EvalOptions, PEAK};
use pano360::nn::loss::{adversarial_losses, bce_fake, bce_real, l1};
use pano360::nn::{Adam, Module, Tensor};
use pano360::synthetic::{natural_panorama, write_corpus};
use pano360::training::{infer, train_stage, TrainConfig, TrainOptions};
use pano360::Stage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, amp: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
}

// 1 --------------------------------------------------------------------------

fn band_rows(img: &Image, max_elev: f64) -> Image {
    let h = img.height();
    let rows: Vec<usize> = (0..h)
        .filter(|&y| (90.0 - (y as f64 + 0.5) / h as f64 * 180.0).abs() <= max_elev)
        .collect();
    Image::from_fn(img.width(), rows.len(), |x, y| img.get(x, rows[y]))
}

fn geometry_round_trip() -> Outcome {
    let mut worst_psnr = f64::INFINITY;
    let mut worst_time = 0.0f64;
    for seed in 0..20 {
        let p = natural_panorama(512, 1000 + seed).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let faces = equirect_to_cubemap(&p, 512).map_err(|e| e.to_string())?;
        let back = cubemap_to_equirect(&faces, 512).map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        let q = back.image().map(|v| v.round());
        let db = psnr(&band_rows(p.image(), 60.0), &band_rows(&q, 60.0), PEAK).map_err(|e| e.to_string())?;
        worst_psnr = worst_psnr.min(db);
        worst_time = worst_time.max(secs);
        ensure(db > 30.0, format!("image {seed}: band PSNR {db:.2} dB"))?;
        ensure(secs < 5.0, format!("image {seed}: {secs:.2} s"))?;
    }
    Ok(format!(
        "20 images, worst band PSNR {worst_psnr:.2} dB, slowest {worst_time:.2} s"
    ))
}

// 2 --------------------------------------------------------------------------

fn compass_views_equal_faces() -> Outcome {
    let p = natural_panorama(256, 7).map_err(|e| e.to_string())?;
    let faces = equirect_to_cubemap(&p, 160).map_err(|e| e.to_string())?;
    for key in FaceKey::SIDES {
        let (yaw, pitch) = key.yaw_pitch();
        let v = render_view(&p, yaw, pitch, 90.0, 160).map_err(|e| e.to_string())?;
        ensure(v.data() == faces.face(key).data(), format!("{} differs", key.name()))?;
    }
    Ok("north, west, south, east identical bit-for-bit".into())
}

// 3 --------------------------------------------------------------------------

fn fov_embedding_mask() -> Outcome {
    let s = 256usize;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let view = Image::from_fn(97, 97, |_, _| [0, 1, 2].map(|_| rng.random_range(-0.5f32..0.5)));
    let mut counts = Vec::new();
    for fov in [45.0f64, 60.0, 75.0, 90.0] {
        let block = (s as f64 * (fov.to_radians() / 2.0).tan()).round() as usize;
        let e = embed_view_with_fov(&view, fov, s, -1.0, FovScaleLaw::Tangent).map_err(|e| e.to_string())?;
        // fill pixels found by value, independent of the returned mask
        let by_value = e
            .face
            .data()
            .chunks_exact(3)
            .filter(|p| p.iter().all(|v| *v == -1.0))
            .count();
        let want = s * s - block * block;
        ensure(
            by_value == want && e.fill_count() == want,
            format!(
                "fov {fov}: {by_value} fill pixels by value, {} by mask, want {want}",
                e.fill_count()
            ),
        )?;
        counts.push(format!("{fov}°:{want}"));
    }
    ensure(
        counts.last().map(String::as_str) == Some("90°:0"),
        "fov 90 has fill pixels",
    )?;
    Ok(format!("fill counts {}", counts.join(" ")))
}

// 4 --------------------------------------------------------------------------

fn closed_form_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt = random_tensor(&[3, 32, 64], &mut rng, 1.0);
    let pred = gt.map(|v| v + 0.1);
    let (pix, _) = l1(&pred, &gt).map_err(|e| e.to_string())?;
    ensure((pix - 0.1).abs() < 1e-7, format!("pixel loss {pix}"))?;
    let half = Tensor::<f64>::zeros(&[1, 8, 16]);
    let adv = adversarial_losses(&half, &half).map_err(|e| e.to_string())?;
    ensure(
        (adv.d_loss - 2.0 * 2f64.ln()).abs() < 1e-6,
        format!("adversarial loss {}", adv.d_loss),
    )?;
    let spec = FovClassSpec::default();
    let uniform = Tensor::<f64>::full(&[spec.n_classes()], 0.3);
    let (ce, _) = fov_loss(&uniform, 2).map_err(|e| e.to_string())?;
    ensure(
        (ce - (spec.n_classes() as f64).ln()).abs() < 1e-6,
        format!("cross-entropy {ce}"),
    )?;
    Ok(format!(
        "L1 {pix:.9}, adversarial {:.9}, CE {ce:.9} (N = {})",
        adv.d_loss,
        spec.n_classes()
    ))
}

// 5 --------------------------------------------------------------------------

fn pyramid_inputs(h0: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f32>> {
    (0..3)
        .map(|i| {
            let t = random_tensor(&[3, h0 << i, (2 * h0) << i], rng, 1.0);
            Tensor::from_vec(t.shape(), t.data().iter().map(|v| *v as f32).collect()).unwrap()
        })
        .collect()
}

fn residual_composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GeneratorConfig {
        base_channels: 8,
        ..GeneratorConfig::default()
    };
    let mut g = Generator::<f32>::new(cfg, Stage::Large, &mut rng);
    for s in [Stage::Medium, Stage::Large] {
        g.scale_mut(s).unwrap().zero_output();
    }
    let x = pyramid_inputs(32, &mut rng);
    let outs = g.forward(Stage::Large, &x).map_err(|e| e.to_string())?;
    let mut worst = 0.0f32;
    for s in [Stage::Medium, Stage::Large] {
        let i = s.index();
        let pre = g.scale(s).unwrap().residual(&x[i]);
        ensure(pre.data().iter().all(|v| *v == 0.0), format!("{s} residual not zero"))?;
        let up = upsample2x(&outs[i - 1]);
        let diff = up
            .data()
            .iter()
            .zip(outs[i].data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        worst = worst.max(diff);
        ensure(diff == 0.0, format!("{s}: max abs diff {diff}"))?;
    }
    Ok(format!(
        "medium and large equal the upsampled lower output, max abs diff {worst}"
    ))
}

// 6 --------------------------------------------------------------------------

fn unification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = GeneratorConfig {
        base_channels: 8,
        ..GeneratorConfig::default()
    };
    let mut results = Vec::new();
    let mut g = Generator::<f32>::new(cfg, Stage::Small, &mut rng);
    let x = pyramid_inputs(32, &mut rng);
    for next in [Stage::Medium, Stage::Large] {
        let prev = next.previous().unwrap();
        let before = g.forward(prev, &x[..=prev.index()]).map_err(|e| e.to_string())?;
        let params = params_of(&g);
        let sums = group_checksums(&params);
        let unified = unify(cfg, &params, next, &mut rng).map_err(|e| e.to_string())?;
        let after = unified.forward(prev, &x[..=prev.index()]).map_err(|e| e.to_string())?;
        ensure(
            before == after,
            format!("{prev} outputs changed after unify into {next}"),
        )?;
        let new_sums = group_checksums(&params_of(&unified));
        for (group, sum) in &sums {
            ensure(new_sums.get(group) == Some(sum), format!("{group} checksum changed"))?;
        }
        results.push(format!("{prev}->{next}: {} groups kept", sums.len()));
        g = unified;
    }
    Ok(results.join(", "))
}

// 7 --------------------------------------------------------------------------

/// Relative error with a 1e-6 floor on the scale (parameters whose true
/// gradient is zero, such as biases feeding instance norm, compare near 0).
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare accumulated gradients with central differences on up to `per`
/// entries of every parameter tensor whose name passes `filter`.
fn check_module<M: Module<f64>>(
    m: &mut M,
    filter: &dyn Fn(&str) -> bool,
    per: usize,
    loss: &dyn Fn(&M) -> f64,
) -> (usize, f64) {
    let h = 1e-6;
    let mut grads = Vec::new();
    m.visit("", &mut |n, p| {
        if filter(n) {
            grads.push((n.to_string(), p.grad.clone()));
        }
    });
    let (mut checked, mut worst) = (0, 0.0f64);
    for (name, grad) in grads {
        let step = (grad.len() / per).max(1);
        for i in (0..grad.len()).step_by(step).take(per) {
            let bump = |m: &mut M, d: f64| {
                m.visit_mut("", &mut |n, p| {
                    if n == name {
                        p.value.data_mut()[i] += d;
                    }
                })
            };
            bump(m, h);
            let up = loss(m);
            bump(m, -2.0 * h);
            let down = loss(m);
            bump(m, h);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grad.data()[i], fd));
            checked += 1;
        }
    }
    (checked, worst)
}

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gcfg = GeneratorConfig {
        base_channels: 1,
        ..GeneratorConfig::default()
    };
    let dcfg = DiscriminatorConfig {
        base_channels: 1,
        n_layers: 3,
        ..DiscriminatorConfig::default()
    };
    let mut g = Generator::<f64>::new(gcfg, Stage::Small, &mut rng);
    let mut d = Discriminator::<f64>::new(Stage::Small, dcfg, &mut rng);
    let spec = FovClassSpec::default();
    let mut f = FovNet::<f64>::with_widths(spec, 32, &[2, 2, 2, 2, 2], &mut rng);
    let sizes = (g.param_count(), d.param_count(), f.param_count());
    ensure(
        sizes.0 + sizes.1 <= 1000 && sizes.2 <= 1000,
        format!("models too large: {sizes:?}"),
    )?;

    let x = random_tensor(&[3, 16, 32], &mut rng, 1.0);
    let real = random_tensor(&[3, 16, 32], &mut rng, 1.0);
    // keep the target away from the output so the L1 kinks are not crossed
    let y0 = g.forward(Stage::Small, std::slice::from_ref(&x)).unwrap().remove(0);
    let offsets: Vec<f64> = (0..y0.len())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 } * rng.random_range(0.05..0.15))
        .collect();
    let target = Tensor::from_vec(y0.shape(), y0.data().iter().zip(&offsets).map(|(v, o)| v + o).collect()).unwrap();
    let mut report = Vec::new();

    // pixel loss through the generator
    g.zero_grad();
    let y = g.forward_active_train(Stage::Small, std::slice::from_ref(&x)).unwrap();
    g.backward_active(Stage::Small, &l1(&y, &target).unwrap().1);
    let pix = |g: &Generator<f64>| {
        l1(&g.forward(Stage::Small, std::slice::from_ref(&x)).unwrap()[0], &target)
            .unwrap()
            .0
    };
    let (n, w) = check_module(&mut g, &|_| true, 10, &pix);
    ensure(w < 1e-3, format!("pixel loss: worst relative error {w:.2e}"))?;
    report.push(format!("pixel {n} params {w:.1e}"));

    // discriminator loss w.r.t. discriminator parameters
    let fake = y0.clone();
    d.zero_grad();
    let lr = d.forward_train(&x, &real).unwrap();
    d.backward(&bce_real(&lr).1);
    let lf = d.forward_train(&x, &fake).unwrap();
    d.backward(&bce_fake(&lf).1);
    let d_loss = |d: &Discriminator<f64>| {
        adversarial_losses(&d.forward(&x, &real).unwrap(), &d.forward(&x, &fake).unwrap())
            .unwrap()
            .d_loss
    };
    let (n1, w1) = check_module(&mut d, &|_| true, 10, &d_loss);

    // generator adversarial loss through the discriminator
    g.zero_grad();
    d.zero_grad();
    let y = g.forward_active_train(Stage::Small, std::slice::from_ref(&x)).unwrap();
    let logits = d.forward_train(&x, &y).unwrap();
    let gy = d.backward(&bce_real(&logits).1);
    g.backward_active(Stage::Small, &gy);
    let g_adv = |g: &Generator<f64>| {
        let y = g.forward(Stage::Small, std::slice::from_ref(&x)).unwrap().remove(0);
        bce_real(&d.forward(&x, &y).unwrap()).0
    };
    let (n2, w2) = check_module(&mut g, &|_| true, 10, &g_adv);
    ensure(
        w1 < 1e-3 && w2 < 1e-3,
        format!("adversarial: worst relative errors {w1:.2e} (D), {w2:.2e} (G)"),
    )?;
    report.push(format!("adversarial {} params {:.1e}", n1 + n2, w1.max(w2)));

    // cross-entropy through the FOV classifier
    let views = random_tensor(&[12, 32, 32], &mut rng, 1.0);
    f.zero_grad();
    let logits = f.forward_train(&views);
    f.backward(&fov_loss(&logits, 4).unwrap().1);
    let ce = |f: &FovNet<f64>| fov_loss(&f.forward(&views), 4).unwrap().0;
    let (n3, w3) = check_module(&mut f, &|_| true, 10, &ce);
    ensure(w3 < 1e-3, format!("cross-entropy: worst relative error {w3:.2e}"))?;
    report.push(format!("cross-entropy {n3} params {w3:.1e}"));

    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} (G {} + D {} params, FOV {} params), {secs:.1} s",
        report.join(", "),
        sizes.0,
        sizes.1,
        sizes.2
    ))
}

// 8 --------------------------------------------------------------------------

fn overfit_oracle() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    write_corpus(&root.join("src"), 4, 512, 2000).map_err(|e| e.to_string())?;
    let manifest = build_dataset(&BuildOptions {
        split_ratio: 1.0,
        ..BuildOptions::new(root.join("src"), root.join("ds"))
    })
    .map_err(|e| e.to_string())?;
    let config = TrainConfig::default();
    let t = Instant::now();
    let out = train_stage(&TrainOptions {
        stage: Stage::Small,
        manifest: root.join("ds"),
        config: config.clone(),
        init: None,
        out: root.join("small.ckpt"),
        log: Some(root.join("small.csv")),
        cache_dir: Some(root.join("cache")),
    })
    .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let last_epoch = &out.losses[out.losses.len() - 4..];
    let pix = last_epoch.iter().map(|l| l.pix).sum::<f64>() / 4.0;
    let opts = EvalOptions {
        split: Split::Train,
        stage: Stage::Small,
        fov: EvalFov::Predicted,
    };
    let report = evaluate(&out.checkpoint, &manifest, opts).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} steps in {:.0} s, last-epoch pixel L1 {pix:.4}, evaluate-on-train mean SSIM {:.4}, mean L1 {:.4}, PSNR {:.2} dB",
        out.losses.len(),
        secs,
        report.mean_ssim,
        report.mean_l1,
        report.mean_psnr
    );
    ensure(
        out.losses.len() as u64 == config.steps(Stage::Small),
        format!("ran {} steps", out.losses.len()),
    )?;
    ensure(
        pix < 0.08 && report.mean_ssim > 0.8 && secs < 4.0 * 3600.0,
        detail.clone(),
    )?;
    more_information_check(&out.checkpoint, &manifest);
    Ok(detail)
}

/// Informational: full-band 90° views against 45° views on the overfit
/// model, scored on the side-face band. Printed, not gated.
fn more_information_check(ck: &pano360::checkpoint::StageCheckpoint, m: &DatasetManifest) {
    let r = &m.records[0];
    let gt = match m.load_gt(r, Stage::Small) {
        Ok(g) => g,
        Err(e) => return println!("      supplementary: {e}"),
    };
    let src = EquirectPanorama::new(pano360::dataset::normalize(&gt), ValueRange::Normalized).unwrap();
    let mut line = Vec::new();
    for fov in [90.0, 45.0] {
        let views = FaceKey::SIDES.map(|k| render_view(&src, k.yaw_pitch().0, 0.0, fov, 64).unwrap());
        let vs = ViewSet::new(views, Some(fov)).unwrap();
        let out = infer(&vs, ck, Stage::Small, Some(fov)).unwrap();
        let db = psnr(&band_rows(out.panorama.image(), 35.0), &band_rows(&gt, 35.0), PEAK).unwrap();
        line.push(format!("fov {fov}: {db:.2} dB"));
    }
    println!(
        "      supplementary, side-band PSNR on a training panorama: {}",
        line.join(", ")
    );
}

// 9 --------------------------------------------------------------------------

fn flat_sample(class: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let level = -0.9 + 0.3 * class as f32 + rng.random_range(-0.03f32..0.03);
    Tensor::full(&[12, 128, 128], level)
}

fn fov_classifier_sanity() -> Outcome {
    let spec = FovClassSpec::default();
    let n = spec.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = FovNet::<f32>::new(spec, 128, &mut rng);
    let mut adam = Adam::new(TrainConfig::default().adam());
    let train: Vec<(usize, Tensor<f32>)> = (0..500)
        .map(|_| {
            let c = rng.random_range(0..n);
            (c, flat_sample(c, &mut rng))
        })
        .collect();
    for (c, x) in &train {
        net.zero_grad();
        let logits = net.forward_train(x);
        net.backward(&fov_loss(&logits, *c).unwrap().1);
        adam.step(&mut net, "fov");
    }
    let held_out: Vec<(usize, Tensor<f32>)> = (0..500)
        .map(|_| {
            let c = rng.random_range(0..n);
            (c, flat_sample(c, &mut rng))
        })
        .collect();
    let correct = held_out
        .iter()
        .filter(|(c, x)| {
            pano360::fov::argmax(&net.forward(x).data().iter().map(|v| *v as f64).collect::<Vec<_>>()) == *c
        })
        .count();
    let acc = correct as f64 / 500.0;
    ensure(
        acc > 0.95,
        format!("held-out accuracy {:.1}% after 500 steps", 100.0 * acc),
    )?;
    Ok(format!(
        "held-out accuracy {:.1}% after 500 steps on 500 samples, {n} classes",
        100.0 * acc
    ))
}

// 10 / 11: command line -------------------------------------------------------

fn cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_pano360"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PANO360_CACHE")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "`pano360 {}` exited {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn read(p: impl AsRef<Path>) -> Result<Vec<u8>, String> {
    std::fs::read(p.as_ref()).map_err(|e| format!("{}: {e}", p.as_ref().display()))
}

fn first_views(root: &Path, ds: &str) -> Result<Vec<String>, String> {
    let m = DatasetManifest::load(root.join(ds)).map_err(|e| e.to_string())?;
    let r = m.split(Split::Test).first().copied().unwrap_or(&m.records[0]).clone();
    Ok(r.views.iter().map(|v| format!("{ds}/{v}")).collect())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    cli(
        &[
            "synth", "--seed", "11", "--out", "src", "--count", "3", "--height", "128",
        ],
        d,
    )?;
    std::fs::write(
        d.join("slice.cfg"),
        "steps_per_stage = 100,1,1\nbase_channels = 8\ndisc_channels = 8\ncheckpoint_every = 0\n",
    )
    .map_err(|e| e.to_string())?;
    for run in ["a", "b"] {
        let ds = format!("ds_{run}");
        cli(
            &[
                "dataset",
                "build",
                "--seed",
                "4",
                "--src",
                "src",
                "--out",
                &ds,
                "--view-size",
                "64",
                "--split",
                "0.7",
            ],
            d,
        )?;
        let ck = format!("{run}.ckpt");
        cli(
            &[
                "train",
                "--seed",
                "4",
                "--stage",
                "small",
                "--manifest",
                &ds,
                "--config",
                "slice.cfg",
                "--out",
                &ck,
            ],
            d,
        )?;
        let views = first_views(d, &ds)?;
        let out = format!("{run}.png");
        let mut args = vec!["infer", "--ckpt", ck.as_str(), "--out", out.as_str(), "--views"];
        args.extend(views.iter().map(String::as_str));
        cli(&args, d)?;
    }
    let same = |a: &str, b: &str| -> Result<(), String> {
        ensure(read(d.join(a))? == read(d.join(b))?, format!("{a} and {b} differ"))
    };
    same("ds_a/manifest.jsonl", "ds_b/manifest.jsonl")?;
    let m = DatasetManifest::load(d.join("ds_a")).map_err(|e| e.to_string())?;
    for r in &m.records {
        for p in r.views.iter().chain([&r.gt.s, &r.gt.m, &r.gt.l]) {
            same(&format!("ds_a/{p}"), &format!("ds_b/{p}"))?;
        }
    }
    same("a.ckpt.losses.csv", "b.ckpt.losses.csv")?;
    same("a.ckpt", "b.ckpt")?;
    same("a.png", "b.png")?;
    let rows = String::from_utf8(read(d.join("a.ckpt.losses.csv"))?)
        .unwrap()
        .lines()
        .count()
        - 1;
    ensure(rows == 100, format!("{rows} logged steps"))?;
    Ok(format!(
        "manifest + {} sample files, 100-step loss log, checkpoint and inferred panorama byte-identical",
        m.records.len() * 7
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let t = Instant::now();
    cli(
        &[
            "synth", "--seed", "21", "--out", "src", "--count", "5", "--height", "256",
        ],
        d,
    )?;
    cli(&["dataset", "build", "--seed", "21", "--src", "src", "--out", "ds"], d)?;
    std::fs::write(
        d.join("toy.cfg"),
        "# reduced budgets and widths for the integration run\nsteps_per_stage = 8,3,2\nbase_channels = 16\ndisc_channels = 16\n",
    )
    .map_err(|e| e.to_string())?;
    cli(
        &[
            "train",
            "--stage",
            "small",
            "--manifest",
            "ds",
            "--config",
            "toy.cfg",
            "--out",
            "ck/s.ckpt",
        ],
        d,
    )?;
    cli(
        &[
            "train",
            "--stage",
            "medium",
            "--manifest",
            "ds",
            "--config",
            "toy.cfg",
            "--init",
            "ck/s.ckpt",
            "--out",
            "ck/m.ckpt",
        ],
        d,
    )?;
    cli(
        &[
            "train",
            "--stage",
            "large",
            "--manifest",
            "ds",
            "--config",
            "toy.cfg",
            "--init",
            "ck/m.ckpt",
            "--out",
            "ck/l.ckpt",
        ],
        d,
    )?;
    let views = first_views(d, "ds")?;
    let mut args = vec!["infer", "--ckpt", "ck/l.ckpt", "--out", "pano.png", "--views"];
    args.extend(views.iter().map(String::as_str));
    cli(&args, d)?;
    let eval = cli(
        &[
            "eval",
            "--ckpt",
            "ck/l.ckpt",
            "--manifest",
            "ds",
            "--split",
            "test",
            "--out",
            "eval/report.csv",
            "--plots",
        ],
        d,
    )?;
    let pano = Image::load(d.join("pano.png")).map_err(|e| e.to_string())?;
    ensure(
        (pano.width(), pano.height()) == (1024, 512),
        format!("panorama is {}x{}", pano.width(), pano.height()),
    )?;
    for f in [
        "report.csv",
        "report_ssim_hist.csv",
        "report_psnr_hist.csv",
        "report_ssim_hist.png",
    ] {
        ensure(d.join("eval").join(f).exists(), format!("missing eval/{f}"))?;
    }
    let summary = eval.lines().next().unwrap_or("").trim().to_string();
    Ok(format!(
        "1024x512 panorama written; eval: {summary}; {:.0} s",
        t.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "geometry round trip", geometry_round_trip),
        (2, "compass views equal cube faces", compass_views_equal_faces),
        (3, "FOV embedding mask", fov_embedding_mask),
        (4, "closed-form losses", closed_form_losses),
        (5, "residual composition", residual_composition),
        (6, "unification", unification),
        (7, "gradient checks", gradient_checks),
        (8, "overfit oracle", overfit_oracle),
        (9, "FOV classifier sanity", fov_classifier_sanity),
        (10, "determinism", determinism),
        (11, "end-to-end", end_to_end),
    ];
    let only: Option<Vec<u32>> = std::env::var("PANO360_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut results: BTreeMap<u32, bool> = BTreeMap::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}): {detail} [{secs:.1} s]"),
            Err(why) => println!("FAIL criterion {id:>2} ({name}): {why} [{secs:.1} s]"),
        }
        results.insert(id, outcome.is_ok());
        if outcome.is_err() {
            failed.push(id);
        }
    }
    let passed = results.values().filter(|v| **v).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
