//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Positional arguments filter criteria by name:
//!
//! `cargo test -p outpaint-core --test acceptance -- overfit`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use outpaint::evaluation::{frechet_distance, FeatureStats, StatsAccumulator};
use outpaint::layout_data::{
    cityscapes_merge, cityscapes_split, composite_tensor, BinaryMask, ConstantSegmenter, DatasetProfile, ImageSample,
    Manifest, Pixels, SemanticLayout, Split,
};
use outpaint::networks::{
    Checkpoint, DecoderEntry, DiscriminatorSpec, Generator, GeneratorSpec, LayerInfo, Mode, MultiScaleDiscriminator,
};
use outpaint::objectives::{
    ce_loss, default_perceptual_weights, hinge_d_loss, hinge_g_loss, l1_loss, perceptual_loss, scalar, FeatureExtractor,
};
use outpaint::pipeline::{
    outpaint, ImageGenerator, LayoutGenerator, Models, NetworkImageGenerator, NetworkLayoutGenerator, OutpaintRequest,
};
use outpaint::trainer::{generator_spec, lr_at, AblationMode, TrainConfig, TrainSet, TrainStage, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn toy_split(split: Split) -> Vec<ImageSample> {
    let manifest = Manifest::load(&toy_dir().join("manifest.tsv")).unwrap();
    manifest.load_samples(split, &DatasetProfile::desk()).unwrap()
}

// ---------------------------------------------------------------- compositing

struct NoiseLayout {
    num_classes: usize,
    seed: u64,
}

impl LayoutGenerator for NoiseLayout {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn generate_layout(&self, i_masked: &Tensor, _: &Tensor, _: &Tensor) -> outpaint::Result<Tensor> {
        let (n, _, h, w) = i_masked.dims4()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let v: Vec<f32> = (0..n * self.num_classes * h * w).map(|_| rng.random_range(-20.0..20.0)).collect();
        Ok(Tensor::from_vec(v, (n, self.num_classes, h, w), i_masked.device())?)
    }

    fn fingerprint(&self) -> String {
        format!("noise-layout-{}", self.seed)
    }
}

struct NoiseImage {
    seed: u64,
}

impl ImageGenerator for NoiseImage {
    fn generate_image(&self, i_masked: &Tensor, _: &Tensor, _: &Tensor) -> outpaint::Result<Tensor> {
        let (n, c, h, w) = i_masked.dims4()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let v: Vec<f32> = (0..n * c * h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Ok(Tensor::from_vec(v, (n, c, h, w), i_masked.device())?)
    }

    fn fingerprint(&self) -> String {
        format!("noise-image-{}", self.seed)
    }
}

fn random_pixels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Pixels {
    Pixels::new(h, w, (0..h * w * 3).map(|_| rng.random_range(-1.0f32..=1.0)).collect()).unwrap()
}

fn random_layout(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: usize) -> SemanticLayout {
    SemanticLayout::new(h, w, (0..h * w).map(|_| rng.random_range(0..classes as u16)).collect(), classes).unwrap()
}

fn compositing() -> Outcome {
    let profile = DatasetProfile::desk();
    let c = profile.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cases = 1000;
    for case in 0..cases {
        if case % 2 == 0 {
            // Whole pipeline with random stubs: the known columns come back untouched.
            let h = 32 * rng.random_range(1..=2);
            let wk = rng.random_range(1..=64);
            let fraction = match rng.random_range(0..3) {
                0 => 0.25,
                1 => 0.5,
                _ => rng.random_range(0.05..0.9),
            };
            let cropped = random_pixels(&mut rng, h, wk);
            let layout = random_layout(&mut rng, h, wk, c);
            let models = Models::new(
                profile.clone(),
                Arc::new(NoiseLayout { num_classes: c, seed: rng.random() }),
                Arc::new(NoiseImage { seed: rng.random() }),
                Arc::new(ConstantSegmenter { class: 0, num_classes: c }),
            )
            .map_err(e)?;
            let mut request = OutpaintRequest::new(format!("case{case}"), cropped.clone(), fraction);
            request.layout = Some(layout.clone());
            let out = outpaint(&request, &models).map_err(e)?;
            let kept = out.image.crop(0, 0, h, wk).map_err(e)?;
            ensure!(kept.data() == cropped.data(), "case {case}: known pixels changed ({h}x{wk}, {fraction})");
            let kept = out.layout.crop(0, 0, h, wk).map_err(e)?;
            ensure!(kept.labels() == layout.labels(), "case {case}: known layout changed");
            ensure!(out.mask.known_count() == h * wk, "case {case}: mask has {} known pixels", out.mask.known_count());
        } else {
            // Tensor form with arbitrary masks.
            let (n, ch, h, w) = (rng.random_range(1..3), rng.random_range(1..9), rng.random_range(1..12), rng.random_range(1..12));
            let len = n * ch * h * w;
            let known: Vec<f32> = (0..len).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let generated: Vec<f32> = (0..len).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let m: Vec<f32> = (0..n * h * w).map(|_| f32::from(rng.random_bool(0.5) as u8)).collect();
            let dev = Device::Cpu;
            let out = composite_tensor(
                &Tensor::from_vec(generated.clone(), (n, ch, h, w), &dev).map_err(e)?,
                &Tensor::from_vec(known.clone(), (n, ch, h, w), &dev).map_err(e)?,
                &Tensor::from_vec(m.clone(), (n, 1, h, w), &dev).map_err(e)?,
            )
            .map_err(e)?
            .flatten_all()
            .map_err(e)?
            .to_vec1::<f32>()
            .map_err(e)?;
            for (i, v) in out.iter().enumerate() {
                let (b, rest) = (i / (ch * h * w), i % (h * w));
                let want = if m[b * h * w + rest] == 1.0 { known[i] } else { generated[i] };
                ensure!(v.to_bits() == want.to_bits(), "case {case}: element {i} is {v}, want {want}");
            }
        }
    }
    Ok(format!("{cases} cases bit-exact"))
}

// --------------------------------------------------------------- architecture

fn check_table(what: &str, got: &[LayerInfo], want: &[(usize, usize, usize, usize, bool, bool)]) -> Outcome {
    ensure!(got.len() == want.len(), "{what}: {} layers, want {}", got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let have = (g.kernel, g.stride, g.in_channels, g.out_channels, g.spectral_norm, g.batch_norm);
        ensure!(have == *w, "{what} layer {i}: {have:?}, want {w:?}");
    }
    Ok(String::new())
}

fn architecture() -> Outcome {
    let dev = Device::Cpu;
    let classes = DatasetProfile::ade20k().num_classes;
    let input_channels = 3 + classes + 1;

    // (kernel, stride, out)
    let encoder = [
        (7, 1, 64),
        (3, 1, 128),
        (3, 2, 128),
        (3, 1, 256),
        (3, 2, 256),
        (3, 1, 512),
        (3, 2, 512),
        (3, 1, 1024),
        (3, 2, 1024),
        (3, 1, 1024),
        (3, 2, 1024),
    ];
    let mut want = Vec::new();
    let mut cin = input_channels;
    for (k, s, out) in encoder {
        want.push((k, s, cin, out, true, true));
        cin = out;
    }
    let up = DecoderEntry::Upsample;
    let block = |out_channels| DecoderEntry::Block { out_channels };
    let decoder = vec![
        block(1024),
        up,
        block(1024),
        block(1024),
        up,
        block(512),
        up,
        block(256),
        up,
        block(128),
        up,
        block(64),
    ];

    let seg = Generator::new(GeneratorSpec::layout_stage(classes), 0, &dev, DType::F32).map_err(e)?;
    check_table("layout encoder", &seg.encoder_layers(), &want)?;
    ensure!(seg.decoder_table() == decoder, "layout decoder: {:?}", seg.decoder_table());
    let last = seg.layers().last().cloned().unwrap();
    ensure!(
        (last.kernel, last.stride, last.in_channels, last.out_channels) == (3, 1, 64, classes),
        "layout output conv: {last:?}"
    );
    let x = Tensor::zeros((1, input_channels, 256, 256), DType::F32, &dev).map_err(e)?;
    let latent = seg.encode(&x, Mode::Eval).map_err(e)?;
    ensure!(latent.dims() == [1, 1024, 8, 8], "latent {:?}", latent.dims());
    let y = seg.forward(&x, None, Mode::Eval).map_err(e)?;
    ensure!(y.dims() == [1, classes, 256, 256], "layout output {:?}", y.dims());
    drop((seg, latent, y));

    let img = Generator::new(GeneratorSpec::image_stage(classes), 0, &dev, DType::F32).map_err(e)?;
    check_table("image encoder", &img.encoder_layers(), &want)?;
    ensure!(img.decoder_table() == decoder, "image decoder: {:?}", img.decoder_table());
    let last = img.layers().last().cloned().unwrap();
    ensure!((last.kernel, last.stride, last.out_channels) == (3, 1, 3), "image output conv: {last:?}");
    let cond = Tensor::zeros((1, classes + 1, 256, 256), DType::F32, &dev).map_err(e)?;
    let y = img.forward(&x, Some(&cond), Mode::Eval).map_err(e)?;
    ensure!(y.dims() == [1, 3, 256, 256], "image output {:?}", y.dims());
    drop((img, y, x, cond));

    let d_in = 3 + classes + 1;
    let d = MultiScaleDiscriminator::new(DiscriminatorSpec::standard(d_in), 0, &dev, DType::F32).map_err(e)?;
    let table = [(4, 2, 64), (4, 2, 128), (4, 2, 256), (4, 1, 512), (4, 1, 1)];
    let mut want = Vec::new();
    let mut cin = d_in;
    for (i, (k, s, out)) in table.into_iter().enumerate() {
        let normalized = i != 0 && i != table.len() - 1;
        want.push((k, s, cin, out, normalized, normalized));
        cin = out;
    }
    for scale in 0..2 {
        check_table(&format!("discriminator scale {scale}"), &d.scale_layers(scale), &want)?;
    }
    let x = Tensor::zeros((1, d_in, 256, 256), DType::F32, &dev).map_err(e)?;
    let logits = d.forward(&x, Mode::Eval).map_err(e)?;
    ensure!(logits[0].dims() == [1, 1, 30, 30], "scale 0 logits {:?}", logits[0].dims());
    Ok("tables match; 256 -> 8x8x1024 -> 256; 30x30 patches".into())
}

// ----------------------------------------------------------------- loss oracles

struct TanhStages;

impl FeatureExtractor for TanhStages {
    fn num_stages(&self) -> usize {
        5
    }

    fn features(&self, images: &Tensor) -> outpaint::Result<Vec<Tensor>> {
        (1..=5).map(|k| Ok((images * k as f64)?.tanh()?)).collect()
    }

    fn id(&self) -> String {
        "tanh-stages".into()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn hinge_d_ref(real: &[Vec<f64>], fake: &[Vec<f64>]) -> f64 {
    let per: f64 = real
        .iter()
        .zip(fake)
        .map(|(r, f)| mean(r.iter().map(|x| (1.0 - x).max(0.0))) + mean(f.iter().map(|x| (1.0 + x).max(0.0))))
        .sum();
    per / real.len() as f64
}

fn hinge_g_ref(fake: &[Vec<f64>]) -> f64 {
    fake.iter().map(|f| -mean(f.iter().copied())).sum::<f64>() / fake.len() as f64
}

/// Logits `(C, H, W)` flattened, one-hot given by `target[pixel]`.
fn ce_ref(logits: &[f64], target: &[usize], region: Option<&[f64]>, c: usize) -> f64 {
    let hw = target.len();
    let (mut total, mut count) = (0.0, 0.0);
    for p in 0..hw {
        let weight = region.map_or(1.0, |r| r[p]);
        let max = (0..c).map(|k| logits[k * hw + p]).fold(f64::MIN, f64::max);
        let lse = max + (0..c).map(|k| (logits[k * hw + p] - max).exp()).sum::<f64>().ln();
        total += weight * (lse - logits[target[p] * hw + p]);
        count += weight;
    }
    total / count.max(1.0)
}

fn l1_ref(a: &[f64], b: &[f64]) -> f64 {
    mean(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}

fn perceptual_ref(a: &[f64], b: &[f64]) -> f64 {
    let weights = [0.5, 0.25, 0.125, 0.0625, 0.03125];
    (1..=5)
        .zip(weights)
        .map(|(k, w)| {
            let k = k as f64;
            w * mean(a.iter().zip(b).map(|(x, y)| ((k * x).tanh() - (k * y).tanh()).abs()))
        })
        .sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// Values bounded away from `kinks` by at least `gap`.
fn away_from(rng: &mut ChaCha8Rng, n: usize, kinks: &[f64], gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-3.0..3.0);
            if kinks.iter().all(|k| (v - k).abs() >= gap) {
                break v;
            }
        })
        .collect()
}

fn t64(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

/// Checks `loss(v)` against its finite-difference gradient in every coordinate.
fn gradient_check(
    name: &str,
    v: &[f64],
    shape: &[usize],
    loss: impl Fn(&Tensor) -> outpaint::Result<Tensor>,
) -> std::result::Result<f64, String> {
    let var = Var::from_tensor(&t64(v, shape)).map_err(e)?;
    let grads = loss(var.as_tensor()).map_err(e)?.backward().map_err(e)?;
    let analytic = grads
        .get(var.as_tensor())
        .ok_or(format!("{name}: no gradient"))?
        .flatten_all()
        .map_err(e)?
        .to_vec1::<f64>()
        .map_err(e)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let at = |d: f64| {
            let mut w = v.to_vec();
            w[i] += d;
            scalar(&loss(&t64(&w, shape)).unwrap()).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let err = (analytic[i] - fd).abs();
        ensure!(err <= 1e-3 * fd.abs() + 1e-10, "{name}: coordinate {i} analytic {} vs fd {fd}", analytic[i]);
        if fd != 0.0 {
            worst = worst.max(err / fd.abs());
        }
    }
    Ok(worst)
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_value: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let shape = [1usize, 1, 4, 4];
    let img_shape = [1usize, 3, 4, 4];
    let c = 5;
    for trial in 0..20 {
        // Two scales of patch logits, away from the hinge kinks at ±1.
        let real: Vec<Vec<f64>> = (0..2).map(|_| away_from(&mut rng, 16, &[1.0, -1.0], 0.1)).collect();
        let fake: Vec<Vec<f64>> = (0..2).map(|_| away_from(&mut rng, 16, &[1.0, -1.0], 0.1)).collect();
        let rt: Vec<Tensor> = real.iter().map(|v| t64(v, &shape)).collect();
        let ft: Vec<Tensor> = fake.iter().map(|v| t64(v, &shape)).collect();
        let got = scalar(&hinge_d_loss(&rt, &ft).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, hinge_d_ref(&real, &fake)));
        let got = scalar(&hinge_g_loss(&ft).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, hinge_g_ref(&fake)));

        let logits: Vec<f64> = (0..c * 16).map(|_| rng.random_range(-4.0..4.0)).collect();
        let target: Vec<usize> = (0..16).map(|_| rng.random_range(0..c)).collect();
        let mut one_hot = vec![0.0; c * 16];
        for (p, &k) in target.iter().enumerate() {
            one_hot[k * 16 + p] = 1.0;
        }
        let region: Vec<f64> = (0..16).map(|p| f64::from(p % 4 >= 2)).collect();
        let lt = t64(&logits, &[1, c, 4, 4]);
        let oh = t64(&one_hot, &[1, c, 4, 4]);
        let rg = t64(&region, &shape);
        let got = scalar(&ce_loss(&lt, &oh, None).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, ce_ref(&logits, &target, None, c)));
        let got = scalar(&ce_loss(&lt, &oh, Some(&rg)).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, ce_ref(&logits, &target, Some(&region), c)));

        let a: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| {
                let d: f64 = rng.random_range(0.1..0.8);
                if rng.random_bool(0.5) { x + d } else { x - d }
            })
            .collect();
        let (at, bt) = (t64(&a, &img_shape), t64(&b, &img_shape));
        let got = scalar(&l1_loss(&at, &bt).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, l1_ref(&a, &b)));
        let weights = default_perceptual_weights();
        let got = scalar(&perceptual_loss(&at, &bt, &TanhStages, &weights).map_err(e)?).map_err(e)?;
        worst_value = worst_value.max(rel(got, perceptual_ref(&a, &b)));

        if trial < 5 {
            let other = ft.clone();
            worst_grad = worst_grad.max(gradient_check("hinge_d real", &real[0], &shape, |x| {
                hinge_d_loss(&[x.clone(), rt[1].clone()], &other)
            })?);
            worst_grad = worst_grad.max(gradient_check("hinge_d fake", &fake[1], &shape, |x| {
                hinge_d_loss(&rt, &[ft[0].clone(), x.clone()])
            })?);
            worst_grad = worst_grad.max(gradient_check("hinge_g", &fake[0], &shape, |x| {
                hinge_g_loss(&[x.clone(), ft[1].clone()])
            })?);
            worst_grad = worst_grad.max(gradient_check("ce", &logits, &[1, c, 4, 4], |x| ce_loss(x, &oh, None))?);
            worst_grad = worst_grad.max(gradient_check("ce region", &logits, &[1, c, 4, 4], |x| {
                ce_loss(x, &oh, Some(&rg))
            })?);
            worst_grad = worst_grad.max(gradient_check("l1", &a, &img_shape, |x| l1_loss(x, &bt))?);
            worst_grad = worst_grad.max(gradient_check("perceptual", &a, &img_shape, |x| {
                perceptual_loss(x, &bt, &TanhStages, &weights)
            })?);
        }
    }
    ensure!(worst_value <= 1e-6, "worst value relative error {worst_value:e}");
    Ok(format!("values within {worst_value:.1e}, gradients within {worst_grad:.1e}"))
}

// -------------------------------------------------------------------- schedule

fn schedule() -> Outcome {
    let config = TrainConfig::default();
    let spots = [(0, 1e-4, 4e-4), (200, 1e-4, 4e-4), (250, 5e-5, 2e-4), (300, 0.0, 0.0)];
    for (epoch, g, d) in spots {
        let (lg, ld) = lr_at(epoch, &config);
        ensure!((lg - g).abs() <= 1e-12 && (ld - d).abs() <= 1e-12, "epoch {epoch}: ({lg}, {ld}), want ({g}, {d})");
    }
    for epoch in 0..=300u32 {
        let factor = if epoch <= 200 { 1.0 } else { (300.0 - f64::from(epoch)) / 100.0 };
        let (lg, ld) = lr_at(epoch, &config);
        ensure!(
            (lg - 1e-4 * factor).abs() <= 1e-12 && (ld - 4e-4 * factor).abs() <= 1e-12,
            "epoch {epoch}: ({lg}, {ld})"
        );
    }
    Ok("spot values and every epoch exact".into())
}

// ------------------------------------------------------------------ toy overfit

/// 20-step moving averages sampled at the end of each 20-step window.
fn window_averages(values: &[f64]) -> Vec<f64> {
    values.chunks_exact(20).map(|w| w.iter().sum::<f64>() / 20.0).collect()
}

fn overfit_stage(stage: TrainStage, key: &str) -> std::result::Result<(Vec<f64>, Duration), String> {
    let profile = DatasetProfile::desk();
    let data = TrainSet::new(toy_split(Split::Train)).map_err(e)?;
    ensure!(data.len() == 8, "toy train split has {} images", data.len());
    let mut trainer =
        Trainer::new(stage, TrainConfig::desk(), profile.num_classes, profile.width_divisor, &Device::Cpu).map_err(e)?;
    let start = Instant::now();
    let mut values = Vec::with_capacity(200);
    for _ in 0..200 {
        let out = trainer.step(&data).map_err(e)?;
        values.push(out.record.losses[key]);
    }
    Ok((window_averages(&values), start.elapsed()))
}

fn toy_overfit() -> Outcome {
    let mut total = Duration::ZERO;
    let mut report = Vec::new();
    for (stage, key) in [(TrainStage::Layout, "ce"), (TrainStage::Image, "l1")] {
        let (ma, took) = overfit_stage(stage, key)?;
        total += took;
        let (first, last) = (ma[0], *ma.last().unwrap());
        let pretty: Vec<String> = ma.iter().map(|v| format!("{v:.4}")).collect();
        ensure!(
            ma.windows(2).all(|w| w[1] <= w[0]),
            "{key} moving average not monotone: {}",
            pretty.join(" ")
        );
        ensure!(last <= 0.5 * first, "{key} fell only from {first:.4} to {last:.4}");
        report.push(format!("{key} {first:.4}->{last:.4} ({:.0}%, {:.0}s)", 100.0 * (1.0 - last / first), took.as_secs_f64()));
    }
    ensure!(total < Duration::from_secs(30 * 60), "took {:.0}s", total.as_secs_f64());
    Ok(report.join(", "))
}

// ---------------------------------------------------------------- FID machinery

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..d).map(|j| rng.random_range(-1.0..1.0) + 0.1 * (i * j) as f64 / n as f64).collect())
        .collect()
}

fn accumulate(rows: &[Vec<f64>], d: usize) -> StatsAccumulator {
    let mut acc = StatsAccumulator::new(d);
    for r in rows {
        acc.push(r).unwrap();
    }
    acc
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn fid_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 6;
    let rows = random_features(&mut rng, 200, d);
    let stats = accumulate(&rows, d).finish();
    let same = frechet_distance(&stats, &stats).map_err(e)?;
    ensure!(same.abs() <= 1e-6, "identical stats give {same:e}");

    // Equal covariances: only the mean term remains.
    let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
        }
    }
    let m1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let m2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let dist2: f64 = m1.iter().zip(&m2).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = FeatureStats { mean: m1, cov: cov.clone(), count: 1000 };
    let sb = FeatureStats { mean: m2, cov, count: 1000 };
    let fid = frechet_distance(&sa, &sb).map_err(e)?;
    ensure!(rel(fid, dist2) <= 1e-4, "equal covariances: {fid} vs {dist2}");

    // Three shards merged equal one pass.
    let mut merged = accumulate(&rows[..50], d);
    merged.merge(&accumulate(&rows[50..137], d)).map_err(e)?;
    merged.merge(&accumulate(&rows[137..], d)).map_err(e)?;
    let merged = merged.finish();
    ensure!(merged.count == stats.count, "counts {} vs {}", merged.count, stats.count);
    let (em, ec) = (max_rel(&merged.mean, &stats.mean), max_rel(&merged.cov, &stats.cov));
    ensure!(em <= 1e-8 && ec <= 1e-8, "shard merge differs: mean {em:e}, cov {ec:e}");
    Ok(format!("self {same:.1e}; mean term rel {:.1e}; merge {:.1e}", rel(fid, dist2), em.max(ec)))
}

// --------------------------------------------------------------- cityscapes

fn cityscapes_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let h = rng.random_range(1..=24);
        let w = 2 * h;
        let classes = rng.random_range(1..=40);
        let mask = BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..=1)).collect()).map_err(e)?;
        let sample = ImageSample::new(
            random_pixels(&mut rng, h, w),
            random_layout(&mut rng, h, w, classes),
            mask,
            format!("frame{case}"),
        )
        .map_err(e)?;
        let (left, right) = cityscapes_split(&sample).map_err(e)?;
        ensure!(left.width() == h && right.width() == h, "case {case}: halves are not squares");
        let back = cityscapes_merge(&left, &right).map_err(e)?;
        ensure!(
            back.pixels.data().iter().map(|v| v.to_bits()).eq(sample.pixels.data().iter().map(|v| v.to_bits())),
            "case {case}: pixels differ"
        );
        ensure!(back == sample, "case {case}: roundtrip differs");
    }
    Ok("100 rasters bit-exact".into())
}

// -------------------------------------------------------------- determinism

fn trajectory(stage: TrainStage, data: &TrainSet) -> std::result::Result<(Vec<String>, Vec<u8>), String> {
    let profile = DatasetProfile::desk();
    let config = TrainConfig { seed: 17, ..TrainConfig::desk() };
    let mut t = Trainer::new(stage, config, profile.num_classes, profile.width_divisor, &Device::Cpu).map_err(e)?;
    let mut records = Vec::new();
    for _ in 0..10 {
        let r = t.step(data).map_err(e)?.record;
        records.push(serde_json::to_string(&r).map_err(e)?);
    }
    Ok((records, t.checkpoint().map_err(e)?.to_bytes().map_err(e)?))
}

fn generator_from(bytes: &[u8], stage: TrainStage) -> std::result::Result<Generator, String> {
    let ck = Checkpoint::from_bytes(bytes, &Device::Cpu).map_err(e)?;
    let profile = DatasetProfile::desk();
    let spec = generator_spec(stage, profile.num_classes, profile.width_divisor);
    let g = Generator::new(spec, 99, &Device::Cpu, DType::F32).map_err(e)?;
    ck.restore_generator("g", &g).map_err(e)?;
    Ok(g)
}

fn determinism() -> Outcome {
    let data = TrainSet::new(toy_split(Split::Train)).map_err(e)?;
    let mut finals = Vec::new();
    for stage in [TrainStage::Layout, TrainStage::Image] {
        let (ra, ca) = trajectory(stage, &data)?;
        let (rb, cb) = trajectory(stage, &data)?;
        for (i, (a, b)) in ra.iter().zip(&rb).enumerate() {
            ensure!(a == b, "{stage:?} step {i}: {a} vs {b}");
        }
        ensure!(ca == cb, "{stage:?}: final state differs after 10 steps");
        finals.push(ca);
    }

    let profile = DatasetProfile::desk();
    let models = Models::new(
        profile.clone(),
        Arc::new(NetworkLayoutGenerator::new(generator_from(&finals[0], TrainStage::Layout)?).map_err(e)?),
        Arc::new(NetworkImageGenerator::new(generator_from(&finals[1], TrainStage::Image)?).map_err(e)?),
        Arc::new(ConstantSegmenter { class: 0, num_classes: profile.num_classes }),
    )
    .map_err(e)?;
    for sample in toy_split(Split::Val) {
        let (h, w) = (sample.height(), sample.width());
        let wk = w * 3 / 4;
        let mut request = OutpaintRequest::new(sample.source_id.clone(), sample.pixels.crop(0, 0, h, wk).map_err(e)?, 0.25);
        request.layout = Some(sample.layout.crop(0, 0, h, wk).map_err(e)?);
        let a = outpaint(&request, &models).map_err(e)?;
        let b = outpaint(&request, &models).map_err(e)?;
        ensure!(a.image == b.image && a.layout == b.layout, "{}: repeated eval differs", sample.source_id);
    }
    Ok("10-step trajectories and eval outputs identical".into())
}

// --------------------------------------------------------------- ablations

fn ablation_plumbing() -> Outcome {
    let profile = DatasetProfile::desk();
    let c = profile.num_classes;
    let data = TrainSet::new(toy_split(Split::Train)).map_err(e)?;
    let mut report = Vec::new();
    for (mode, channels) in [(AblationMode::Noseg, 4), (AblationMode::Segconcat, 4 + c)] {
        let stage = TrainStage::resolve(1, mode).map_err(e)?;
        let config = TrainConfig { ablation_mode: mode, batch_size: 4, ..TrainConfig::desk() };
        let mut t = Trainer::new(stage, config, c, profile.width_divisor, &Device::Cpu).map_err(e)?;
        let first = t.generator().layers()[0].clone();
        ensure!(first.in_channels == channels, "{mode:?}: first conv takes {} channels", first.in_channels);
        for _ in 0..3 {
            let r = t.step(&data).map_err(e)?.record;
            ensure!(r.losses.values().all(|v| v.is_finite()), "{mode:?}: non-finite losses {:?}", r.losses);
        }
        report.push(format!("{mode:?} in={channels}"));
    }
    Ok(report.join(", "))
}

// ------------------------------------------------------------------- harness

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("compositing", compositing),
        ("architecture", architecture),
        ("loss_oracles", loss_oracles),
        ("schedule", schedule),
        ("fid_machinery", fid_machinery),
        ("cityscapes_roundtrip", cityscapes_roundtrip),
        ("determinism", determinism),
        ("ablation_plumbing", ablation_plumbing),
        ("toy_overfit", toy_overfit),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
