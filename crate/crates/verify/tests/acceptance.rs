//! Acceptance criteria. Each criterion prints one PASS or FAIL line; the
//! process fails when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use edgelab::cifar::{load_cifar10, resolve_dir, CifarSplits, DATA_ENV, TEST_FILE, TRAIN_FILES};
use edgelab::cli::{run, Cli};
use edgelab::commands::classifier_config;
use edgelab::config::{row_name, Table1Settings};
use edgelab::{commands, runners};
use edgelab_core::datasets::{Augmentation, CIFAR_CLASSES, CIFAR_RECORD};
use edgelab_core::model::FirstLayer;
use edgelab_core::probe::{delta_negative, optimal_threshold, ProbeConfig, StimulusSize};
use edgelab_core::rng::{stream, uniform, StreamRng};
use edgelab_core::robustness::{evaluate_robustness, RobustnessReport};
use edgelab_core::trainer::train_classifier;
use edgelab_core::transforms::{color_shift, hsv_to_rgb, negative, rgb_to_hsv, ShiftBound};
use edgelab_core::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const SEED: u64 = 7;

/// Edge-vs-noise accuracy bands of the five architectures, 25 repetitions.
fn table1() -> Outcome {
    let start = Instant::now();
    let mut settings = Table1Settings {
        seed: SEED,
        ..Table1Settings::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    let mut mean = |row: Table1Row, n: usize| -> Result<f64, String> {
        settings.rows = vec![row_name(row)];
        let report = runners::table1(&commands::table1_config(&settings, row)).map_err(|e| e.to_string())?;
        let m = report.mean_at(n).ok_or("missing checkpoint")?;
        let i = report.checkpoints.iter().position(|&c| c == n).unwrap();
        notes.push(format!("{} n={n}: {m:.3}±{:.3}", report.label, report.std[i]));
        Ok(m)
    };
    let standard = mean(Table1Row::Standard, 1000)?;
    ok &= (0.40..=0.60).contains(&standard);
    ok &= mean(Table1Row::Layered(1), 500)? >= 0.80;
    ok &= mean(Table1Row::Layered(3), 1000)? >= 0.97;
    let edge = Table1Row::Edge(5);
    ok &= mean(edge, 100)? >= 0.95;
    ok &= mean(edge, 1000)? >= 0.98;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    notes.push(format!("{secs:.1}s"));
    verdict(ok, notes.join("; "))
}

/// σ̂ and tail mass of Δ over 10⁶ noise patches.
fn noise_statistics() -> Outcome {
    let d = runners::noise_stats(1_000_000, 5, 0.4, SEED).map_err(|e| e.to_string())?;
    let ok = (0.127..=0.131).contains(&d.std) && (0.997..=0.9995).contains(&d.inside);
    verdict(
        ok,
        format!(
            "sigma {:.5} (analytic {:.5}), P(|D|<0.4) {:.5}",
            d.std,
            commands::analytic_sigma(5),
            d.inside
        ),
    )
}

/// Centred-patch form against the zero-mean-kernel form on single patches.
fn zero_mean_equivalence() -> Outcome {
    let mut rng = stream(SEED);
    let mut worst = 0.0f32;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=7);
        let limit = (1.0 / (3 * k * k) as f64).sqrt() as f32;
        let weight = Tensor::from_fn(&[1, k, k], |_| rng.gen_range(-limit..limit));
        let alpha = Tensor::from_fn(&[1, 3], |_| rng.gen_range(0.05f32..3.0));
        let bias = Tensor::from_fn(&[1], |_| rng.gen_range(-1.0f32..1.0));
        let layer = EdgeDetectLayer::from_parts(weight, &alpha, bias, Padding::None).map_err(|e| e.to_string())?;
        let patch = Tensor::from_fn(&[k, k, 3], |_| rng.gen::<f32>());
        let a = edge_forward(&patch, &layer).map_err(|e| e.to_string())?;
        let b = edge_forward_zeromean(&patch, &layer).map_err(|e| e.to_string())?;
        worst = worst.max(a.max_abs_diff(&b).map_err(|e| e.to_string())?);
    }
    verdict(worst < 1e-6, format!("max |difference| {worst:e} over 1000 draws"))
}

fn relative_change(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    let scale = a.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE);
    a.max_abs_diff(b).unwrap() / scale
}

/// Channel-shift and negation invariance of an edge layer on random images.
fn edge_invariances() -> Outcome {
    let mut rng = stream(SEED);
    let (mut shift_worst, mut neg_worst) = (0.0f32, 0.0f32);
    for i in 0..200 {
        let pad = if i % 2 == 0 { Padding::Reflect } else { Padding::None };
        let mut layer = EdgeDetectLayer::<f32>::new(8, 5, 3, pad, &mut rng);
        layer.beta = Tensor::from_fn(&[8, 3], |_| rng.gen_range(-3.0..3.0));
        let x = Tensor::from_fn(&[12, 12, 3], |_| rng.gen::<f32>());
        let shift: [f32; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let shifted = Tensor::from_fn(&[12, 12, 3], |j| x.data()[j] + shift[j % 3]);
        let base = layer.forward(&x).unwrap();
        shift_worst = shift_worst.max(relative_change(&base, &layer.forward(&shifted).unwrap()));
        neg_worst = neg_worst.max(relative_change(&base, &layer.forward(&negative(&x).unwrap()).unwrap()));
    }
    verdict(
        shift_worst < 1e-5 && neg_worst < 1e-5,
        format!("relative change: channel shift {shift_worst:e}, negation {neg_worst:e} over 200 images"),
    )
}

struct CifarRun {
    data: CifarSplits,
    edge: Model<f32>,
    regular: Model<f32>,
    train_secs: f64,
}

static CIFAR: OnceLock<Result<CifarRun, String>> = OnceLock::new();

/// Both classifiers trained on the 10k-image subset (shared by criteria 4 and 7).
fn cifar_run() -> Result<&'static CifarRun, String> {
    CIFAR
        .get_or_init(|| {
            let dir = resolve_dir(None).map_err(|e| e.to_string())?;
            let data = load_cifar10(&dir, 0.2, 0.1, SEED).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let config = classifier_config(10, 64, 1e-3, Augmentation::None, SEED);
            let train = |first| {
                let model = Model::build(&ModelSpec::cifar(first, CIFAR_CLASSES), &mut stream(SEED)).map_err(|e| e.to_string())?;
                train_classifier(model, &data.train, &data.val, &config)
                    .map(|t| t.model)
                    .map_err(|e| e.to_string())
            };
            let edge = train(FirstLayer::Edge)?;
            let regular = train(FirstLayer::Regular)?;
            Ok(CifarRun {
                data,
                edge,
                regular,
                train_secs: start.elapsed().as_secs_f64(),
            })
        })
        .as_ref()
        .map_err(|e| format!("{e} (CIFAR-10 binaries are read from ${DATA_ENV})"))
}

/// Δ_negative of the trained edge layer against a trained regular first layer.
fn cifar_delta_negative() -> Outcome {
    let run = cifar_run()?;
    let idx: Vec<usize> = (0..1000.min(run.data.test.len())).collect();
    let images = run.data.test.select(&idx, run.data.test.split).map_err(|e| e.to_string())?.images;
    let edge = delta_negative(&run.edge, 0, &images).map_err(|e| e.to_string())?;
    let regular = delta_negative(&run.regular, 0, &images).map_err(|e| e.to_string())?;
    let regular_second = delta_negative(&run.regular, 4, &images).map_err(|e| e.to_string())?;
    verdict(
        edge < 1e-5 && edge < regular,
        format!("edge layer {edge:e}, regular first layer {regular:e} (second layer {regular_second:e}), {} test images", idx.len()),
    )
}

const FD_STEP: f64 = 1e-5;

enum Target {
    Binary(Vec<f64>),
    Classes(Vec<usize>),
}

fn loss_of(model: &Model<f64>, x: &Tensor<f64>, target: &Target, trainable_input: bool) -> (f64, Option<(Vec<Tensor<f64>>, Tensor<f64>)>) {
    let mut g = Graph::new();
    let xv = if trainable_input { g.param(x.clone()) } else { g.constant(x.clone()) };
    let f = model.forward(&mut g, xv, ForwardOptions::train()).unwrap();
    let loss = match target {
        Target::Binary(t) => g.bce_with_logits(f.output, t).unwrap(),
        Target::Classes(c) => g.cross_entropy(f.output, c).unwrap(),
    };
    let value = g.value(loss).unwrap().item().unwrap();
    if !trainable_input {
        return (value, None);
    }
    let grads = g.backward(loss).unwrap();
    let params = f
        .params
        .iter()
        .map(|&p| grads.get_or_zeros(p, g.value(p).unwrap().shape()))
        .collect();
    (value, Some((params, grads.get_or_zeros(xv, x.shape()))))
}

/// Worst relative error, number of checked and of skipped (nonsmooth) coordinates.
fn gradient_check(spec: &ModelSpec, batch: usize, seed: u64) -> (f64, usize, usize) {
    let mut rng = stream(seed);
    let mut model = Model::<f64>::build(spec, &mut rng).unwrap();
    for p in model.parameters_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = uniform(&mut rng, -1.0, 1.0));
    }
    let [h, w, c] = spec.input;
    let x = Tensor::from_fn(&[batch, h, w, c], |_| uniform(&mut rng, 0.0, 1.0));
    let target = match spec.loss {
        LossKind::Binary => Target::Binary((0..batch).map(|i| (i % 2) as f64).collect()),
        LossKind::Categorical => Target::Classes((0..batch).map(|i| i % 3).collect()),
    };
    let (f0, grads) = loss_of(&model, &x, &target, true);
    let (param_grads, input_grad) = grads.unwrap();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    let mut judge = |analytic: f64, plus: f64, minus: f64| {
        let forward = (plus - f0) / FD_STEP;
        let backward = (f0 - minus) / FD_STEP;
        if (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()).max(1.0) {
            skipped += 1;
            return;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
        checked += 1;
    };
    for (slot, g) in param_grads.iter().enumerate() {
        for i in 0..g.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.parameters_mut()[slot].data_mut()[i] += delta;
                loss_of(&m, &x, &target, false).0
            };
            judge(g.data()[i], eval(FD_STEP), eval(-FD_STEP));
        }
    }
    for i in 0..x.len() {
        let eval = |delta: f64| {
            let mut xx = x.clone();
            xx.data_mut()[i] += delta;
            loss_of(&model, &xx, &target, false).0
        };
        judge(input_grad.data()[i], eval(FD_STEP), eval(-FD_STEP));
    }
    (worst, checked, skipped)
}

/// Every layer kind inside small networks, gradients of the training loss
/// with respect to all parameters and the input.
fn gradients() -> Outcome {
    let conv = |filters, kernel, padding| LayerSpec::Conv2d { filters, kernel, padding };
    let edge = |units, kernel, padding| LayerSpec::EdgeDetect { units, kernel, padding };
    let net = |name: &str, input: [usize; 3], layers: Vec<LayerSpec>, loss| ModelSpec {
        name: name.into(),
        input,
        layers,
        loss,
    };
    use LayerSpec::{BatchNorm, Dense, Flatten, MaxPool, Relu};
    let specs = [
        net(
            "edge+bn",
            [6, 6, 3],
            vec![edge(2, 3, Padding::Reflect), BatchNorm, Relu, MaxPool { size: 2 }, Flatten, Dense { units: 3 }],
            LossKind::Categorical,
        ),
        net("edge-zero", [5, 5, 3], vec![edge(2, 3, Padding::Zero), Flatten, Dense { units: 1 }], LossKind::Binary),
        net("edge-unit", [5, 5, 3], vec![edge(1, 5, Padding::None), Flatten], LossKind::Binary),
        net(
            "conv",
            [6, 6, 3],
            vec![conv(2, 3, Padding::Zero), Relu, conv(2, 3, Padding::None), Flatten, Dense { units: 1 }],
            LossKind::Binary,
        ),
        net(
            "conv+bn",
            [6, 6, 2],
            vec![conv(3, 3, Padding::Reflect), BatchNorm, Relu, MaxPool { size: 2 }, Flatten, Dense { units: 3 }],
            LossKind::Categorical,
        ),
        ModelSpec::table1(Table1Row::Layered(2), 5),
        ModelSpec::table1(Table1Row::Standard, 5),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (i, spec) in specs.iter().enumerate() {
        let (worst, checked, skipped) = gradient_check(spec, 3, SEED + i as u64);
        ok &= worst < 1e-6 && skipped * 20 <= checked;
        notes.push(format!("{} {worst:.1e} ({checked} coords, {skipped} kinks skipped)", spec.name));
    }
    verdict(ok, notes.join("; "))
}

/// Negation, HSV round trip and clipping-free colour shifts.
fn transforms() -> Outcome {
    let mut rng = stream(SEED);
    let x = Tensor::from_fn(&[100_000, 3], |_| rng.gen::<f32>());
    let twice = negative(&negative(&x).unwrap()).unwrap();
    let exact = twice.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let round_trip = hsv_to_rgb(&rgb_to_hsv(&x).unwrap()).unwrap().max_abs_diff(&x).unwrap();
    let mut clipped = 0;
    let mut out_of_range = 0;
    for i in 0..1000u64 {
        let kind = i % 3;
        let img = Tensor::from_fn(&[8, 8, 3], |j| {
            let v = rng.gen::<f32>();
            match kind {
                0 => v,
                // nearly gray
                1 => 0.5 + 0.02 * (v - 0.5) + 0.001 * (j % 3) as f32,
                // saturated
                _ => if j % 3 == 0 { v } else { v * 0.05 },
            }
        });
        let o = color_shift(&img, i, ShiftBound::NoClip).unwrap();
        clipped += o.clipped;
        let (lo, hi) = rgb_to_hsv(&o.image).unwrap().saturation_range();
        out_of_range += usize::from(lo < -1e-6 || hi > 1.0 + 1e-6);
    }
    verdict(
        exact && round_trip < 1e-6 && clipped == 0 && out_of_range == 0,
        format!(
            "negative involution bit-exact on 1e5 pixels: {exact}; HSV round trip max error {round_trip:e}; \
             colour shift on 1000 images: {clipped} clipped, {out_of_range} out of range"
        ),
    )
}

/// Scaled-down robustness comparison on the CIFAR-10 subset.
fn cifar_robustness() -> Outcome {
    let start = Instant::now();
    let run = cifar_run()?;
    let eval = |m: &Model<f32>| -> Result<RobustnessReport, String> {
        evaluate_robustness(m, &run.data.test, SEED, ShiftBound::NoClip, 256).map_err(|e| e.to_string())
    };
    let edge = eval(&run.edge)?;
    let regular = eval(&run.regular)?;
    let secs = run.train_secs + start.elapsed().as_secs_f64();
    let drop = |d: f64| -d;
    let ok = drop(edge.delta_negative_pct) < 0.25 * drop(regular.delta_negative_pct)
        && drop(edge.delta_color_pct) < drop(regular.delta_color_pct)
        && secs < 45.0 * 60.0;
    verdict(
        ok,
        format!(
            "+edge regular {:.3} negative {:+.1}% color {:+.1}%; regular {:.3} negative {:+.1}% color {:+.1}%; {secs:.0}s",
            edge.regular, edge.delta_negative_pct, edge.delta_color_pct, regular.regular, regular.delta_negative_pct, regular.delta_color_pct
        ),
    )
}

/// Best correct count over every threshold and polarity, by enumeration.
fn brute_force_hits(pos: &[f64], neg: &[f64]) -> usize {
    let mut cuts: Vec<f64> = pos.iter().chain(neg).copied().collect();
    cuts.push(f64::NEG_INFINITY);
    let mut best = 0;
    for &t in &cuts {
        // "above t" means strictly greater
        let above = pos.iter().filter(|&&p| p > t).count() + neg.iter().filter(|&&n| n <= t).count();
        best = best.max(above).max(pos.len() + neg.len() - above);
    }
    best
}

fn random_values(rng: &mut StreamRng, n: usize, coarse: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if coarse { rng.gen_range(0..12) as f64 } else { rng.gen_range(-3.0..3.0) })
        .collect()
}

/// Threshold scan against enumeration, and a hand-built oriented kernel.
fn probe_oracles() -> Outcome {
    let mut rng = stream(SEED);
    let mut mismatches = 0;
    for trial in 0..2000 {
        let n = rng.gen_range(2..=200);
        let n_pos = rng.gen_range(1..n);
        let coarse = trial % 2 == 0;
        let pos = random_values(&mut rng, n_pos, coarse);
        let neg = random_values(&mut rng, n - n_pos, coarse);
        let fit = optimal_threshold(&pos, &neg).unwrap();
        let realized = pos.iter().filter(|&&p| (p > fit.threshold) == fit.above).count()
            + neg.iter().filter(|&&v| (v > fit.threshold) != fit.above).count();
        let best = brute_force_hits(&pos, &neg);
        if realized != best || (fit.accuracy * n as f64).round() as usize != best {
            mismatches += 1;
        }
    }
    // sign(j − i): a zero-mean detector of the top-left to bottom-right diagonal
    let k = 5;
    let kernel: Vec<f32> = (0..k * k)
        .map(|n| (n % k) as f32 - (n / k) as f32)
        .map(|d| d.signum() * f32::from(d != 0.0))
        .collect();
    let spec = ModelSpec {
        name: "oriented".into(),
        input: [k, k, 3],
        layers: vec![
            LayerSpec::EdgeDetect {
                units: 1,
                kernel: k,
                padding: Padding::None,
            },
            LayerSpec::Flatten,
        ],
        loss: LossKind::Binary,
    };
    let mut model = Model::build(&spec, &mut stream(0)).unwrap();
    *model.edge_layer_mut(0).unwrap() = EdgeDetectLayer::from_parts(
        Tensor::new(&[1, k, k], kernel).unwrap(),
        &Tensor::full(&[1, 3], 1.0),
        Tensor::zeros(&[1]),
        Padding::None,
    )
    .unwrap();
    let mut config = ProbeConfig::new(vec![0]);
    config.angles = vec![45.0];
    config.stimulus = StimulusSize::Fixed(k);
    config.seed = SEED;
    let report = runners::probe(&model, &config, false).map_err(|e| e.to_string())?;
    let accuracy = report.layers[0].cell(0, 0).accuracy;
    verdict(
        mismatches == 0 && accuracy >= 0.99,
        format!("{mismatches} mismatches in 2000 scans (N ≤ 200); oriented kernel accuracy {accuracy:.4} at 45° (10000 edges + 10000 noise)"),
    )
}

fn fake_cifar(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let batch = |n: usize, salt: usize| -> Vec<u8> {
        let mut rng = stream(salt as u64);
        let mut bytes = Vec::with_capacity(n * CIFAR_RECORD);
        for i in 0..n {
            bytes.push((i % 10) as u8);
            bytes.extend((0..CIFAR_RECORD - 1).map(|_| rng.gen::<u8>()));
        }
        bytes
    };
    for (i, f) in TRAIN_FILES.iter().enumerate() {
        fs::write(dir.join(f), batch(20, i)).unwrap();
    }
    fs::write(dir.join(TEST_FILE), batch(20, 9)).unwrap();
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            csv_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
}

/// Every subcommand twice with the same seed; CSV reports must match byte for byte.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = tmp.path();
    let images = base.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut rng = stream(SEED);
    for i in 0..3 {
        let img = Tensor::from_fn(&[6, 7, 3], |_| rng.gen_range(0..=255u8) as f32 / 255.0);
        edgelab::imageio::save_image(&images.join(format!("img{i}.png")), &img, 1).unwrap();
    }
    let cifar = base.join("cifar");
    fake_cifar(&cifar);
    let (images, cifar) = (images.to_str().unwrap().to_string(), cifar.to_str().unwrap().to_string());
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("table1", vec!["--reps", "3", "--updates", "200", "--checkpoints", "100,200", "--eval", "128"].into_iter().map(String::from).collect()),
        ("stats", vec!["--samples".into(), "50000".into()]),
        ("train", vec!["--task".into(), "patches".into(), "--row".into(), "layered:2".into()]),
        ("probe", vec!["-n".into(), "300".into(), "--layers".into(), "0,2".into()]),
        ("render-weights", vec![]),
        ("actmax", vec!["--steps".into(), "10".into(), "--size".into(), "9".into(), "--layer".into(), "0".into()]),
        ("stimuli", vec![]),
        ("transform", vec!["--input".into(), images.clone(), "--kind".into(), "color-shift".into()]),
        ("transform", vec!["--input".into(), images.clone(), "--kind".into(), "negative".into()]),
        (
            "train",
            ["--task", "cifar", "--first", "regular", "--epochs", "1", "--subset", "1.0", "--data", &cifar]
                .map(String::from)
                .to_vec(),
        ),
        (
            "robustness",
            ["--model", "edge", "--epochs", "1", "--subset", "1.0", "--probe-samples", "50", "--data", &cifar]
                .map(String::from)
                .to_vec(),
        ),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    let mut roots = Vec::new();
    for rep in 0..2 {
        let root = base.join(format!("run{rep}"));
        let model = root.join("step2/train/model");
        for (step, (name, args)) in commands.iter().enumerate() {
            let out = root.join(format!("step{step}"));
            let mut argv: Vec<String> = vec!["edgelab".into(), name.to_string()];
            argv.extend(args.iter().cloned());
            if matches!(*name, "probe" | "render-weights" | "actmax") {
                argv.extend(["--model".into(), model.to_str().unwrap().to_string()]);
            }
            argv.extend(["--seed".into(), "11".into(), "--out".into(), out.to_str().unwrap().to_string()]);
            let cli = <Cli as clap::Parser>::try_parse_from(&argv).map_err(|e| format!("{name}: {e}"))?;
            run(cli).map_err(|e| format!("{name}: {e}"))?;
        }
        roots.push(root);
    }
    let mut files = Vec::new();
    csv_files(&roots[0], &mut files);
    for a in &files {
        let b = roots[1].join(a.strip_prefix(&roots[0]).unwrap());
        compared += 1;
        if fs::read(a).ok() != fs::read(&b).ok() {
            differing.push(a.strip_prefix(&roots[0]).unwrap().display().to_string());
        }
    }
    verdict(
        differing.is_empty() && compared >= commands.len(),
        format!(
            "{compared} CSV reports from {} subcommand runs compared; differing: {:?}",
            commands.len(),
            differing
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("1", "edge-vs-noise table", table1),
        ("2", "noise statistics", noise_statistics),
        ("3", "zero-mean kernel equivalence", zero_mean_equivalence),
        ("4a", "edge-unit invariances", edge_invariances),
        ("4b", "edge-unit negation on CIFAR-10", cifar_delta_negative),
        ("5", "gradient checks", gradients),
        ("6", "transform correctness", transforms),
        ("7", "robustness direction on CIFAR-10 subset", cifar_robustness),
        ("8", "probe oracle equivalence", probe_oracles),
        ("9", "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
