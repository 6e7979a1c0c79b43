use edgelab_core::probe::*;
use edgelab_core::rng::stream;
use edgelab_core::trainer::{train_table1_model, Table1Config};
use edgelab_core::*;
use proptest::prelude::*;
use rand::Rng;

/// O(N²) oracle: every midpoint between distinct values plus both ends,
/// both polarities.
fn brute_force(pos: &[f64], neg: &[f64]) -> f64 {
    let mut values: Vec<f64> = pos.iter().chain(neg).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut candidates = vec![values[0] - 1.0, values[values.len() - 1] + 1.0];
    for w in values.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    let total = (pos.len() + neg.len()) as f64;
    let mut best: f64 = 0.0;
    for t in candidates {
        let mut hits = 0;
        for &p in pos {
            hits += usize::from(p > t);
        }
        for &n in neg {
            hits += usize::from(n <= t);
        }
        let acc = hits as f64 / total;
        best = best.max(acc).max(1.0 - acc);
    }
    best
}

fn values(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    // coarse grid so ties are common
    prop::collection::vec((0i32..40).prop_map(|v| v as f64 / 4.0), n)
}

proptest! {
    #[test]
    fn threshold_scan_equals_brute_force(pos in values(1..100), neg in values(1..100)) {
        let fit = optimal_threshold(&pos, &neg).unwrap();
        prop_assert!((fit.accuracy - brute_force(&pos, &neg)).abs() < 1e-12);
        prop_assert!(fit.accuracy >= 0.5);
        // the reported threshold and polarity realise the accuracy
        let hits = pos.iter().filter(|&&p| (p > fit.threshold) == fit.above).count()
            + neg.iter().filter(|&&n| (n > fit.threshold) != fit.above).count();
        prop_assert!((hits as f64 / (pos.len() + neg.len()) as f64 - fit.accuracy).abs() < 1e-12);
    }

    #[test]
    fn superset_never_loses_correct_predictions(
        pos in values(1..60), neg in values(1..60), extra_pos in values(0..30), extra_neg in values(0..30)
    ) {
        let small = optimal_threshold(&pos, &neg).unwrap();
        let big_pos: Vec<f64> = pos.iter().chain(&extra_pos).copied().collect();
        let big_neg: Vec<f64> = neg.iter().chain(&extra_neg).copied().collect();
        let big = optimal_threshold(&big_pos, &big_neg).unwrap();
        let correct = |f: &ThresholdFit, n: usize| (f.accuracy * n as f64).round();
        prop_assert!(correct(&big, big_pos.len() + big_neg.len()) >= correct(&small, pos.len() + neg.len()));
    }
}

#[test]
fn threshold_examples() {
    let fit = optimal_threshold(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
    assert_eq!((fit.accuracy, fit.threshold, fit.above), (1.0, 2.5, true));
    let flipped = optimal_threshold(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!((flipped.accuracy, flipped.above), (1.0, false));
    assert_eq!(optimal_threshold(&[1.0; 4], &[1.0; 4]).unwrap().accuracy, 0.5);
    assert!(optimal_threshold(&[], &[1.0]).is_err());
    assert!(optimal_threshold(&[f64::NAN], &[1.0]).is_err());
}

#[test]
fn coefficient_of_variation_examples() {
    assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), Some(0.0));
    assert_eq!(coefficient_of_variation(&[1.0, 3.0]), Some(0.5));
    assert_eq!(coefficient_of_variation(&[-1.0, 1.0]), None);
    assert_eq!(coefficient_of_variation(&[]), None);
}

/// One edge unit of kernel size `k` with unit channel weights, reading a
/// `k×k` input to a single response.
fn oracle_model(kernel: Vec<f32>, k: usize) -> Model<f32> {
    let spec = ModelSpec {
        name: "oracle".into(),
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
    let layer = EdgeDetectLayer::from_parts(
        Tensor::new(&[1, k, k], kernel).unwrap(),
        &Tensor::full(&[1, 3], 1.0),
        Tensor::zeros(&[1]),
        Padding::None,
    )
    .unwrap();
    *model.edge_layer_mut(0).unwrap() = layer;
    model
}

/// +1 above the main diagonal, −1 below, 0 on it.
fn diagonal_kernel(k: usize) -> Vec<f32> {
    (0..k * k).map(|p| ((p % k) as f32 - (p / k) as f32).signum()).collect()
}

#[test]
fn hand_built_oriented_unit_detects_its_edge() {
    let model = oracle_model(diagonal_kernel(5), 5);
    let mut config = ProbeConfig::new(vec![0]).desk_scale();
    config.seed = 3;
    let report = probe(&model, &config).unwrap();
    let layer = &report.layers[0];
    assert_eq!(layer.stimulus_size, 5);
    assert!(!layer.floor_center);
    let at = |angle: f64| layer.cells.iter().find(|c| c.angle == angle).unwrap().accuracy;
    assert!(at(45.0) >= 0.99, "45°: {}", at(45.0));
    // tuning: the preferred angle has the strongest mean response, the
    // orthogonal one none at all
    let mean_at = |angle: f64| layer.cells.iter().find(|c| c.angle == angle).unwrap().edge_mean;
    assert!(layer.cells.iter().all(|c| c.edge_mean <= mean_at(45.0)));
    assert!(mean_at(135.0).abs() < 1e-5);
    let best = layer.best_per_angle();
    assert_eq!(best.len(), 8);
    assert_eq!(layer.fraction_at_least(0.75), 1.0);
}

#[test]
fn trained_edge_unit_probes_well_at_its_angle() {
    let mut config = Table1Config::new(Table1Row::Edge(5));
    config.updates = 300;
    config.checkpoints = vec![300];
    let (model, _) = train_table1_model(&config, 0).unwrap();
    let mut probe_config = ProbeConfig::new(vec![0]).desk_scale();
    probe_config.angles = vec![45.0];
    let report = probe(&model, &probe_config).unwrap();
    assert!(report.layers[0].cells[0].accuracy >= 0.95);
}

#[test]
fn fresh_standard_unit_is_near_chance() {
    let spec = ModelSpec::table1(Table1Row::Standard, 5);
    let model = Model::build(&spec, &mut stream(5)).unwrap();
    let mut config = ProbeConfig::new(vec![1]).desk_scale();
    config.stimulus = StimulusSize::Fixed(5);
    let report = probe(&model, &config).unwrap();
    for c in &report.layers[0].cells {
        assert!((0.5..=0.65).contains(&c.accuracy), "{} at {}", c.accuracy, c.angle);
    }
}

#[test]
fn probing_is_reproducible_and_negation_invariant_for_edges() {
    let spec = ModelSpec::cifar(FirstLayer::Edge, 10);
    let model = Model::build(&spec, &mut stream(8)).unwrap();
    let mut config = ProbeConfig::new(vec![0]);
    config.samples = 300;
    let a = probe(&model, &config).unwrap();
    assert_eq!(a, probe(&model, &config).unwrap());
    let neg = probe_with(&model, &config, true).unwrap();
    for (x, y) in a.layers[0].cells.iter().zip(&neg.layers[0].cells) {
        assert!((x.accuracy - y.accuracy).abs() <= 1.0 / 600.0, "{} vs {}", x.accuracy, y.accuracy);
        match (x.cv, y.cv) {
            (Some(p), Some(q)) => assert!((p - q).abs() < 1e-4 * p.max(1.0)),
            (p, q) => assert_eq!(p.is_some(), q.is_some()),
        }
    }
}

#[test]
fn default_layers() {
    let regular = ModelSpec::cifar(FirstLayer::Regular, 10);
    assert_eq!(default_probe_layer(&regular, Readout::Post), Some(6));
    assert_eq!(default_probe_layer(&regular, Readout::Pre), Some(4));
    assert_eq!(regular.receptive_field(6), 10);
    let edge = ModelSpec::cifar(FirstLayer::Edge, 10);
    assert_eq!(default_probe_layer(&edge, Readout::Post), Some(0));
    assert_eq!(edge.receptive_field(0), 5);
}

fn random_images(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut rng = stream(seed);
    Tensor::from_fn(&[n, side, side, 3], |_| rng.gen::<f32>())
}

#[test]
fn delta_negative_of_raw_pixels_is_closed_form() {
    let images = random_images(20, 6, 1);
    let got = delta_negative_with(&images, |b| Ok(b.clone())).unwrap();
    let num: f64 = images.data().iter().map(|&x| (1.0 - 2.0 * x as f64).abs()).sum();
    let den: f64 = images.data().iter().map(|&x| x as f64).sum();
    assert!((got - num / den).abs() < 1e-6);
    let zeros = Tensor::zeros(&[2, 4, 4, 3]);
    assert!(delta_negative_with(&zeros, |b| Ok(b.clone())).is_err());
}

#[test]
fn edge_layer_blocks_negation() {
    let images = random_images(50, 32, 2);
    let edge = Model::build(&ModelSpec::cifar(FirstLayer::Edge, 10), &mut stream(3)).unwrap();
    let regular = Model::build(&ModelSpec::cifar(FirstLayer::Regular, 10), &mut stream(3)).unwrap();
    let d_edge = delta_negative(&edge, 0, &images).unwrap();
    let d_regular = delta_negative(&regular, 0, &images).unwrap();
    assert!(d_edge < 1e-5, "edge {d_edge}");
    assert!(d_regular > d_edge);
}

fn vertical_kernel() -> Vec<f32> {
    vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]
}

#[test]
fn zero_steps_return_the_initial_noise() {
    let model = oracle_model(vertical_kernel(), 3);
    let config = ActMaxConfig {
        steps: 0,
        size: 16,
        ..ActMaxConfig::default()
    };
    let out = activation_maximization(&model, 0, 0, &config).unwrap();
    assert_eq!(out.trace.len(), 1);
    assert!(out.image.data().iter().all(|&v| (0.45..=0.55).contains(&v)));
    let again = activation_maximization(&model, 0, 0, &config).unwrap();
    assert_eq!(out.image, again.image);
}

#[test]
fn maximizing_a_vertical_edge_unit_draws_a_vertical_edge() {
    let model = oracle_model(vertical_kernel(), 3);
    let config = ActMaxConfig {
        size: 16,
        ..ActMaxConfig::default()
    };
    let out = activation_maximization(&model, 0, 0, &config).unwrap();
    // the output map is 14×14; its centre (7,7) sees input rows and columns 7..=9
    let hgrad = |i: usize, j: usize| -> f64 {
        (0..3)
            .map(|c| (out.image.at(&[i, j + 1, c]) - out.image.at(&[i, j, c])).abs() as f64)
            .sum::<f64>()
            / 3.0
    };
    let mut all = 0.0;
    for i in 0..16 {
        for j in 0..15 {
            all += hgrad(i, j);
        }
    }
    all /= 16.0 * 15.0;
    let mut active = 0.0;
    for i in 7..=9 {
        for j in 7..=8 {
            active += hgrad(i, j);
        }
    }
    active /= 6.0;
    assert!(active > 5.0 * all, "active {active}, mean {all}");
    let rises = out.trace.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises as f64 >= 0.9 * (out.trace.len() - 1) as f64);
    assert!(out.trace.last().unwrap() > &out.trace[0]);
}

#[test]
fn maximization_trace_rises_on_a_random_network() {
    let model = Model::build(&ModelSpec::cifar(FirstLayer::Regular, 10), &mut stream(4)).unwrap();
    let config = ActMaxConfig {
        steps: 40,
        size: 24,
        ..ActMaxConfig::default()
    };
    let out = activation_maximization(&model, 6, 3, &config).unwrap();
    let rises = out.trace.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises as f64 >= 0.9 * 40.0, "{:?}", out.trace);
    assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
