use std::fs;

use edgelab::checkpoint::{load_model, save_model, spec_from_toml};
use edgelab::cifar::{load_cifar10, read_batch, resolve_dir, TEST_FILE, TRAIN_FILES};
use edgelab::etc::{decode_etc, load_etc, save_etc, write_etc, EtcTensor, MAGIC};
use edgelab::imageio::{load_image, save_image, weight_grid, Canvas};
use edgelab::LabError;
use edgelab_core::datasets::{Split, CIFAR_RECORD};
use edgelab_core::model::FirstLayer;
use edgelab_core::rng::stream;
use edgelab_core::{Model, ModelSpec, Table1Row, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..4)
}

fn f32_tensor() -> impl Strategy<Value = Tensor<f32>> {
    shape().prop_flat_map(|s| {
        let n = s.iter().product::<usize>();
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n).prop_map(move |d| Tensor::new(&s, d).unwrap())
    })
}

fn f64_tensor() -> impl Strategy<Value = Tensor<f64>> {
    shape().prop_flat_map(|s| {
        let n = s.iter().product::<usize>();
        prop::collection::vec(any::<u64>().prop_map(f64::from_bits), n).prop_map(move |d| Tensor::new(&s, d).unwrap())
    })
}

fn entry() -> impl Strategy<Value = (String, EtcTensor)> {
    let tensor = prop_oneof![f32_tensor().prop_map(EtcTensor::F32), f64_tensor().prop_map(EtcTensor::F64)];
    ("[a-z./0-9é]{0,12}", tensor)
}

fn bits(e: &EtcTensor) -> Vec<u64> {
    match e {
        EtcTensor::F32(t) => t.data().iter().map(|v| v.to_bits() as u64).collect(),
        EtcTensor::F64(t) => t.data().iter().map(|v| v.to_bits()).collect(),
    }
}

proptest! {
    #[test]
    fn etc_round_trip_is_bit_exact(entries in prop::collection::vec(entry(), 0..5)) {
        let mut bytes = Vec::new();
        write_etc(&mut bytes, &entries).unwrap();
        let back = decode_etc(&bytes).unwrap();
        prop_assert_eq!(back.len(), entries.len());
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.dtype(), t1.dtype());
            prop_assert_eq!(t0.shape(), t1.shape());
            prop_assert_eq!(bits(t0), bits(t1));
        }
        let mut again = Vec::new();
        write_etc(&mut again, &back).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn truncated_etc_is_rejected(entries in prop::collection::vec(entry(), 1..3), cut in any::<prop::sample::Index>()) {
        let mut bytes = Vec::new();
        write_etc(&mut bytes, &entries).unwrap();
        let keep = MAGIC.len() + cut.index(bytes.len() - MAGIC.len());
        if keep < bytes.len() {
            let err = decode_etc(&bytes[..keep]);
            // a cut exactly between entries is a valid shorter file
            if let Ok(parsed) = err {
                prop_assert!(parsed.len() < entries.len());
            }
        }
    }
}

#[test]
fn etc_layout_matches_the_format() {
    let t = Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap();
    let mut bytes = Vec::new();
    write_etc(&mut bytes, &[("w".to_string(), EtcTensor::F32(t))]).unwrap();
    let mut expect = b"ETC1\n".to_vec();
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.push(b'w');
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&2u32.to_le_bytes());
    expect.push(0);
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, expect);
}

#[test]
fn etc_rejects_bad_headers_and_dtypes() {
    assert!(matches!(decode_etc(b"ETC2\n"), Err(LabError::Data(_))));
    let mut bytes = b"ETC1\n".to_vec();
    bytes.extend_from_slice(&0u32.to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    bytes.push(7);
    assert!(matches!(decode_etc(&bytes), Err(LabError::Data(_))));
    assert_eq!(decode_etc(b"ETC1\n").unwrap().len(), 0);
}

#[test]
fn etc_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.etc");
    let t = Tensor::new(&[1, 2], vec![0.1f64, f64::MIN_POSITIVE]).unwrap();
    save_etc(&path, &[("a".into(), EtcTensor::F64(t.clone()))]).unwrap();
    let back = load_etc(&path).unwrap();
    assert_eq!(back[0].1, EtcTensor::F64(t));
}

fn trained_like(spec: &ModelSpec, seed: u64) -> Model<f32> {
    let mut m = Model::<f32>::build(spec, &mut stream(seed)).unwrap();
    let mut rng = stream(seed + 1);
    for p in m.parameters_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    m
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        ModelSpec::cifar(FirstLayer::Edge, 10),
        ModelSpec::cifar(FirstLayer::Regular, 10),
        ModelSpec::table1(Table1Row::Layered(3), 5),
    ] {
        let model = trained_like(&spec, 3);
        let stem = dir.path().join("m");
        save_model(&model, &stem).unwrap();
        let back = load_model(&stem).unwrap();
        assert_eq!(back.spec(), model.spec());
        assert_eq!(back.state(), model.state());
        let x = Tensor::from_fn(&[2, spec.input[0], spec.input[1], 3], |i| (i % 7) as f32 / 7.0);
        assert_eq!(back.logits(&x).unwrap(), model.logits(&x).unwrap());
    }
}

#[test]
fn checkpoints_reject_unknown_layers_and_tensors() {
    let text = "name = \"x\"\ninput = [5, 5, 3]\nloss = \"binary\"\n[[layers]]\nkind = \"gabor\"\n";
    assert!(matches!(spec_from_toml(text), Err(LabError::Data(_))));

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    let model = trained_like(&ModelSpec::table1(Table1Row::Standard, 5), 1);
    save_model(&model, &stem).unwrap();
    let mut entries = load_etc(&stem.with_extension("etc")).unwrap();
    entries.push(("stray".into(), EtcTensor::F32(Tensor::zeros(&[1]))));
    save_etc(&stem.with_extension("etc"), &entries).unwrap();
    assert!(matches!(load_model(&stem), Err(LabError::Data(_))));
    fs::remove_file(stem.with_extension("etc")).unwrap();
    assert!(matches!(load_model(&stem), Err(LabError::Io { .. })));
}

/// `n` records with label `i % 10` and pixel bytes derived from the index.
fn fake_batch(n: usize, offset: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(n * CIFAR_RECORD);
    for i in 0..n {
        bytes.push(((i + offset) % 10) as u8);
        bytes.extend((0..CIFAR_RECORD - 1).map(|p| ((i + offset + p) % 256) as u8));
    }
    bytes
}

#[test]
fn cifar_batches_decode_planar_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.bin");
    fs::write(&path, fake_batch(3, 0)).unwrap();
    let set = read_batch(&path, Split::Train).unwrap();
    assert_eq!(set.labels, vec![0, 1, 2]);
    // record 1: red plane starts at byte value 1, green at 1 + 1024, blue at 1 + 2048
    let px = |c: usize| set.images.at(&[1, 0, 0, c]);
    assert_eq!(px(0), 1.0 / 255.0);
    assert_eq!(px(1), ((1 + 1024) % 256) as f32 / 255.0);
    assert_eq!(px(2), ((1 + 2048) % 256) as f32 / 255.0);
    assert_eq!(set.images.at(&[1, 0, 1, 0]), 2.0 / 255.0);
}

#[test]
fn cifar_errors_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let truncated = dir.path().join("t.bin");
    let mut bytes = fake_batch(2, 0);
    bytes.pop();
    fs::write(&truncated, bytes).unwrap();
    assert!(matches!(read_batch(&truncated, Split::Test), Err(LabError::Data(_))));
    let bad_label = dir.path().join("l.bin");
    let mut bytes = fake_batch(1, 0);
    bytes[0] = 10;
    fs::write(&bad_label, bytes).unwrap();
    assert!(matches!(read_batch(&bad_label, Split::Test), Err(LabError::Data(_))));
    assert!(matches!(resolve_dir(Some(dir.path())), Err(LabError::Data(_))));
}

#[test]
fn cifar_directory_loads_balanced_splits() {
    let dir = tempfile::tempdir().unwrap();
    for (i, f) in TRAIN_FILES.iter().enumerate() {
        fs::write(dir.path().join(f), fake_batch(100, i)).unwrap();
    }
    fs::write(dir.path().join(TEST_FILE), fake_batch(50, 0)).unwrap();
    let root = resolve_dir(Some(dir.path())).unwrap();
    let a = load_cifar10(&root, 0.2, 0.1, 4).unwrap();
    assert_eq!(a.train.len() + a.val.len(), 100);
    assert_eq!(a.val.class_counts(), vec![1; 10]);
    assert_eq!(a.train.class_counts(), vec![9; 10]);
    assert_eq!(a.test.len(), 50);
    let b = load_cifar10(&root, 0.2, 0.1, 4).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
}

#[test]
fn png_round_trip_is_exact_on_byte_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.png");
    let img = Tensor::from_fn(&[3, 4, 3], |i| ((i * 37) % 256) as f32 / 255.0);
    save_image(&path, &img, 1).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
}

#[test]
fn canvas_draws_digits() {
    let mut c = Canvas::new(8, 5, [255; 3]);
    c.number(0, 0, 1, 1, [0; 3]);
    // glyph "1": middle column is set on every row
    for y in 0..5 {
        assert_eq!(&c.pixels[(y * 8 + 1) * 3..(y * 8 + 1) * 3 + 3], &[0, 0, 0]);
    }
    assert_eq!(&c.pixels[(4 * 8 + 4) * 3..(4 * 8 + 4) * 3 + 3], &[255, 255, 255]);
}

#[test]
fn weight_grids_normalize_each_kernel() {
    let model = trained_like(&ModelSpec::cifar(FirstLayer::Edge, 10), 2);
    let grid = weight_grid(&model, 0, 2).unwrap();
    // first tile: 5×5 kernel at scale 2, drawn 4 pixels from the corner
    let tile: Vec<[u8; 3]> = (4..14)
        .flat_map(|y| (4..14).map(move |x| (y, x)))
        .map(|(y, x)| {
            let o = (y * grid.width + x) * 3;
            [grid.pixels[o], grid.pixels[o + 1], grid.pixels[o + 2]]
        })
        .collect();
    assert!(tile.iter().all(|p| p[0] == p[1] && p[1] == p[2]));
    assert_eq!(tile.iter().map(|p| p[0]).min(), Some(0));
    assert_eq!(tile.iter().map(|p| p[0]).max(), Some(255));
    let regular = trained_like(&ModelSpec::cifar(FirstLayer::Regular, 10), 2);
    let rgb = weight_grid(&regular, 0, 2).unwrap();
    assert!(rgb.pixels.chunks(3).any(|p| p[0] != p[1]));
    assert!(matches!(weight_grid(&regular, 2, 2), Err(LabError::Config(_))));
}
