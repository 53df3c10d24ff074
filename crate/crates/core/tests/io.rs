mod common;

use gazetrack::io::{
    dataset_hash, decode, encode, load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint,
};
use gazetrack::model::{build, ArchitectureConfig, ModelConfig, StudentConfig};
use gazetrack::training::{train, TrainConfig};
use gazetrack::{Error, Tensor};
use proptest::prelude::*;

fn tensor(dims: &[usize], seed: f32) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims, (0..n).map(|i| seed + i as f32 * 0.5).collect()).unwrap()
}

/// Hand-assembled single-entry container.
fn raw_entry(name: &str, dtype: u8, dims: &[u32], values: &[f32]) -> Vec<u8> {
    let mut b = b"GZT1".to_vec();
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(name.len() as u16).to_le_bytes());
    b.extend_from_slice(name.as_bytes());
    b.push(dtype);
    b.push(dims.len() as u8);
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn encoding_matches_the_byte_layout() {
    let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
    assert_eq!(encode([("ab", &t)]).unwrap(), raw_entry("ab", 0, &[2, 1], &[1.5, -2.0]));
}

#[test]
fn corrupt_containers_are_classified() {
    let good = raw_entry("w", 0, &[3], &[1.0, 2.0, 3.0]);
    assert_eq!(decode(&good).unwrap()[0].1.data(), &[1.0, 2.0, 3.0]);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::BadMagic { found }) if &found == b"XZT1"));

    for cut in [2, 6, 9, good.len() - 1] {
        assert!(matches!(decode(&good[..cut]), Err(Error::Truncated { .. })), "cut at {cut}");
    }
    match decode(&good[..good.len() - 3]) {
        Err(Error::Truncated { needed, .. }) => assert_eq!(needed, 3),
        other => panic!("{other:?}"),
    }

    assert!(matches!(decode(&raw_entry("w", 7, &[1], &[0.0])), Err(Error::UnsupportedDtype(7))));

    let mut dup = b"GZT1".to_vec();
    dup.extend_from_slice(&2u32.to_le_bytes());
    for _ in 0..2 {
        dup.extend_from_slice(&raw_entry("w", 0, &[1], &[4.0])[8..]);
    }
    assert!(matches!(decode(&dup), Err(Error::DuplicateName(n)) if n == "w"));
    let t = tensor(&[1], 0.0);
    assert!(matches!(encode([("w", &t), ("w", &t)]), Err(Error::DuplicateName(_))));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode(&trailing), Err(Error::Format(_))));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, frames) = common::corpus(2, 0, 8, 2, 21, |_| {});
    let arch = ArchitectureConfig::desk();
    let mc = ModelConfig::ITracker(arch.clone());
    let cfg = TrainConfig {
        iterations: 3,
        lr_drop_iteration: 2,
        batch_size: 4,
        ..TrainConfig::desk()
    };
    let trained = train(&mc, build(&arch, 21).unwrap(), &frames, &cfg).unwrap();
    assert!(trained.params.velocities().count() > 0);
    let mut ckpt = Checkpoint::new(mc.clone(), trained.params);
    ckpt.extras.insert("projection".into(), tensor(&[2, 3], 1.0));

    let a = dir.path().join("a.gzt");
    let b = dir.path().join("b.gzt");
    save_checkpoint(&ckpt, &a).unwrap();
    let loaded = load_checkpoint(&a, Some(&mc)).unwrap();
    assert_eq!(loaded.params.checksum(), ckpt.params.checksum());
    assert_eq!(loaded.extras, ckpt.extras);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // Parameter bytes only, plus a small fixed overhead.
    let size = std::fs::metadata(&a).unwrap().len() as usize;
    let floats = 2 * ckpt.params.param_count();
    assert!(size >= 4 * floats && size < 4 * floats + 64 * 1024);
    assert!(size < 10 * 1024 * 1024);

    let student = ModelConfig::Student(StudentConfig::desk());
    assert!(matches!(load_checkpoint(&a, Some(&student)), Err(Error::Config(_))));
}

#[test]
fn checkpoint_tensor_errors() {
    let arch = ArchitectureConfig::desk();
    let mc = ModelConfig::ITracker(arch.clone());
    let params = build(&arch, 1).unwrap();
    let good = Checkpoint::new(mc.clone(), params.clone()).to_bytes().unwrap();
    let mut entries = decode(&good).unwrap();

    let i = entries.iter().position(|(n, _)| n == "param/fc2.bias").unwrap();
    let orig = entries[i].1.clone();
    entries[i].1 = tensor(&[3], 0.0);
    let bytes = encode(entries.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    match Checkpoint::from_bytes(&bytes, None) {
        Err(Error::ShapeMismatch { name, expected, actual }) => {
            assert_eq!((name.as_str(), expected, actual), ("fc2.bias", vec![2], vec![3]))
        }
        other => panic!("{other:?}"),
    }

    entries[i].1 = orig;
    let missing: Vec<_> = entries.iter().filter(|(n, _)| n != "param/fc1.weight").collect();
    let bytes = encode(missing.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes, None), Err(Error::MissingTensor(n)) if n == "fc1.weight"));

    let stray = tensor(&[1], 0.0);
    let bytes = encode(entries.iter().map(|(n, t)| (n.as_str(), t)).chain([("param/zz.weight", &stray)])).unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes, None), Err(Error::Format(_))));
}

#[test]
fn dataset_round_trip_append_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let devs = common::devices();
    let (_, a) = common::corpus(2, 0, 14, 2, 22, |_| {});
    let (_, b) = common::corpus(1, 10, 14, 2, 23, |_| {});
    save_dataset(d, &a, &devs).unwrap();
    let h1 = dataset_hash(d).unwrap();
    assert_eq!(h1, dataset_hash(d).unwrap());
    let loaded = load_dataset(d).unwrap();
    assert_eq!(loaded.frames, a);

    assert!(matches!(save_dataset(d, &a, &devs), Err(Error::Config(_))));
    assert_eq!(dataset_hash(d).unwrap(), h1);

    save_dataset(d, &b, &devs).unwrap();
    let loaded = load_dataset(d).unwrap();
    assert_eq!(loaded.frames.len(), a.len() + b.len());
    assert_ne!(dataset_hash(d).unwrap(), h1);
    assert!(loaded.devices.get("synthPhone").is_ok());

    let meta = d.join(gazetrack::io::META_FILE);
    let text = std::fs::read_to_string(&meta).unwrap();
    std::fs::write(&meta, text.replacen("\"dot_id\"", "\"dot\"", 1)).unwrap();
    assert!(matches!(load_dataset(d), Err(Error::Parse { line: 1, .. })));
}

proptest! {
    #[test]
    fn containers_round_trip_bit_exactly(
        entries in prop::collection::vec(
            (prop::collection::vec(1usize..5, 1..4), prop::collection::vec(any::<u32>(), 64)),
            0..6,
        ),
    ) {
        let tensors: Vec<(String, Tensor)> = entries
            .iter()
            .enumerate()
            .map(|(i, (dims, bits))| {
                let n: usize = dims.iter().product();
                let data = (0..n).map(|j| f32::from_bits(bits[j % bits.len()])).collect();
                (format!("t{i}/x"), Tensor::new(dims, data).unwrap())
            })
            .collect();
        let bytes = encode(tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), tensors.len());
        for ((na, ta), (nb, tb)) in tensors.iter().zip(&back) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.dims(), tb.dims());
            let a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(encode(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap(), bytes);
    }
}
