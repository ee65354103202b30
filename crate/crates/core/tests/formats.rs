use std::fs;

use edgefbg::checkpoint::Checkpoint;
use edgefbg::config::RunConfig;
use edgefbg::dataset::{Dataset, DatasetSidecar, HEADER_LEN};
use edgefbg::model::ShapeRegressor;
use edgefbg::run;
use edgefbg::simulator::GeneratorConfig;
use edgefbg::Error;
use proptest::prelude::*;

fn tiny_config(extra: &str) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{"seed": 9,
            "architecture": {{"channels": [4, 4], "kernel": 3, "pools": [3, 3]}},
            "training": {{"max_epochs": 2, "batch_size": 16, "patience": null}}{extra}}}"#
    ))
    .unwrap()
}

#[test]
fn dataset_file_layout_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let (ds, sidecar) = run::generate(7, 3, &GeneratorConfig::default(), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 40 + 7 * (375 + 63) * 4);
    assert_eq!(&bytes[..4], b"EFBG");
    let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    assert_eq!([u(4), u(8), u(12), u(16), u(20)], [1, 7, 3, 125, 21]);
    assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 812.0);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 871.0);
    // first intensity of the first sample follows the header
    let first = f32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap());
    assert_eq!(first, ds.intensities(0)[0]);

    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let side = DatasetSidecar::read(&DatasetSidecar::path_for(&path)).unwrap();
    assert_eq!(side, sidecar);
    assert_eq!(side.seed, 3);
}

#[test]
fn damaged_dataset_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let (ds, _) = run::generate(2, 1, &GeneratorConfig::default(), &path).unwrap();
    let good = ds.to_bytes();
    let cases: Vec<Vec<u8>> = vec![
        [b"XFBG".as_slice(), &good[4..]].concat(),
        [&good[..4], &2u32.to_le_bytes(), &good[8..]].concat(),
        good[..good.len() - 4].to_vec(),
        good[..20].to_vec(),
    ];
    for bytes in cases {
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Dataset::read(&path), Err(Error::Format { .. })));
    }
    assert!(matches!(
        Dataset::read(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn checkpoint_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = edgefbg::dataset::Dataset::from_samples(
        &edgefbg::simulator::generate_samples(40, 2, &GeneratorConfig::default()).unwrap(),
    )
    .unwrap();
    for extra in [
        "",
        r#", "input_transform": "whiten", "output_method": "M2", "dropout": 0.2"#,
        r#", "model": "siamese", "siamese": {"pair_budget": 780, "val_pair_budget": 6}"#,
    ] {
        let cfg = tiny_config(extra);
        let mut trained = run::train_on(&cfg, &ds).unwrap();
        let path = dir.path().join("m.ckpt");
        trained.checkpoint.write(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut back = Checkpoint::read(&path).unwrap();
        back.write(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        assert_eq!(back.config_digest, cfg.digest().unwrap());
        let a = trained.checkpoint.model.predict(&trained.data.x).unwrap();
        let b = back.model.predict(&trained.data.x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn checkpoint_tensor_bytes_match_the_manifest() {
    let ds = Dataset::from_samples(&edgefbg::simulator::generate_samples(20, 2, &GeneratorConfig::default()).unwrap())
        .unwrap();
    let run = run::train_on(&tiny_config(""), &ds).unwrap();
    let bytes = run.checkpoint.to_bytes().unwrap();
    assert_eq!(&bytes[..8], b"EFBGCKPT");
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes[20..20 + mlen]).unwrap();
    let values: usize = manifest["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            t["shape"]
                .as_array()
                .unwrap()
                .iter()
                .map(|d| d.as_u64().unwrap() as usize)
                .product::<usize>()
        })
        .sum();
    assert_eq!(bytes.len(), 20 + mlen + 4 * values);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn arbitrary_datasets_round_trip(n in 1usize..4, seed in any::<u64>()) {
        let mut rng = seed;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            f32::from_bits((rng >> 32) as u32 & 0x7f7f_ffff)
        };
        let intensities: Vec<f32> = (0..n * 375).map(|_| next()).collect();
        let coords: Vec<f32> = (0..n * 63).map(|_| next()).collect();
        let ds = Dataset::new(intensities, coords).unwrap();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes, "p".as_ref()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
