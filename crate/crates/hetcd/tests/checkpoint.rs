use hetcd::checkpoint::{self, from_bytes, to_bytes, MAGIC};
use hetcd::Error;
use hetcd_core::graph::generate_hsbm;
use hetcd_core::train::{self, SamplingConfig, TrainError};
use hetcd_core::{HeteroGraph, HsbmSpec, ModelState, Split, TrainConfig};

fn graph(seed: u64) -> HeteroGraph {
    let mut spec = HsbmSpec::new(60, 2, 30, 3);
    spec.feature_dim = 6;
    spec.feature_separation = 3.0;
    spec.seed = seed;
    generate_hsbm(&spec).unwrap()
}

fn trained() -> (HeteroGraph, ModelState) {
    let g = graph(1);
    let config = TrainConfig {
        d_model: 8,
        heads: 2,
        blocks: 1,
        max_epochs: 3,
        learning_rate: 1e-2,
        sampling: SamplingConfig {
            batch_size: 20,
            budget: 8,
            hops: 2,
        },
        ..TrainConfig::default()
    };
    let state = train::train(&g, &config).unwrap().best;
    (g, state)
}

#[test]
fn round_trip_is_bit_exact() {
    let (g, state) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&state, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, state);
    for (a, b) in back.params.values().iter().zip(state.params.values()) {
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.data()), bits(b.data()));
    }
    assert_eq!(to_bytes(&back), std::fs::read(&path).unwrap());
    assert_eq!(
        train::evaluate(&back, &g, Split::Test).unwrap(),
        train::evaluate(&state, &g, Split::Test).unwrap()
    );
}

#[test]
fn file_starts_with_magic() {
    let (_, state) = trained();
    assert_eq!(&to_bytes(&state)[..8], MAGIC);
}

#[test]
fn corrupt_files_are_rejected() {
    let (_, state) = trained();
    let bytes = to_bytes(&state);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(from_bytes(&bad).unwrap_err().contains("magic"));
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(from_bytes(&bytes[..12]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, &bad).unwrap();
    let err = checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn checkpoint_rejects_a_graph_with_other_dimensions() {
    let (_, state) = trained();
    let mut spec = HsbmSpec::new(60, 2, 30, 3);
    spec.feature_dim = 7;
    let other = generate_hsbm(&spec).unwrap();
    let err = train::evaluate(&state, &other, Split::Test).unwrap_err();
    assert!(matches!(err, TrainError::Incompatible(_)), "{err:?}");
}
