use labelforge::autograd::{Graph, Tensor};
use labelforge::nn::checkpoint::{decode_checkpoint, encode_checkpoint};
use labelforge::nn::{build_backbone, BackbonePreset, Family, CHECKPOINT_VERSION};
use labelforge::Error;
use proptest::prelude::*;

fn batch(seed: u64, n: usize) -> Tensor<f32> {
    // Cheap deterministic pixels in [0,1].
    let data: Vec<f32> = (0..n * 3 * 8 * 8)
        .map(|i| ((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32 / 999.0)
        .collect();
    Tensor::new(vec![n, 3, 8, 8], data).unwrap()
}

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(-30.0f64..30.0, 36)) {
        let x = Tensor::<f64>::from_f64(vec![rows, cols], &vals[..rows * cols]).unwrap();
        let mut g = Graph::new();
        let xi = g.input(x);
        let p = g.softmax(xi).unwrap();
        for r in g.value(p).data().chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn l2_normalized_rows_have_unit_norm(vals in prop::collection::vec(-5.0f64..5.0, 12)) {
        prop_assume!(vals.chunks(4).all(|r| r.iter().any(|v| v.abs() > 1e-3)));
        let mut g = Graph::new();
        let xi = g.input(Tensor::<f64>::from_f64(vec![3, 4], &vals).unwrap());
        let z = g.l2_normalize(xi).unwrap();
        for r in g.value(z).data().chunks(4) {
            prop_assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_builds_the_same_model(f in family(), seed in any::<u64>()) {
        let p = BackbonePreset::new(f).with_input_size(8, 8, 3);
        let a = build_backbone::<f32>(&p, seed).unwrap();
        let b = build_backbone::<f32>(&p, seed).unwrap();
        prop_assert_eq!(a.params(), b.params());
        let x = batch(seed, 2);
        prop_assert_eq!(a.forward_logits(&x).unwrap().into_data(), b.forward_logits(&x).unwrap().into_data());
    }

    #[test]
    fn checkpoints_roundtrip_bit_for_bit(f in family(), seed in any::<u64>(), head in any::<bool>()) {
        let p = BackbonePreset::new(f).with_input_size(8, 8, 3);
        let mut model = build_backbone::<f32>(&p, seed).unwrap();
        if !head {
            model.drop_projection_head();
        }
        let bytes = encode_checkpoint(&model).unwrap();
        let back = decode_checkpoint::<f32>(&bytes).unwrap();
        prop_assert_eq!(back.has_projection_head(), head);
        prop_assert_eq!(back.params(), model.params());
        let x = batch(seed, 3);
        let (a, b) = (model.forward_logits(&x).unwrap(), back.forward_logits(&x).unwrap());
        prop_assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = build_backbone::<f32>(&BackbonePreset::new(Family::MiniRes).with_input_size(8, 8, 3), 1).unwrap();
    let bytes = encode_checkpoint(&model).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&bad_magic), Err(Error::Format(_))));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode_checkpoint::<f32>(&future),
        Err(Error::Incompatible { .. })
    ));
    assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn wrong_batch_shape_is_an_input_error() {
    let model = build_backbone::<f32>(&BackbonePreset::new(Family::MiniVgg).with_input_size(8, 8, 3), 1).unwrap();
    let x = Tensor::<f32>::zeros(vec![2, 1, 8, 8]);
    assert!(matches!(model.forward_logits(&x), Err(Error::Input(_))));
}
