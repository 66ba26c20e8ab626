use hlnet::container::{decode, encode, read_container, write_container, TensorData, TensorRecord};
use hlnet::ContainerError;
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = TensorRecord> {
    (
        "[a-z][a-z0-9_./]{0,12}",
        prop::collection::vec(0usize..4, 0..4),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(name, dims, is_f64, seed)| {
            let n: usize = dims.iter().product();
            let mut state = seed;
            let mut next = || {
                state = hlnet::rng::mix64(state);
                f64::from_bits(state)
            };
            if is_f64 {
                let v: Vec<f64> = (0..n).map(|_| next()).collect();
                TensorRecord::f64(name, ArrayD::from_shape_vec(IxDyn(&dims), v).unwrap())
            } else {
                let v: Vec<f32> = (0..n).map(|_| f32::from_bits(next().to_bits() as u32)).collect();
                TensorRecord::f32(name, ArrayD::from_shape_vec(IxDyn(&dims), v).unwrap())
            }
        })
}

fn unique(records: Vec<TensorRecord>) -> Vec<TensorRecord> {
    let mut seen = std::collections::HashSet::new();
    records.into_iter().filter(|r| seen.insert(r.name.clone())).collect()
}

fn bits(r: &TensorRecord) -> (String, Vec<usize>, Vec<u64>) {
    let payload = match &r.data {
        TensorData::F32(a) => a.iter().map(|v| v.to_bits() as u64).collect(),
        TensorData::F64(a) => a.iter().map(|v| v.to_bits()).collect(),
    };
    (r.name.clone(), r.data.shape().to_vec(), payload)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip_is_bitwise(records in prop::collection::vec(record_strategy(), 0..6).prop_map(unique)) {
        let bytes = encode(&records).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(a.data.dtype(), b.data.dtype());
        }
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn mutated_bytes_never_panic(records in prop::collection::vec(record_strategy(), 1..4).prop_map(unique), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = encode(&records).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(decode(&bytes).is_err());
    }

    #[test]
    fn every_truncation_is_rejected(records in prop::collection::vec(record_strategy(), 1..4).prop_map(unique)) {
        let bytes = encode(&records).unwrap();
        for cut in 0..bytes.len() {
            prop_assert!(decode(&bytes[..cut]).is_err());
        }
    }
}

#[test]
fn file_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = ArrayD::from_shape_fn(IxDyn(&[4, 64, 64]), |d| (d[0] * 4096 + d[1] * 64 + d[2]) as f32 * 0.25);
    let recs = vec![TensorRecord::f32("image", data)];
    let (a, b) = (dir.path().join("a.hlt"), dir.path().join("b.hlt"));
    write_container(&a, &recs).unwrap();
    write_container(&b, &recs).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_container(&a).unwrap(), recs);
}

#[test]
fn payload_corruption_is_a_crc_error() {
    let recs = vec![TensorRecord::f64("x", ArrayD::from_elem(IxDyn(&[3]), 1.5))];
    let mut bytes = encode(&recs).unwrap();
    let n = bytes.len();
    bytes[n - 6] ^= 0x10;
    assert!(matches!(decode(&bytes), Err(ContainerError::CrcMismatch { .. })));
}
