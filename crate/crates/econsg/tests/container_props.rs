use econsg::container::{decode, encode, Kind};
use econsg::scene_io::{load_features, save_features};
use econsg::IoError;
use econsg_core::Raster;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [Kind; 10] = [
    Kind::Features,
    Kind::Depth,
    Kind::Mask,
    Kind::Queries,
    Kind::Gaussians,
    Kind::Cameras,
    Kind::Contextual,
    Kind::Mlp,
    Kind::Fused,
    Kind::Labels,
];

#[test]
fn two_by_two_by_three_feature_file() {
    let payload: Vec<u8> = (0..12u32).flat_map(|i| (i as f32).to_le_bytes()).collect();
    let bytes = encode(Kind::Features, &[2, 2, 3], &payload).unwrap();
    let c = decode(Kind::Features, &bytes).unwrap();
    assert_eq!(c.dims, vec![2, 2, 3]);
    assert_eq!(c.payload.len(), 48);
}

#[test]
fn golden_bytes_are_little_endian() {
    let r = Raster::from_data(2, 1, 1, vec![1.0f32, -2.5]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.ecsg");
    save_features(&p, &r).unwrap();
    let mut want = b"ECSGFMAP".to_vec();
    for w in [1u32, 1, 2, 1] {
        want.extend_from_slice(&w.to_le_bytes());
    }
    want.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0]);
    assert_eq!(std::fs::read(&p).unwrap(), want);
}

#[test]
fn header_errors() {
    let good = encode(Kind::Depth, &[1, 2], &[0u8; 8]).unwrap();
    let mut bad = good.clone();
    bad[..8].copy_from_slice(b"XXXXXXXX");
    assert!(matches!(decode(Kind::Depth, &bad), Err(IoError::BadMagic { .. })));
    // A valid file of another kind is still the wrong magic.
    assert!(matches!(decode(Kind::Features, &good), Err(IoError::BadMagic { .. })));

    let mut v2 = good.clone();
    v2[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode(Kind::Depth, &v2), Err(IoError::UnsupportedVersion(2))));

    for cut in [0, 5, 8, 12, 19, good.len() - 1] {
        assert!(matches!(decode(Kind::Depth, &good[..cut]), Err(IoError::TruncatedFile { .. })), "cut at {cut}");
    }
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(decode(Kind::Depth, &long), Err(IoError::TruncatedFile { expected: 8, found: 9 })));

    let mut huge = good;
    huge[12..20].copy_from_slice(&[0xff; 8]);
    assert!(decode(Kind::Depth, &huge).is_err());
}

#[test]
fn encode_rejects_inconsistent_payloads() {
    assert!(encode(Kind::Features, &[2, 2], &[0u8; 16]).is_err());
    assert!(encode(Kind::Features, &[2, 2, 1], &[0u8; 15]).is_err());
}

#[test]
fn hundred_random_feature_maps_roundtrip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for i in 0..100 {
        let (w, h, d) = (r.random_range(1..20), r.random_range(1..20), r.random_range(1..9));
        // Arbitrary bit patterns, NaNs and infinities included.
        let data: Vec<f32> = (0..w * h * d).map(|_| f32::from_bits(r.random())).collect();
        let map = Raster::from_data(w, h, d, data).unwrap();
        let p = dir.path().join(format!("{i}.ecsg"));
        save_features(&p, &map).unwrap();
        let back = load_features(&p).unwrap();
        assert_eq!((back.width, back.height, back.channels), (w, h, d));
        assert!(back.data.iter().zip(&map.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #[test]
    fn any_consistent_container_roundtrips(k in 0usize..10, dims in prop::collection::vec(0u32..5, 3), seed in any::<u64>()) {
        let kind = KINDS[k];
        let dims = &dims[..kind.rank()];
        let len = kind.payload_len(dims).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let payload: Vec<u8> = (0..len).map(|_| r.random()).collect();
        let bytes = encode(kind, dims, &payload).unwrap();
        prop_assert_eq!(bytes.len(), 12 + 4 * kind.rank() + len);
        let c = decode(kind, &bytes).unwrap();
        prop_assert_eq!(&c.dims[..], dims);
        prop_assert_eq!(c.payload, payload);
    }

    #[test]
    fn every_magic_is_distinct_and_rejected_by_the_others(a in 0usize..10, b in 0usize..10) {
        prop_assume!(a != b);
        prop_assert_ne!(KINDS[a].magic(), KINDS[b].magic());
        let dims = vec![0u32; KINDS[a].rank()];
        let bytes = encode(KINDS[a], &dims, &vec![0u8; KINDS[a].payload_len(&dims).unwrap()]).unwrap();
        let is_bad_magic = matches!(decode(KINDS[b], &bytes), Err(IoError::BadMagic { .. }));
        prop_assert!(is_bad_magic);
    }
}
