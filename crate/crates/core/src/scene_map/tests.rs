use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn key(x: i64, y: i64, z: i64) -> VoxelKey {
    VoxelKey::new(x, y, z).unwrap()
}

fn block(keys: &[VoxelKey], fill: f64) -> FeatureBlock {
    let d = 3;
    let data = (0..keys.len() * d).map(|i| fill + i as f64).collect();
    FeatureBlock::new(keys.to_vec(), Tensor::matrix(keys.len(), d, data).unwrap()).unwrap()
}

#[test]
fn crop_of_empty_map_is_novel_zero() {
    let map = SceneMap::new(0.04, 3).unwrap();
    let b = map.crop(&[key(0, 0, 0), key(1, 2, 3)]).unwrap();
    assert!(b.features.data().iter().all(|v| *v == 0.0));
    assert_eq!(b.counts, vec![0, 0]);
    assert_eq!(b.novel, vec![true, true]);
}

#[test]
fn write_back_then_crop_roundtrips() {
    let mut map = SceneMap::new(0.04, 3).unwrap();
    let keys = [key(0, 0, 0), key(-5, 2, 9)];
    map.write_back(&block(&keys, 1.0)).unwrap();
    let b = map.crop(&keys).unwrap();
    assert_eq!(b.features, block(&keys, 1.0).features);
    assert_eq!(b.counts, vec![1, 1]);
    assert_eq!(b.novel, vec![false, false]);

    map.write_back(&block(&keys[..1], 7.0)).unwrap();
    let b = map.crop(&keys).unwrap();
    assert_eq!(b.features.row(0), &[7.0, 8.0, 9.0]);
    assert_eq!(b.counts, vec![2, 1]);
    assert_eq!(map.frame_counter(), 2);
}

#[test]
fn crop_does_not_mutate() {
    let mut map = SceneMap::new(0.04, 3).unwrap();
    map.write_back(&block(&[key(1, 1, 1)], 0.5)).unwrap();
    let before = map.clone();
    map.crop(&[key(1, 1, 1), key(2, 2, 2)]).unwrap();
    assert_eq!(map, before);
}

#[test]
fn non_finite_write_is_rejected_atomically() {
    let mut map = SceneMap::new(0.04, 3).unwrap();
    map.write_back(&block(&[key(0, 0, 0)], 0.0)).unwrap();
    let before = map.clone();
    let mut b = block(&[key(0, 0, 0), key(1, 0, 0)], 2.0);
    b.features.data_mut()[4] = f64::NAN;
    assert!(matches!(map.write_back(&b), Err(Error::Numeric(_))));
    assert_eq!(map, before);
}

#[test]
fn duplicate_keys_are_rejected() {
    let map = SceneMap::new(0.04, 3).unwrap();
    assert!(matches!(map.crop(&[key(0, 0, 0), key(0, 0, 0)]), Err(Error::Misaligned(_))));
    let t = Tensor::zeros(&[2, 3]);
    assert!(FeatureBlock::new(vec![key(1, 1, 1), key(1, 1, 1)], t).is_err());
}

#[test]
fn wrong_width_is_rejected() {
    let mut map = SceneMap::new(0.04, 4).unwrap();
    assert!(matches!(map.write_back(&block(&[key(0, 0, 0)], 0.0)), Err(Error::Shape(_))));
}

fn random_map(seed: u64) -> SceneMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = SceneMap::new(0.05, 3).unwrap();
    for _ in 0..4 {
        let mut keys: Vec<VoxelKey> = (0..30)
            .map(|_| key(rng.random_range(-20..20), rng.random_range(-20..20), rng.random_range(-3..3)))
            .collect();
        keys.sort();
        keys.dedup();
        let data = (0..keys.len() * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        map.write_back(&FeatureBlock::new(keys.clone(), Tensor::matrix(keys.len(), 3, data).unwrap()).unwrap())
            .unwrap();
    }
    map
}

#[test]
fn snapshot_roundtrip_is_bit_exact() {
    let mut map = random_map(1);
    let mut store = ParamStore::new();
    let head = AuxHead::new(&mut store, "h", 3, 4, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    map.classify(&head, &store).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sfmp");
    save(&map, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, map);
    assert_eq!(to_bytes(&back).unwrap(), to_bytes(&map).unwrap());
}

#[test]
fn corrupted_snapshot_is_detected() {
    let bytes = to_bytes(&random_map(2)).unwrap();
    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(from_bytes(&flipped), Err(Error::Format(_))));
    assert!(matches!(from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Format(_))));
    assert!(matches!(from_bytes(b"SF"), Err(Error::Format(_))));
}

#[test]
fn classify_matches_head_argmax() {
    let mut map = random_map(3);
    let mut store = ParamStore::new();
    let head = AuxHead::new(&mut store, "h", 3, 4, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let labels = classify_map(&mut map, &head, &store).unwrap();
    assert_eq!(labels.len(), map.len());
    for (k, l) in labels {
        let logits = head.logits(&store, &Tensor::matrix(1, 3, map.get(&k).unwrap().feature.clone()).unwrap()).unwrap();
        assert_eq!(argmax(logits.row(0)) as u32, l);
        assert_eq!(map.get(&k).unwrap().cached_label, Some(l));
    }
    let wrong = AuxHead::new(&mut store, "w", 4, 4, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(matches!(map.classify(&wrong, &store), Err(Error::Shape(_))));
}

#[test]
fn ply_lists_every_voxel() {
    let mut map = random_map(4);
    let mut store = ParamStore::new();
    let head = AuxHead::new(&mut store, "h", 3, 4, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    map.classify(&head, &store).unwrap();
    let mut out = Vec::new();
    write_ply(&map, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
    assert_eq!(body.len(), map.len());
    assert!(text.contains(&format!("element vertex {}", map.len())));
}
