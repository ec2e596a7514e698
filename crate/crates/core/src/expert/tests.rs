use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::{Encoder2dConfig, Encoder3dConfig, Frame};
use crate::geometry::{ColorImage, DepthImage, Intrinsics, Pose, VoxelKey};
use crate::numerics::gradcheck::{check_gradients, GradCheckConfig};
use crate::scene_map::SceneMap;

const D: usize = 6;

fn expert(store: &mut ParamStore, layers: usize, heads: usize) -> Expert {
    let cfg = ExpertConfig {
        layers,
        hidden: 8,
        heads,
        attention: AttentionKind::Softmax,
    };
    Expert::new(store, &cfg, D, 5, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::matrix(n, D, (0..n * D).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn keys(n: usize) -> Vec<VoxelKey> {
    (0..n as i64).map(|i| VoxelKey::new(i, -i, 2 * i).unwrap()).collect()
}

fn blocks(seed: u64, n: usize) -> [FeatureBlock; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [0, 1, 2].map(|_| FeatureBlock::new(keys(n), random_rows(&mut rng, n)).unwrap())
}

fn zero_affine(store: &mut ParamStore, a: &Affine) {
    store.value_mut(a.w).fill(0.0);
    store.value_mut(a.b).fill(0.0);
}

#[test]
fn source_encoding_is_additive() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 1, 1);
    let zero = vec![0.0; D];
    let e2 = source_encode(&zero, Source::TwoD, &e, &store).unwrap();
    assert_eq!(e2, store.value(e.encodings[2]).data());
    let x: Vec<f64> = (0..D).map(|i| i as f64 * 0.3).collect();
    let a = source_encode(&x, Source::Global, &e, &store).unwrap();
    let b = source_encode(&x, Source::ThreeD, &e, &store).unwrap();
    let (eg, e3) = (store.value(e.encodings[0]).data(), store.value(e.encodings[1]).data());
    for i in 0..D {
        assert!((a[i] - b[i] - (eg[i] - e3[i])).abs() < 1e-15);
    }
}

#[test]
fn zero_key_projection_gives_uniform_weights() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 2, 1);
    let k = e.layers[0].k;
    store.value_mut(k).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_rows(&mut rng, 4);
    let (_, w) = cross_attention_layer(t.row(0), [t.row(1), t.row(2), t.row(3)], 0, &e, &store).unwrap();
    for v in w {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn zero_values_and_ffn_leave_the_skip_path() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 1, 1);
    let layer = e.layers[0].clone();
    zero_affine(&mut store, &layer.v);
    zero_affine(&mut store, &layer.ffn_out);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_rows(&mut rng, 4);
    let (out, _) = cross_attention_layer(t.row(0), [t.row(1), t.row(2), t.row(3)], 0, &e, &store).unwrap();
    let ln = |x: &[f64], n: &Norm| {
        crate::numerics::layer_norm(
            x,
            crate::encoders::layers::NORM_EPS,
            Some((store.value(n.gain).data(), store.value(n.bias).data())),
        )
        .unwrap()
    };
    let expected = ln(&ln(t.row(0), &layer.attn_norm), &layer.ffn_norm);
    for (a, b) in out.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn weights_lie_on_the_simplex() {
    for heads in [1, 2, 3] {
        let mut store = ParamStore::new();
        let e = expert(&mut store, 3, heads);
        let [p, x3, x2] = blocks(7, 50);
        let (out, logits, trace) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();
        assert_eq!(out.features.shape(), &[50, D]);
        assert_eq!(logits.shape(), &[50, 3]);
        assert_eq!(trace.layers.len(), 3);
        assert!(trace.simplex_violation() < 1e-12);
    }
}

#[test]
fn output_rows_are_normalized() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 2, 1);
    let [p, x3, x2] = blocks(8, 20);
    let (out, _, _) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();
    for i in 0..out.len() {
        let r = out.features.row(i);
        let mean = r.iter().sum::<f64>() / D as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / D as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn voxels_are_independent_and_permutable() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 2, 1);
    let [p, x3, x2] = blocks(9, 12);
    let (out, _, _) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();

    let perm: Vec<usize> = (0..12).rev().collect();
    let permute = |b: &FeatureBlock| {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| b.features.row(i).to_vec()).collect();
        FeatureBlock::new(perm.iter().map(|&i| b.keys[i]).collect(), Tensor::from_rows(&rows).unwrap()).unwrap()
    };
    let (pout, _, _) = expert_forward(&permute(&p), &permute(&x3), &permute(&x2), &e, &store).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(pout.features.row(j), out.features.row(i));
    }

    let mut zeroed = [p.clone(), x3.clone(), x2.clone()];
    for b in zeroed.iter_mut() {
        for i in 1..12 {
            b.features.row_mut(i).fill(0.0);
        }
    }
    let (zout, _, _) = expert_forward(&zeroed[0], &zeroed[1], &zeroed[2], &e, &store).unwrap();
    assert_eq!(zout.features.row(0), out.features.row(0));
}

#[test]
fn global_and_2d_inputs_are_not_interchangeable() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 2, 1);
    let [p, x3, x2] = blocks(10, 5);
    let (a, _, _) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();
    let (b, _, _) = expert_forward(&x2, &x3, &p, &e, &store).unwrap();
    assert!(a.features.max_abs_diff(&b.features) > 1e-6);
}

#[test]
fn single_layer_matches_layer_function() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 1, 1);
    let [p, x3, x2] = blocks(12, 1);
    let (out, _, trace) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();
    let tok: Vec<Vec<f64>> = [(&p, Source::Global), (&x3, Source::ThreeD), (&x2, Source::TwoD)]
        .iter()
        .map(|(b, s)| source_encode(b.features.row(0), *s, &e, &store).unwrap())
        .collect();
    let (q, w) = cross_attention_layer(&tok[0], [&tok[0], &tok[1], &tok[2]], 0, &e, &store).unwrap();
    let expected = crate::numerics::layer_norm(&q, crate::encoders::layers::OUTPUT_NORM_EPS, None).unwrap();
    for (a, b) in out.features.row(0).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(trace.layers[0].row(0), &w);
}

#[test]
fn misaligned_and_empty_blocks() {
    let mut store = ParamStore::new();
    let e = expert(&mut store, 1, 1);
    let [p, x3, mut x2] = blocks(13, 3);
    x2.keys.swap(0, 1);
    assert!(matches!(expert_forward(&p, &x3, &x2, &e, &store), Err(Error::Misaligned(_))));
    let empty = FeatureBlock::new(Vec::new(), Tensor::zeros(&[0, D])).unwrap();
    let (out, logits, trace) = expert_forward(&empty, &empty, &empty, &e, &store).unwrap();
    assert!(out.is_empty() && logits.rows() == 0 && trace.layers[0].rows() == 0);
}

#[test]
fn raw_linear_variant_runs() {
    let mut store = ParamStore::new();
    let cfg = ExpertConfig {
        layers: 2,
        hidden: 8,
        heads: 1,
        attention: AttentionKind::RawLinear,
    };
    let e = Expert::new(&mut store, &cfg, D, 5, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let [p, x3, x2] = blocks(14, 6);
    let (out, _, _) = expert_forward(&p, &x3, &x2, &e, &store).unwrap();
    assert!(out.features.is_finite());
}

#[test]
fn bad_head_count_is_rejected() {
    let mut store = ParamStore::new();
    let cfg = ExpertConfig {
        heads: 4,
        ..Default::default()
    };
    assert!(Expert::new(&mut store, &cfg, D, 5, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn expert_gradients_match_finite_differences() {
    for heads in [1, 2] {
        let mut store = ParamStore::new();
        let e = expert(&mut store, 2, heads);
        let [p, x3, x2] = blocks(15, 4);
        let targets = std::sync::Arc::new(vec![Some(0), Some(2), None, Some(1)]);
        let report = check_gradients(&mut store, None, GradCheckConfig::default(), |g, s| {
            let (a, b, c) = (g.constant(p.features.clone()), g.constant(x3.features.clone()), g.constant(x2.features.clone()));
            let out = e.forward(g, s, a, b, c)?;
            let fl = g.focal_loss(out.logits, targets.clone(), 1.0)?;
            let sq = g.mul(out.features, out.features)?;
            let w = g.constant(Tensor::matrix(4, D, (0..4 * D).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap());
            let sq = g.mul(sq, w)?;
            let s2 = g.sum(sq);
            g.weighted_sum(&[(fl, 1.0), (s2, 0.1)])
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-5, "{:?}", report.worst());
    }
}

fn small_model() -> Model {
    Model::new(ModelConfig {
        feature_dim: 8,
        classes: 3,
        head_hidden: 6,
        resolution: 0.1,
        encoder2d: Encoder2dConfig { width: 4, context_width: 6 },
        encoder3d: Encoder3dConfig { blocks: 2, base_width: 4 },
        expert: ExpertConfig {
            layers: 2,
            hidden: 8,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap()
}

fn wall_frame(index: usize, depth: f64) -> Frame {
    let k = Intrinsics::new(12.0, 12.0, 7.5, 5.5, 16, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(index as u64);
    let color = ColorImage::from_vec(16, 12, (0..192).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap();
    let d = DepthImage::from_vec(16, 12, (0..192).map(|i| depth + 0.01 * (i % 16) as f64).collect()).unwrap();
    Frame::new(color, d, k, Pose::identity(), index).unwrap()
}

#[test]
fn invalid_depth_frame_is_a_no_op() {
    let model = small_model();
    let mut map = model.new_map().unwrap();
    fuse_frame(&mut map, &wall_frame(0, 1.0), &model).unwrap();
    let before = map.clone();
    let diag = fuse_frame(&mut map, &wall_frame(1, 5.0), &model).unwrap();
    assert_eq!(diag.block_size, 0);
    assert_eq!(map, before);
}

#[test]
fn fusing_twice_counts_twice() {
    let model = small_model();
    let mut map = model.new_map().unwrap();
    let f = wall_frame(0, 1.0);
    let d1 = fuse_frame(&mut map, &f, &model).unwrap();
    assert_eq!(d1.novel, d1.block_size);
    let first = map.clone();
    let d2 = fuse_frame(&mut map, &f, &model).unwrap();
    assert_eq!(d2.novel, 0);
    assert_eq!(d2.block_size, d1.block_size);
    let mut changed = false;
    for (k, r) in map.iter() {
        assert_eq!(r.obs_count, 2);
        changed |= r.feature != first.get(k).unwrap().feature;
    }
    assert!(changed);
    assert!(d2.to_json().contains("\"block_size\""));
}

#[test]
fn map_shape_must_match_model() {
    let model = small_model();
    let mut map = SceneMap::new(0.1, 5).unwrap();
    assert!(matches!(fuse_frame(&mut map, &wall_frame(0, 1.0), &model), Err(Error::Config(_))));
}

#[test]
fn checkpoint_roundtrip() {
    let model = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sftn");
    model.save(&path).unwrap();
    let back = Model::load(model.config.clone(), &path).unwrap();
    assert_eq!(back.store.named_values(), model.store.named_values());
}

#[test]
fn majority_tie_goes_low() {
    let logits = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(majority_labels(&logits, &[vec![0, 1], vec![0, 2, 3]]), vec![0, 1]);
}
