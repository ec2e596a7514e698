//! Checks shared by the integration tests and the acceptance harness. Each
//! returns a one-line summary on success and a diagnostic on failure.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfuse::encoders::sparse::{submanifold_plan, tap_offset};
use semfuse::evaluation::ConfusionMatrix;
use semfuse::expert::{cross_attention_layer, Expert, ExpertConfig};
use semfuse::geometry::{transfer_labels, voxelize, PointSample, VoxelKey};
use semfuse::numerics::{Graph, ParamStore, Tensor};

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- voxelize

/// Brute force: floor each coordinate, group by linear search.
fn voxelize_oracle(points: &[PointSample], res: f64) -> Vec<([i64; 3], Vec<f64>, usize)> {
    let mut cells: Vec<([i64; 3], Vec<f64>, usize)> = Vec::new();
    for p in points {
        let k = [0, 1, 2].map(|a| (p.position[a] / res).floor() as i64);
        match cells.iter_mut().find(|c| c.0 == k) {
            Some(c) => {
                c.1.iter_mut().zip(&p.feature).for_each(|(a, b)| *a += b);
                c.2 += 1;
            }
            None => cells.push((k, p.feature.clone(), 1)),
        }
    }
    for c in &mut cells {
        let n = c.2 as f64;
        c.1.iter_mut().for_each(|v| *v /= n);
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    cells
}

pub fn voxelize_matches_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let res = rng.random_range(0.02..0.3);
        let n = rng.random_range(1..80);
        let points: Vec<PointSample> = (0..n)
            .map(|_| PointSample {
                position: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)),
                feature: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                label: None,
            })
            .collect();
        let got = voxelize(&points, res).map_err(|e| e.to_string())?;
        let want = voxelize_oracle(&points, res);
        ensure(got.len() == want.len(), || format!("instance {inst}: {} cells, oracle {}", got.len(), want.len()))?;
        for ((k, cell), (wk, wf, wc)) in got.iter().zip(&want) {
            ensure([k.x as i64, k.y as i64, k.z as i64] == *wk, || format!("instance {inst}: key {k:?} vs {wk:?}"))?;
            ensure(cell.count == *wc, || format!("instance {inst}: count mismatch at {k:?}"))?;
            for (a, b) in cell.feature.iter().zip(wf) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure(worst < 1e-12, || format!("mean feature error {worst:e}"))?;
    Ok(format!("{instances} instances, max feature error {worst:.1e}"))
}

// ---------------------------------------------------------- transfer_labels

pub fn transfer_labels_matches_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for inst in 0..instances {
        let n = rng.random_range(1..120);
        // integer lattice coordinates make exact distance ties common
        let lattice = inst % 2 == 0;
        let coord = |rng: &mut ChaCha8Rng| {
            if lattice {
                rng.random_range(0..6) as f64 * 0.1
            } else {
                rng.random_range(0.0..1.0)
            }
        };
        let verts: Vec<[f64; 3]> = (0..n).map(|_| [coord(&mut rng), coord(&mut rng), coord(&mut rng)]).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let queries: Vec<[f64; 3]> = (0..40).map(|_| [coord(&mut rng), coord(&mut rng), coord(&mut rng)]).collect();
        let got = transfer_labels(&verts, &labels, &queries).map_err(|e| e.to_string())?;
        for (q, g) in queries.iter().zip(&got) {
            let d2 = |v: &[f64; 3]| (0..3).map(|a| (v[a] - q[a]).powi(2)).sum::<f64>();
            let mut best = 0;
            for (i, v) in verts.iter().enumerate() {
                if d2(v) < d2(&verts[best]) {
                    best = i;
                }
            }
            ensure(*g == labels[best], || format!("instance {inst}: query {q:?} got {g}, oracle {}", labels[best]))?;
        }
    }
    Ok(format!("{instances} instances, all labels equal (lowest-index tie-break)"))
}

// ------------------------------------------------------- sparse vs dense conv

pub fn sparse_conv_matches_dense(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let side = rng.random_range(2..6i32);
        let density = rng.random_range(0.1..0.9);
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut keys = Vec::new();
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    if rng.random_bool(density) {
                        keys.push(VoxelKey::new(x as i64 - 2, y as i64 + 5, z as i64).map_err(|e| e.to_string())?);
                    }
                }
            }
        }
        if keys.is_empty() {
            continue;
        }
        let x: Vec<f64> = (0..keys.len() * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..27 * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let xv = g.constant(Tensor::matrix(keys.len(), cin, x.clone()).map_err(|e| e.to_string())?);
        let wv = g.constant(Tensor::matrix(27 * cin, cout, w.clone()).map_err(|e| e.to_string())?);
        let bv = g.constant(Tensor::vector(b.clone()));
        let y = g
            .conv(xv, wv, Some(bv), Arc::new(submanifold_plan(&keys)))
            .map_err(|e| e.to_string())?;
        let y = g.value(y);

        // dense zero-padded grid evaluated at the occupied sites
        let index: HashMap<(i32, i32, i32), usize> = keys.iter().enumerate().map(|(i, k)| ((k.x, k.y, k.z), i)).collect();
        for (o, k) in keys.iter().enumerate() {
            for c in 0..cout {
                let mut acc = b[c];
                for t in 0..27 {
                    let (dx, dy, dz) = tap_offset(t);
                    let Some(&i) = index.get(&(k.x + dx, k.y + dy, k.z + dz)) else { continue };
                    for a in 0..cin {
                        acc += x[i * cin + a] * w[(t * cin + a) * cout + c];
                    }
                }
                worst = worst.max((acc - y.row(o)[c]).abs());
            }
        }
        ensure(worst < 1e-12, || format!("instance {inst}: error {worst:e}"))?;
    }
    Ok(format!("{instances} instances, max error {worst:.1e}"))
}

// ------------------------------------------------------ confusion tallies

pub fn confusion_matches_tally(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for inst in 0..instances {
        let c = rng.random_range(2..9usize);
        let n = rng.random_range(1..300);
        let ignore = 255u32;
        let pairs: Vec<(u32, u32)> = (0..n)
            .map(|_| {
                let gt = if rng.random_bool(0.1) { ignore } else { rng.random_range(0..c as u32) };
                (rng.random_range(0..c as u32), gt)
            })
            .collect();
        let mut cm = ConfusionMatrix::new(c, ignore);
        // streamed in two shards, merged
        let (a, b) = pairs.split_at(n / 2);
        let mut other = ConfusionMatrix::new(c, ignore);
        for (p, g) in a {
            cm.accumulate(*p, *g).map_err(|e| e.to_string())?;
        }
        for (p, g) in b {
            other.accumulate(*p, *g).map_err(|e| e.to_string())?;
        }
        cm.merge(&other).map_err(|e| e.to_string())?;
        for gt in 0..c {
            for pr in 0..c {
                let want = pairs.iter().filter(|(p, g)| *g == gt as u32 && *p == pr as u32).count() as u64;
                ensure(cm.get(gt, pr) == want, || format!("instance {inst}: cell ({gt},{pr})"))?;
            }
        }
        let valid: Vec<&(u32, u32)> = pairs.iter().filter(|(_, g)| *g != ignore).collect();
        if valid.is_empty() {
            continue;
        }
        // brute-force metrics from the raw stream
        let mut ious = Vec::new();
        let mut recalls = Vec::new();
        let mut wiou = 0.0;
        for k in 0..c as u32 {
            let tp = valid.iter().filter(|(p, g)| *p == k && *g == k).count() as f64;
            let gtn = valid.iter().filter(|(_, g)| *g == k).count() as f64;
            let prn = valid.iter().filter(|(p, _)| *p == k).count() as f64;
            if gtn + prn - tp > 0.0 {
                let iou = tp / (gtn + prn - tp);
                ious.push(iou);
                wiou += gtn / valid.len() as f64 * iou;
            }
            if gtn > 0.0 {
                recalls.push(tp / gtn);
            }
        }
        let s = cm.summary().map_err(|e| e.to_string())?;
        let miou = ious.iter().sum::<f64>() / ious.len() as f64;
        let macc = recalls.iter().sum::<f64>() / recalls.len() as f64;
        ensure((s.miou - miou).abs() < 1e-12 && (s.macc - macc).abs() < 1e-12 && (s.wiou - wiou).abs() < 1e-12, || {
            format!("instance {inst}: summary {s:?} vs ({miou}, {macc}, {wiou})")
        })?;
    }
    Ok(format!("{instances} instances, tallies and summaries equal"))
}

// --------------------------------------------------- cross-attention layer

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = 1.0 / (var + 1e-5).sqrt();
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) * s * g + b).collect()
}

fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let cols = w.cols();
    (0..cols)
        .map(|j| {
            let dot: f64 = x.iter().enumerate().map(|(i, v)| v * w.row(i)[j]).sum();
            dot + b.map_or(0.0, |b| b.data()[j])
        })
        .collect()
}

/// Scalar re-derivation of one expert layer.
pub fn attention_oracle(query: &[f64], tokens: [&[f64]; 3], l: usize, e: &Expert, s: &ParamStore) -> (Vec<f64>, [f64; 3]) {
    let layer = &e.layers[l];
    let d = query.len();
    let heads = e.config.heads;
    let dh = d / heads;
    let q = affine(query, s.value(layer.q.w), Some(s.value(layer.q.b)));
    let k: Vec<Vec<f64>> = tokens.iter().map(|t| affine(t, s.value(layer.k), None)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|t| affine(t, s.value(layer.v.w), Some(s.value(layer.v.b)))).collect();
    let mut fused = vec![0.0; d];
    let mut weights = [0.0; 3];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        let logits: Vec<f64> = (0..3)
            .map(|t| q[r.clone()].iter().zip(&k[t][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = ex.iter().sum();
        for t in 0..3 {
            let w = ex[t] / z;
            weights[t] += w / heads as f64;
            for i in r.clone() {
                fused[i] += w * v[t][i];
            }
        }
    }
    let pre: Vec<f64> = query.iter().zip(&fused).map(|(a, b)| a + b).collect();
    let hdn = layer_norm(&pre, s.value(layer.attn_norm.gain).data(), s.value(layer.attn_norm.bias).data());
    let f = affine(&hdn, s.value(layer.ffn_in.w), Some(s.value(layer.ffn_in.b)));
    let f: Vec<f64> = f.into_iter().map(|x| x.max(0.0)).collect();
    let f = affine(&f, s.value(layer.ffn_out.w), Some(s.value(layer.ffn_out.b)));
    let pre: Vec<f64> = hdn.iter().zip(&f).map(|(a, b)| a + b).collect();
    let out = layer_norm(&pre, s.value(layer.ffn_norm.gain).data(), s.value(layer.ffn_norm.bias).data());
    (out, weights)
}

pub fn cross_attention_matches_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let heads = [1, 2, 4][inst % 3];
        let d = 4 * rng.random_range(1..5);
        let mut store = ParamStore::new();
        let cfg = ExpertConfig {
            layers: 2,
            hidden: rng.random_range(3..20),
            heads,
            ..Default::default()
        };
        let e = Expert::new(&mut store, &cfg, d, 5, 3, &mut rng).map_err(|e| e.to_string())?;
        // perturb biases and norm parameters so they are exercised
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in store.value_mut(id).data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let mut vec = |scale: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(-scale..scale)).collect() };
        let (q, a, b, c) = (vec(2.0), vec(2.0), vec(2.0), vec(2.0));
        let l = inst % 2;
        let (out, w) = cross_attention_layer(&q, [&a, &b, &c], l, &e, &store).map_err(|e| e.to_string())?;
        let (want, ww) = attention_oracle(&q, [&a, &b, &c], l, &e, &store);
        for (x, y) in out.iter().zip(&want).chain(w.iter().zip(&ww)) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("{instances} instances (1, 2 and 4 heads), max deviation {worst:.1e}"))
}

// --------------------------------------------------------- attention contract

pub fn attention_contract(voxels: usize) -> Check {
    use semfuse::expert::expert_forward;
    use semfuse::scene_map::FeatureBlock;
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let mut store = ParamStore::new();
    let d = 40;
    let mut e = Expert::new(&mut store, &ExpertConfig::default(), d, 32, 8, &mut rng).map_err(|e| e.to_string())?;
    let keys: Vec<VoxelKey> = (0..voxels as i64).map(|i| VoxelKey::new(i % 100, i / 100, 0).unwrap()).collect();
    let mut block = |scale: f64| {
        let data = (0..voxels * d).map(|_| rng.random_range(-scale..scale)).collect();
        FeatureBlock::new(keys.clone(), Tensor::matrix(voxels, d, data).unwrap()).unwrap()
    };
    let (p, x3, x2) = (block(3.0), block(3.0), block(3.0));
    let (_, _, trace) = expert_forward(&p, &x3, &x2, &e, &store).map_err(|e| e.to_string())?;
    let violation = trace.simplex_violation();
    ensure(violation < 1e-9, || format!("simplex violation {violation:e}"))?;

    for layer in &mut e.layers {
        store.value_mut(layer.k).fill(0.0);
    }
    let (_, _, trace) = expert_forward(&p, &x3, &x2, &e, &store).map_err(|e| e.to_string())?;
    let uniform = trace
        .layers
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|w| (w - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    ensure(uniform < 1e-12, || format!("K=0 weights deviate from 1/3 by {uniform:e}"))?;
    Ok(format!(
        "{voxels} voxels x {} layers: simplex violation {violation:.1e}, K=0 deviation {uniform:.1e}",
        e.layers.len()
    ))
}

// ------------------------------------------------------------------ drift

/// Fuses `frames` frames of a synthetic orbit and checks the
/// normalization statistics of every stored feature.
pub fn drift_invariant(frames: usize) -> Check {
    use semfuse::dataio::{generate_scene, render_sequence_frame, SceneSpec};
    use semfuse::expert::{fuse_frame, Model, ModelConfig};
    let spec = SceneSpec {
        frames,
        ..SceneSpec::default()
    };
    let scene = generate_scene(77, &spec).map_err(|e| e.to_string())?;
    let model = Model::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut map = model.new_map().map_err(|e| e.to_string())?;
    for i in 0..frames {
        let f = render_sequence_frame(&scene, i).map_err(|e| e.to_string())?;
        fuse_frame(&mut map, &f, &model).map_err(|e| e.to_string())?;
    }
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    let mut max_count = 0;
    for (_, r) in map.iter() {
        ensure(r.feature.iter().all(|v| v.is_finite()), || "non-finite stored feature".into())?;
        let n = r.feature.len() as f64;
        let m = r.feature.iter().sum::<f64>() / n;
        let v = r.feature.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        mean_err = mean_err.max(m.abs());
        var_err = var_err.max((v - 1.0).abs());
        max_count = max_count.max(r.obs_count);
    }
    ensure(mean_err < 1e-6 && var_err < 1e-6, || format!("mean error {mean_err:e}, variance error {var_err:e}"))?;
    Ok(format!(
        "{frames} frames, {} voxels (max {max_count} observations): |mean| <= {mean_err:.1e}, |var-1| <= {var_err:.1e}",
        map.len()
    ))
}

// --------------------------------------------------------------- locality

/// Median `fuse_frame` time for the same frame against maps of two sizes.
pub fn locality(small: usize, large: usize, repeats: usize) -> Check {
    use semfuse::dataio::{generate_scene, render_sequence_frame, SceneSpec};
    use semfuse::expert::{fuse_frame, Model, ModelConfig};
    use semfuse::scene_map::FeatureBlock;
    use std::time::Instant;
    let scene = generate_scene(5, &SceneSpec::default()).map_err(|e| e.to_string())?;
    let frame = render_sequence_frame(&scene, 0).map_err(|e| e.to_string())?;
    let model = Model::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let d = model.config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut build = |total: usize| -> Result<semfuse::scene_map::SceneMap, String> {
        let mut map = model.new_map().map_err(|e| e.to_string())?;
        fuse_frame(&mut map, &frame, &model).map_err(|e| e.to_string())?;
        // filler far outside the frustum
        let need = total.saturating_sub(map.len());
        let keys: Vec<VoxelKey> = (0..need as i64)
            .map(|i| VoxelKey::new(5000 + i % 300, 5000 + (i / 300) % 300, i / 90000).unwrap())
            .collect();
        let data = (0..need * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let block = FeatureBlock::new(keys, Tensor::matrix(need, d, data).unwrap()).map_err(|e| e.to_string())?;
        map.write_back(&block).map_err(|e| e.to_string())?;
        Ok(map)
    };
    let mut maps = [build(small)?, build(large)?];
    let sizes = [maps[0].len(), maps[1].len()];
    let mut times = [Vec::new(), Vec::new()];
    let mut blocks = Vec::new();
    for r in 0..repeats {
        let order = if r % 2 == 0 { [0, 1] } else { [1, 0] };
        for i in order {
            let t = Instant::now();
            let diag = fuse_frame(&mut maps[i], &frame, &model).map_err(|e| e.to_string())?;
            times[i].push(t.elapsed().as_secs_f64());
            blocks.push(diag.block_size);
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (ts, tl) = (median(&mut times[0]), median(&mut times[1]));
    ensure(blocks.windows(2).all(|w| w[0] == w[1]), || "block size changed between runs".into())?;
    let rel = (tl - ts).abs() / ts;
    ensure(rel < 0.2, || format!("{:.1} ms vs {:.1} ms ({:.0}%)", ts * 1e3, tl * 1e3, rel * 100.0))?;
    Ok(format!(
        "block {} voxels: {:.1} ms at {} voxels, {:.1} ms at {} voxels ({:+.1}%)",
        blocks[0],
        ts * 1e3,
        sizes[0],
        tl * 1e3,
        sizes[1],
        (tl - ts) / ts * 100.0
    ))
}

// --------------------------------------------------------------- geometry

pub fn geometry_roundtrips() -> Check {
    use semfuse::dataio::{generate_scene, render_frame, SceneSpec};
    use semfuse::geometry::{lift_pixels, reproject, DepthImage, Intrinsics, Pose};
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let mut lift_err = 0.0f64;
    for _ in 0..200 {
        let intr = Intrinsics::new(
            rng.random_range(20.0..600.0),
            rng.random_range(20.0..600.0),
            rng.random_range(5.0..30.0),
            rng.random_range(5.0..20.0),
            32,
            24,
        )
        .map_err(|e| e.to_string())?;
        let eye = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..3.0));
        let target = eye + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let Ok(pose) = Pose::look_at(eye, target) else { continue };
        let depth = DepthImage::from_vec(32, 24, (0..32 * 24).map(|_| rng.random_range(0.1..2.9)).collect()).unwrap();
        for p in lift_pixels(&depth, &intr, &pose, 3.0) {
            let (u, v, d) = reproject(&p.position, &pose, &intr);
            let (pu, pv) = ((p.pixel as usize % 32) as f64, (p.pixel as usize / 32) as f64);
            let want = depth.data[p.pixel as usize];
            lift_err = lift_err.max((u - pu).abs()).max((v - pv).abs()).max((d - want).abs());
        }
    }
    ensure(lift_err < 1e-9, || format!("lift/reproject error {lift_err:e}"))?;

    let mut residual = 0.0f64;
    let mut points = 0;
    for seed in 0..4 {
        let scene = generate_scene(seed, &SceneSpec::default()).map_err(|e| e.to_string())?;
        for pose in &scene.trajectory {
            let (_, depth) = render_frame(&scene, pose, &scene.intrinsics);
            for p in lift_pixels(&depth, &scene.intrinsics, pose, f64::INFINITY) {
                let r = scene
                    .primitives
                    .iter()
                    .map(|q| q.shape.surface_distance(&p.position))
                    .fold(f64::INFINITY, f64::min);
                residual = residual.max(r);
                points += 1;
            }
        }
    }
    ensure(residual < 1e-6, || format!("renderer surface residual {residual:e} m"))?;

    let intr = Intrinsics::new(4.0, 4.0, 1.5, 0.5, 4, 2).unwrap();
    let cut = 3.0f64;
    let values = [cut, cut.next_up(), cut.next_down(), 0.0, 2.0, 3.5, f64::MIN_POSITIVE, 1e-300];
    let depth = DepthImage::from_vec(4, 2, values.to_vec()).unwrap();
    let kept: Vec<u32> = lift_pixels(&depth, &intr, &Pose::identity(), cut).iter().map(|p| p.pixel).collect();
    let want: Vec<u32> = values.iter().enumerate().filter(|(_, d)| **d > 0.0 && **d <= cut).map(|(i, _)| i as u32).collect();
    ensure(kept == want, || format!("cutoff kept {kept:?}, expected {want:?}"))?;
    Ok(format!(
        "lift/reproject {lift_err:.1e}; surface residual {residual:.1e} m over {points} points; cutoff exact"
    ))
}

// --------------------------------------------------------------- protocol

pub fn tiny_trainer(seed: u64, epochs: usize) -> Result<semfuse::training::Trainer, String> {
    use semfuse::dataio::{generate_scene, SceneSpec};
    use semfuse::encoders::{Encoder2dConfig, Encoder3dConfig};
    use semfuse::expert::{Model, ModelConfig};
    use semfuse::training::{LossConfig, TrainConfig, TrainScene, Trainer};
    let spec = SceneSpec {
        frames: 5,
        width: 24,
        height: 18,
        focal: 21.0,
        ..SceneSpec::default()
    };
    let cfg = ModelConfig {
        feature_dim: 8,
        head_hidden: 8,
        resolution: 0.08,
        encoder2d: Encoder2dConfig {
            width: 6,
            context_width: 8,
        },
        encoder3d: Encoder3dConfig {
            blocks: 2,
            base_width: 6,
        },
        expert: ExpertConfig {
            layers: 2,
            hidden: 16,
            ..Default::default()
        },
        ..ModelConfig::default()
    };
    let scenes = (0..3)
        .map(|s| {
            let sc = generate_scene(s, &spec)?;
            TrainScene::from_synthetic(format!("tiny{s}"), &sc, cfg.resolution)
        })
        .collect::<semfuse::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let model = Model::new(cfg).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        epochs,
        micro_batch: 2,
        seed,
        ..TrainConfig::default()
    };
    Trainer::new(model, scenes, train, LossConfig::default()).map_err(|e| e.to_string())
}

pub fn protocol_checks() -> Check {
    use semfuse::training::{EpochPlan, TrainConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    for _ in 0..200 {
        let counts: Vec<usize> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0..30)).collect();
        let cfg = TrainConfig {
            micro_batch: rng.random_range(1..6),
            frames_per_scene_step: rng.random_range(1..4),
            ..TrainConfig::default()
        };
        let plan = EpochPlan::draw(&mut rng, &counts, &cfg);
        let mut seen: Vec<Vec<u32>> = counts.iter().map(|n| vec![0; *n]).collect();
        for (s, f) in plan.micro_batches.iter().flatten() {
            seen[*s][*f] += 1;
        }
        ensure(seen.iter().flatten().all(|c| *c == 1), || format!("coverage broken for {counts:?}"))?;
    }

    let (epochs, scenes, p) = (1000, 16, 0.3);
    let cfg = TrainConfig {
        reset_probability: p,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let counts = vec![4; scenes];
    let resets: usize = (0..epochs)
        .map(|_| EpochPlan::draw(&mut rng, &counts, &cfg).resets.iter().filter(|r| **r).count())
        .sum();
    let n = (epochs * scenes) as f64;
    let (mean, sigma) = (n * p, (n * p * (1.0 - p)).sqrt());
    let z = (resets as f64 - mean) / sigma;
    ensure(z.abs() <= 3.0, || format!("{resets} resets, expected {mean:.0} +- {sigma:.1}"))?;

    let run = |seed| -> Result<(Vec<(String, Tensor)>, Vec<semfuse::training::StepMetrics>), String> {
        let mut t = tiny_trainer(seed, 2)?;
        t.run().map_err(|e| e.to_string())?;
        Ok((t.model.store.named_values(), t.history))
    };
    let (a, ha) = run(5)?;
    let (b, hb) = run(5)?;
    let bitwise = a.len() == b.len()
        && a.iter().zip(&b).all(|((n1, t1), (n2, t2))| {
            n1 == n2 && t1.data().iter().zip(t2.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    ensure(bitwise && ha == hb, || "seeded reruns differ".into())?;
    let (c, _) = run(6)?;
    ensure(a != c, || "different seeds gave identical parameters".into())?;
    Ok(format!(
        "coverage exact on 200 plans; {resets} resets in {} draws (z = {z:+.2}); 2-epoch reruns bit-identical over {} steps",
        epochs * scenes,
        ha.len()
    ))
}

// ---------------------------------------------------------------- metrics

pub fn metric_checks() -> Check {
    let cm = ConfusionMatrix::from_counts(&[vec![2, 1], vec![1, 2]], 255).map_err(|e| e.to_string())?;
    let s = cm.summary().map_err(|e| e.to_string())?;
    ensure(
        (s.miou - 0.5).abs() < 1e-15 && (s.macc - 2.0 / 3.0).abs() < 1e-15 && (s.wiou - 0.5).abs() < 1e-15,
        || format!("[[2,1],[1,2]] gave {s:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let c = rng.random_range(2..9);
        let rows: Vec<Vec<u64>> = (0..c).map(|_| (0..c).map(|_| rng.random_range(0..15)).collect()).collect();
        if rows.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let mut perm: Vec<usize> = (0..c).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let mut permuted = vec![vec![0; c]; c];
        for g in 0..c {
            for p in 0..c {
                permuted[perm[g]][perm[p]] = rows[g][p];
            }
        }
        let a = ConfusionMatrix::from_counts(&rows, 255).unwrap().summary().unwrap();
        let b = ConfusionMatrix::from_counts(&permuted, 255).unwrap().summary().unwrap();
        let diff = (a.miou - b.miou).abs().max((a.macc - b.macc).abs()).max((a.wiou - b.wiou).abs());
        ensure(diff < 1e-12, || format!("relabeling changed metrics by {diff:e}"))?;
    }
    Ok(format!("[[2,1],[1,2]] -> {:.4}/{:.4}/{:.4}; 200 relabelings invariant", s.miou, s.macc, s.wiou))
}
