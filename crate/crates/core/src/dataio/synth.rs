//! Procedural rooms: a floor, four walls and labelled furniture
//! primitives, plus a camera trajectory orbiting the room centre.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::LabeledMesh;
use super::shapes::Shape;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

pub const NUM_CLASSES: usize = 8;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "floor",
    "wall",
    "box_furniture",
    "cylinder_furniture",
    "sphere_object",
    "table_slab",
    "door_panel",
    "clutter",
];

pub const FLOOR: u32 = 0;
pub const WALL: u32 = 1;
pub const BOX: u32 = 2;
pub const CYLINDER: u32 = 3;
pub const SPHERE: u32 = 4;
pub const TABLE: u32 = 5;
pub const DOOR: u32 = 6;
pub const CLUTTER: u32 = 7;

/// Base albedo per class. Several classes share similar colours on
/// purpose so that appearance alone is ambiguous.
const ALBEDO: [[f64; 3]; NUM_CLASSES] = [
    [0.58, 0.46, 0.34],
    [0.80, 0.78, 0.72],
    [0.46, 0.32, 0.22],
    [0.44, 0.34, 0.24],
    [0.30, 0.46, 0.72],
    [0.52, 0.38, 0.26],
    [0.70, 0.64, 0.56],
    [0.70, 0.30, 0.30],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Room footprint bounds (x and y extents are drawn in this range).
    pub room_min: f64,
    pub room_max: f64,
    pub wall_height: f64,
    pub boxes: usize,
    pub cylinders: usize,
    pub spheres: usize,
    pub tables: usize,
    pub doors: usize,
    pub clutter: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Target triangle edge length of the ground-truth mesh.
    pub mesh_spacing: f64,
    /// Radius around the room centre kept free for the camera.
    pub clear_radius: f64,
    /// Standard deviation of additive Gaussian depth noise in meters.
    pub depth_noise_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room_min: 3.8,
            room_max: 5.0,
            wall_height: 2.4,
            boxes: 2,
            cylinders: 2,
            spheres: 2,
            tables: 1,
            doors: 1,
            clutter: 3,
            frames: 20,
            width: 48,
            height: 36,
            focal: 42.0,
            mesh_spacing: 0.04,
            clear_radius: 1.0,
            depth_noise_std: 0.0,
        }
    }
}

impl SceneSpec {
    /// A spec without any furniture: floor and walls only.
    pub fn empty_room() -> Self {
        Self {
            boxes: 0,
            cylinders: 0,
            spheres: 0,
            tables: 0,
            doors: 0,
            clutter: 0,
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.room_min > 0.0 && self.room_max >= self.room_min && self.wall_height > 0.0) {
            return Err(Error::Config("room dimensions must be positive and ordered".into()));
        }
        if !(self.mesh_spacing > 0.0 && self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Config("mesh spacing, focal length and image size must be positive".into()));
        }
        if !(self.depth_noise_std >= 0.0) {
            return Err(Error::Config("depth noise must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub class: u32,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    /// Room extent `[W, D, H]`; the room spans `[0,W]×[0,D]`.
    pub room: [f64; 3],
    pub primitives: Vec<Primitive>,
    pub intrinsics: Intrinsics,
    pub trajectory: Vec<Pose>,
    pub mesh: LabeledMesh,
    pub depth_noise_std: f64,
}

/// Axis-aligned footprint on the floor, used to keep primitives apart.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Footprint {
    fn overlaps(&self, o: &Footprint, margin: f64) -> bool {
        self.lo[0] < o.hi[0] + margin && o.lo[0] < self.hi[0] + margin && self.lo[1] < o.hi[1] + margin && o.lo[1] < self.hi[1] + margin
    }

    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = (self.lo[0] - p[0]).max(p[0] - self.hi[0]).max(0.0);
        let dy = (self.lo[1] - p[1]).max(p[1] - self.hi[1]).max(0.0);
        (dx * dx + dy * dy).sqrt()
    }
}

struct Placer<'a> {
    rng: &'a mut ChaCha8Rng,
    room: [f64; 3],
    clear_radius: f64,
    taken: Vec<Footprint>,
}

const WALL_MARGIN: f64 = 0.05;
const GAP: f64 = 0.08;
const ATTEMPTS: usize = 400;

impl Placer<'_> {
    /// Finds a free spot for a footprint of half extents `half`.
    fn place(&mut self, half: [f64; 2], what: &str) -> Result<[f64; 2]> {
        let centre = [self.room[0] / 2.0, self.room[1] / 2.0];
        for _ in 0..ATTEMPTS {
            let lo_x = WALL_MARGIN + half[0];
            let lo_y = WALL_MARGIN + half[1];
            let (hi_x, hi_y) = (self.room[0] - lo_x, self.room[1] - lo_y);
            if hi_x <= lo_x || hi_y <= lo_y {
                break;
            }
            let c = [self.rng.random_range(lo_x..hi_x), self.rng.random_range(lo_y..hi_y)];
            let fp = Footprint {
                lo: [c[0] - half[0], c[1] - half[1]],
                hi: [c[0] + half[0], c[1] + half[1]],
            };
            if fp.distance_to(centre) < self.clear_radius || self.taken.iter().any(|t| t.overlaps(&fp, GAP)) {
                continue;
            }
            self.taken.push(fp);
            return Ok(c);
        }
        Err(Error::Generation(format!("no room left to place a {what}")))
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(spec.room_min..=spec.room_max);
    let d = rng.random_range(spec.room_min..=spec.room_max);
    let h = spec.wall_height;
    let room = [w, d, h];
    if w.min(d) < 2.0 * spec.clear_radius + 0.4 {
        return Err(Error::Generation("room too small for the camera clearance".into()));
    }
    let mut prims = Vec::new();
    let add = |prims: &mut Vec<Primitive>, rng: &mut ChaCha8Rng, shape: Shape, class: u32| {
        let albedo = jitter(rng, ALBEDO[class as usize], 0.04);
        prims.push(Primitive { shape, class, albedo });
    };
    add(
        &mut prims,
        &mut rng,
        Shape::Rect {
            axis: 2,
            offset: 0.0,
            lo: [0.0, 0.0],
            hi: [w, d],
        },
        FLOOR,
    );
    for (axis, offset, extent) in [(0, 0.0, d), (0, w, d), (1, 0.0, w), (1, d, w)] {
        add(
            &mut prims,
            &mut rng,
            Shape::Rect {
                axis,
                offset,
                lo: [0.0, 0.0],
                hi: [extent, h],
            },
            WALL,
        );
    }

    let mut placer = Placer {
        rng: &mut rng,
        room,
        clear_radius: spec.clear_radius,
        taken: Vec::new(),
    };
    let mut placed: Vec<(Shape, u32)> = Vec::new();
    // doors first: they need a free stretch of wall
    for _ in 0..spec.doors {
        let (pw, ph, thick, depth_clear) = (0.85, 2.0_f64.min(h - 0.1), 0.04, 0.45);
        let mut ok = false;
        for _ in 0..ATTEMPTS {
            let wall = placer.rng.random_range(0..4usize);
            let along = if wall < 2 { d } else { w };
            if along < pw + 0.4 {
                continue;
            }
            let s = placer.rng.random_range(0.2..along - pw - 0.2);
            let (lo, hi, fp) = match wall {
                0 => ([0.0, s, 0.0], [thick, s + pw, ph], ([0.0, s], [depth_clear, s + pw])),
                1 => ([w - thick, s, 0.0], [w, s + pw, ph], ([w - depth_clear, s], [w, s + pw])),
                2 => ([s, 0.0, 0.0], [s + pw, thick, ph], ([s, 0.0], [s + pw, depth_clear])),
                _ => ([s, d - thick, 0.0], [s + pw, d, ph], ([s, d - depth_clear], [s + pw, d])),
            };
            let fp = Footprint { lo: fp.0, hi: fp.1 };
            if placer.taken.iter().any(|t| t.overlaps(&fp, GAP)) {
                continue;
            }
            placer.taken.push(fp);
            placed.push((Shape::Aabb { min: lo, max: hi }, DOOR));
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::Generation("no free wall for a door".into()));
        }
    }
    let mut table_tops = Vec::new();
    for _ in 0..spec.tables {
        let half = [placer.rng.random_range(0.4..0.7), placer.rng.random_range(0.3..0.5)];
        let z = placer.rng.random_range(0.65..0.78);
        let c = placer.place(half, "table")?;
        let (lo, hi) = ([c[0] - half[0], c[1] - half[1], z], [c[0] + half[0], c[1] + half[1], z + 0.05]);
        table_tops.push((lo, hi));
        placed.push((Shape::Aabb { min: lo, max: hi }, TABLE));
    }
    for _ in 0..spec.boxes {
        let half = [placer.rng.random_range(0.2..0.5), placer.rng.random_range(0.2..0.5)];
        let top = placer.rng.random_range(0.4..1.3);
        let c = placer.place(half, "box")?;
        placed.push((
            Shape::Aabb {
                min: [c[0] - half[0], c[1] - half[1], 0.0],
                max: [c[0] + half[0], c[1] + half[1], top],
            },
            BOX,
        ));
    }
    for _ in 0..spec.cylinders {
        let r = placer.rng.random_range(0.15..0.32);
        let top = placer.rng.random_range(0.4..1.2);
        let c = placer.place([r, r], "cylinder")?;
        placed.push((
            Shape::Cylinder {
                center: c,
                radius: r,
                z0: 0.0,
                z1: top,
            },
            CYLINDER,
        ));
    }
    for _ in 0..spec.spheres {
        let r = placer.rng.random_range(0.15..0.3);
        let c = placer.place([r, r], "sphere")?;
        placed.push((
            Shape::Sphere {
                center: [c[0], c[1], r],
                radius: r,
            },
            SPHERE,
        ));
    }
    for i in 0..spec.clutter {
        let half = [placer.rng.random_range(0.06..0.13), placer.rng.random_range(0.06..0.13)];
        let height = placer.rng.random_range(0.08..0.25);
        // every other piece goes on a table when there is one
        let shape = if i % 2 == 1 && !table_tops.is_empty() {
            let (lo, hi) = table_tops[i % table_tops.len()];
            let cx = placer.rng.random_range(lo[0] + half[0]..hi[0] - half[0]);
            let cy = placer.rng.random_range(lo[1] + half[1]..hi[1] - half[1]);
            Shape::Aabb {
                min: [cx - half[0], cy - half[1], hi[2]],
                max: [cx + half[0], cy + half[1], hi[2] + height],
            }
        } else {
            let c = placer.place(half, "clutter")?;
            Shape::Aabb {
                min: [c[0] - half[0], c[1] - half[1], 0.0],
                max: [c[0] + half[0], c[1] + half[1], height],
            }
        };
        placed.push((shape, CLUTTER));
    }
    for (shape, class) in placed {
        if class == CLUTTER {
            // clutter colour varies per piece
            let albedo = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
            prims.push(Primitive { shape, class, albedo });
        } else {
            add(&mut prims, &mut rng, shape, class);
        }
    }

    let intrinsics = spec.intrinsics()?;
    let trajectory = orbit(&mut rng, room, spec.frames)?;
    let mesh = LabeledMesh::from_primitives(&prims, spec.mesh_spacing);
    Ok(SyntheticScene {
        seed,
        room,
        primitives: prims,
        intrinsics,
        trajectory,
        mesh,
        depth_noise_std: spec.depth_noise_std,
    })
}

/// Poses circling the room centre, looking outward and slightly down, with
/// per-frame jitter.
fn orbit(rng: &mut ChaCha8Rng, room: [f64; 3], frames: usize) -> Result<Vec<Pose>> {
    let (cx, cy) = (room[0] / 2.0, room[1] / 2.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let radius = rng.random_range(0.3..0.5);
    (0..frames)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / frames.max(1) as f64 + rng.random_range(-0.08..0.08);
            let r = radius + rng.random_range(-0.08..0.08);
            let eye = Vector3::new(cx + r * a.cos(), cy + r * a.sin(), rng.random_range(1.2..1.5));
            let yaw = a + rng.random_range(-0.3..0.3);
            let pitch: f64 = rng.random_range(0.35..0.65);
            let dir = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin());
            Pose::look_at(eye, eye + dir)
        })
        .collect()
}
