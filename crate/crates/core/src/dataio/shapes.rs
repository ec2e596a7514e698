//! Analytic primitives: ray intersection, surface distance and
//! triangulation.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Hits closer than this are ignored.
const T_MIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Rectangle in the plane `p[axis] = offset`, bounded by `lo..hi` in the
    /// two remaining axes (in increasing axis order).
    Rect {
        axis: usize,
        offset: f64,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Aabb {
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Vertical cylinder with both caps.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z0: f64,
        z1: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

fn unit(axis: usize, sign: f64) -> Vector3<f64> {
    let mut n = Vector3::zeros();
    n[axis] = sign;
    n
}

/// A ray hit: parameter along the (unnormalized) direction and the outward
/// surface normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
}

impl Shape {
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        match self {
            Shape::Rect { axis, offset, lo, hi } => {
                let a = *axis;
                if d[a] == 0.0 {
                    return None;
                }
                let t = (offset - o[a]) / d[a];
                if t <= T_MIN {
                    return None;
                }
                let (u, v) = other_axes(a);
                let p = o + d * t;
                if p[u] < lo[0] || p[u] > hi[0] || p[v] < lo[1] || p[v] > hi[1] {
                    return None;
                }
                Some(Hit {
                    t,
                    normal: unit(a, if d[a] > 0.0 { -1.0 } else { 1.0 }),
                })
            }
            Shape::Aabb { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut enter = unit(0, 1.0);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut near, mut far) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    if near > far {
                        std::mem::swap(&mut near, &mut far);
                    }
                    if near > t0 {
                        t0 = near;
                        enter = unit(a, if d[a] > 0.0 { -1.0 } else { 1.0 });
                    }
                    t1 = t1.min(far);
                }
                (t0 <= t1 && t0 > T_MIN).then_some(Hit { t: t0, normal: enter })
            }
            Shape::Cylinder { center, radius, z0, z1 } => {
                let mut best: Option<Hit> = None;
                let mut consider = |h: Hit| {
                    if h.t > T_MIN && best.is_none_or(|b| h.t < b.t) {
                        best = Some(h);
                    }
                };
                let (ox, oy) = (o.x - center[0], o.y - center[1]);
                let a = d.x * d.x + d.y * d.y;
                if a > 0.0 {
                    let b = 2.0 * (ox * d.x + oy * d.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let s = disc.sqrt();
                        // numerically stable pair of roots
                        let q = -0.5 * (b + b.signum() * s);
                        let roots = if q != 0.0 { [q / a, c / q] } else { [0.0, 0.0] };
                        for t in roots {
                            let z = o.z + t * d.z;
                            if z >= *z0 && z <= *z1 {
                                let (px, py) = (ox + t * d.x, oy + t * d.y);
                                consider(Hit {
                                    t,
                                    normal: Vector3::new(px, py, 0.0) / *radius,
                                });
                            }
                        }
                    }
                }
                if d.z != 0.0 {
                    for (zc, sign) in [(*z0, -1.0), (*z1, 1.0)] {
                        let t = (zc - o.z) / d.z;
                        let (px, py) = (ox + t * d.x, oy + t * d.y);
                        if px * px + py * py <= radius * radius {
                            consider(Hit {
                                t,
                                normal: unit(2, sign),
                            });
                        }
                    }
                }
                best
            }
            Shape::Sphere { center, radius } => {
                let oc = o - Vector3::from(*center);
                let a = d.norm_squared();
                let b = 2.0 * oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let q = -0.5 * (b + b.signum() * s);
                let (mut r0, mut r1) = (q / a, c / q);
                if r0 > r1 {
                    std::mem::swap(&mut r0, &mut r1);
                }
                let t = if r0 > T_MIN { r0 } else { r1 };
                if !(t > T_MIN) {
                    return None;
                }
                let p = oc + d * t;
                Some(Hit { t, normal: p / *radius })
            }
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Rect { axis, offset, lo, hi } => {
                let (u, v) = other_axes(*axis);
                let du = (lo[0] - p[u]).max(p[u] - hi[0]).max(0.0);
                let dv = (lo[1] - p[v]).max(p[v] - hi[1]).max(0.0);
                (du * du + dv * dv + (p[*axis] - offset).powi(2)).sqrt()
            }
            Shape::Aabb { min, max } => {
                let mut outside = 0.0;
                let mut inside = f64::INFINITY;
                for a in 0..3 {
                    let e = (min[a] - p[a]).max(p[a] - max[a]);
                    if e > 0.0 {
                        outside += e * e;
                    }
                    inside = inside.min(-e);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
            Shape::Cylinder { center, radius, z0, z1 } => {
                let rho = ((p.x - center[0]).powi(2) + (p.y - center[1]).powi(2)).sqrt();
                let dr = rho - radius;
                let dz = (z0 - p.z).max(p.z - z1);
                if dr <= 0.0 && dz <= 0.0 {
                    (-dr).min(-dz)
                } else {
                    (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
                }
            }
            Shape::Sphere { center, radius } => ((p - Vector3::from(*center)).norm() - radius).abs(),
        }
    }

    /// Triangulates the surface with edges of roughly `spacing`.
    pub fn triangulate(&self, spacing: f64) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
        let mut m = MeshBuilder::default();
        match self {
            Shape::Rect { axis, offset, lo, hi } => m.rect(*axis, *offset, *lo, *hi, spacing),
            Shape::Aabb { min, max } => {
                for a in 0..3 {
                    let (u, v) = other_axes(a);
                    for off in [min[a], max[a]] {
                        m.rect(a, off, [min[u], min[v]], [max[u], max[v]], spacing);
                    }
                }
            }
            Shape::Cylinder { center, radius, z0, z1 } => {
                let nt = ((2.0 * PI * radius / spacing).ceil() as usize).max(8);
                let nz = ((z1 - z0) / spacing).ceil().max(1.0) as usize;
                let ring = |r: f64, z: f64, k: usize| {
                    let a = 2.0 * PI * k as f64 / nt as f64;
                    [center[0] + r * a.cos(), center[1] + r * a.sin(), z]
                };
                let side = m.grid(nz + 1, nt, |i, k| ring(*radius, z0 + (z1 - z0) * i as f64 / nz as f64, k));
                m.wrap_strips(side, nz + 1, nt);
                let nr = (radius / spacing).ceil().max(1.0) as usize;
                for z in [*z0, *z1] {
                    let hub = m.vertex([center[0], center[1], z]);
                    let rings = m.grid(nr, nt, |i, k| ring(radius * (i + 1) as f64 / nr as f64, z, k));
                    for k in 0..nt {
                        m.tri(hub, rings + k as u32, rings + ((k + 1) % nt) as u32);
                    }
                    m.wrap_strips(rings, nr, nt);
                }
            }
            Shape::Sphere { center, radius } => {
                let nlat = ((PI * radius / spacing).ceil() as usize).max(4);
                let nlon = ((2.0 * PI * radius / spacing).ceil() as usize).max(8);
                let south = m.vertex([center[0], center[1], center[2] - radius]);
                let north = m.vertex([center[0], center[1], center[2] + radius]);
                let body = m.grid(nlat - 1, nlon, |i, k| {
                    let th = PI * (i + 1) as f64 / nlat as f64 - PI / 2.0;
                    let ph = 2.0 * PI * k as f64 / nlon as f64;
                    [
                        center[0] + radius * th.cos() * ph.cos(),
                        center[1] + radius * th.cos() * ph.sin(),
                        center[2] + radius * th.sin(),
                    ]
                });
                let last = body + ((nlat - 2) * nlon) as u32;
                for k in 0..nlon {
                    let k1 = (k + 1) % nlon;
                    m.tri(south, body + k as u32, body + k1 as u32);
                    m.tri(north, last + k as u32, last + k1 as u32);
                }
                m.wrap_strips(body, nlat - 1, nlon);
            }
        }
        (m.vertices, m.triangles)
    }
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn vertex(&mut self, p: [f64; 3]) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn tri(&mut self, a: u32, b: u32, c: u32) {
        self.triangles.push([a, b, c]);
    }

    /// Adds `rows × cols` vertices; returns the index of the first.
    fn grid(&mut self, rows: usize, cols: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> u32 {
        let base = self.vertices.len() as u32;
        for i in 0..rows {
            for k in 0..cols {
                self.vertices.push(f(i, k));
            }
        }
        base
    }

    /// Quads between consecutive rows of a grid whose columns wrap around.
    fn wrap_strips(&mut self, base: u32, rows: usize, cols: usize) {
        for i in 0..rows.saturating_sub(1) {
            for k in 0..cols {
                let k1 = (k + 1) % cols;
                let at = |r: usize, c: usize| base + (r * cols + c) as u32;
                self.tri(at(i, k), at(i, k1), at(i + 1, k));
                self.tri(at(i, k1), at(i + 1, k1), at(i + 1, k));
            }
        }
    }

    fn rect(&mut self, axis: usize, offset: f64, lo: [f64; 2], hi: [f64; 2], spacing: f64) {
        let (u, v) = other_axes(axis);
        let nu = ((hi[0] - lo[0]) / spacing).ceil().max(1.0) as usize;
        let nv = ((hi[1] - lo[1]) / spacing).ceil().max(1.0) as usize;
        let base = self.grid(nu + 1, nv + 1, |i, k| {
            let mut p = [0.0; 3];
            p[axis] = offset;
            p[u] = lo[0] + (hi[0] - lo[0]) * i as f64 / nu as f64;
            p[v] = lo[1] + (hi[1] - lo[1]) * k as f64 / nv as f64;
            p
        });
        let at = |i: usize, k: usize| base + (i * (nv + 1) + k) as u32;
        for i in 0..nu {
            for k in 0..nv {
                self.tri(at(i, k), at(i + 1, k), at(i, k + 1));
                self.tri(at(i + 1, k), at(i + 1, k + 1), at(i, k + 1));
            }
        }
    }
}
