//! Procedural watertight shape families at desk scale, with recorded
//! ground-truth poses and grasp annotations.
//!
//! All dimensions are meters. Cylinders and cuboids follow the documented
//! primitive ranges (diameters and side lengths 0.10–0.80, heights
//! 0.25–1.00). Mugs are hollow cups with a stitched square-profile handle
//! (genus 1); bowls are spherical-cap shells. Handle and rim grasp frames
//! are recorded analytically at generation time so transfer experiments
//! have exact targets.

use nalgebra::{Matrix3, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::mesh::TriangleMesh;

/// A circle of valid grasp centers (rims are rotation symmetric).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RimCircle {
    pub center: [f64; 3],
    pub radius: f64,
}

impl RimCircle {
    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::new(self.center[0], self.center[1], self.center[2])
    }

    /// Distance from a point to the nearest point on the circle.
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.center_vec();
        let radial = (d.x * d.x + d.y * d.y).sqrt();
        ((radial - self.radius).powi(2) + d.z * d.z).sqrt()
    }

    pub fn transformed(&self, t: &RigidTransform) -> RimCircle {
        // valid only for transforms that keep the circle axis vertical
        RimCircle {
            center: {
                let c = t.apply(&self.center_vec());
                [c.x, c.y, c.z]
            },
            radius: self.radius,
        }
    }
}

/// Grasp annotations recorded at canonical pose.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraspAnnotations {
    pub handle_grasp: Option<RigidTransform>,
    pub rim_grasp: Option<RigidTransform>,
    pub rim_circle: Option<RimCircle>,
}

/// Watertight cylinder centered at the origin with axis z.
pub fn make_cylinder(diameter: f64, height: f64, segments: usize) -> Result<TriangleMesh> {
    if !(0.10..=0.80).contains(&diameter) {
        return Err(Error::InvalidParameter(format!(
            "cylinder diameter {diameter} outside [0.10, 0.80]"
        )));
    }
    if !(0.25..=1.00).contains(&height) {
        return Err(Error::InvalidParameter(format!(
            "cylinder height {height} outside [0.25, 1.00]"
        )));
    }
    if segments < 8 {
        return Err(Error::InvalidParameter(format!(
            "cylinder needs at least 8 segments, got {segments}"
        )));
    }
    let r = diameter / 2.0;
    let (z0, z1) = (-height / 2.0, height / 2.0);
    let n = segments as u32;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for &z in &[z0, z1] {
        for i in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
            vertices.push(Vector3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    let bottom_center = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, z0));
    let top_center = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, z1));

    let mut triangles = Vec::with_capacity(4 * segments);
    for i in 0..n {
        let j = (i + 1) % n;
        // side quad, outward winding
        triangles.push([i, j, n + j]);
        triangles.push([i, n + j, n + i]);
        // caps
        triangles.push([bottom_center, j, i]);
        triangles.push([top_center, n + i, n + j]);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Axis-aligned cuboid with square cross-section, centered at the origin.
pub fn make_cuboid(side: f64, height: f64) -> Result<TriangleMesh> {
    if !(0.10..=0.80).contains(&side) {
        return Err(Error::InvalidParameter(format!(
            "cuboid side {side} outside [0.10, 0.80]"
        )));
    }
    if !(0.25..=1.00).contains(&height) {
        return Err(Error::InvalidParameter(format!(
            "cuboid height {height} outside [0.25, 1.00]"
        )));
    }
    let (hx, hz) = (side / 2.0, height / 2.0);
    let vertices = vec![
        Vector3::new(-hx, -hx, -hz),
        Vector3::new(hx, -hx, -hz),
        Vector3::new(hx, hx, -hz),
        Vector3::new(-hx, hx, -hz),
        Vector3::new(-hx, -hx, hz),
        Vector3::new(hx, -hx, hz),
        Vector3::new(hx, hx, hz),
        Vector3::new(-hx, hx, hz),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom
        [4, 5, 6],
        [4, 6, 7], // top
        [0, 1, 5],
        [0, 5, 4], // -y
        [1, 2, 6],
        [1, 6, 5], // +x
        [2, 3, 7],
        [2, 7, 6], // +y
        [3, 0, 4],
        [3, 4, 7], // -x
    ];
    TriangleMesh::new(vertices, triangles)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MugParams {
    pub body_diameter: f64,
    pub body_height: f64,
    pub wall_thickness: f64,
    pub handle_radius: f64,
    pub handle_tube_radius: f64,
}

impl Default for MugParams {
    fn default() -> Self {
        Self {
            body_diameter: 0.17,
            body_height: 0.13,
            wall_thickness: 0.007,
            handle_radius: 0.032,
            handle_tube_radius: 0.009,
        }
    }
}

impl MugParams {
    fn validate(&self) -> Result<()> {
        let checks = [
            (self.body_diameter, 0.10, 0.30, "body_diameter"),
            (self.body_height, 0.08, 0.25, "body_height"),
            (self.wall_thickness, 0.004, 0.02, "wall_thickness"),
            (self.handle_radius, 0.02, 0.06, "handle_radius"),
            (self.handle_tube_radius, 0.006, 0.014, "handle_tube_radius"),
        ];
        for (v, lo, hi, name) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "mug {name} {v} outside [{lo}, {hi}]"
                )));
            }
        }
        if self.handle_radius < 3.0 * self.handle_tube_radius {
            return Err(Error::InvalidParameter(
                "handle_radius must be at least 3x handle_tube_radius".into(),
            ));
        }
        if self.wall_thickness > 0.2 * self.body_diameter {
            return Err(Error::InvalidParameter(
                "wall too thick for body diameter".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> MugParams {
        MugParams {
            body_diameter: self.body_diameter * s,
            body_height: self.body_height * s,
            wall_thickness: self.wall_thickness * s,
            handle_radius: self.handle_radius * s,
            handle_tube_radius: self.handle_tube_radius * s,
        }
    }
}

/// A generated mug with its analytic grasp annotations.
#[derive(Debug, Clone)]
pub struct Mug {
    pub mesh: TriangleMesh,
    pub annotations: GraspAnnotations,
    pub params: MugParams,
}

/// Hollow cup with a stitched square-profile handle in the +x half-plane.
/// The base sits on z = 0; the body axis is z.
pub fn make_mug(params: &MugParams) -> Result<Mug> {
    params.validate()?;
    let r_o = params.body_diameter / 2.0;
    let r_i = r_o - params.wall_thickness;
    let h = params.body_height;
    let floor = params.wall_thickness;
    let a = params.handle_radius;
    let rho = params.handle_tube_radius;

    // Wall tessellation sized so one grid cell matches the tube section.
    let n = ((std::f64::consts::PI * r_o / rho).round() as usize).clamp(16, 64);
    let m = ((h / (2.0 * rho)).round() as usize).clamp(6, 48);
    let dz = h / m as f64;
    let cell_width = 2.0 * r_o * (std::f64::consts::PI / n as f64).sin();
    if cell_width > 3.0 * rho {
        return Err(Error::MeshGeneration(
            "handle tube too thin for the wall tessellation".into(),
        ));
    }

    // Handle circle in the x-z plane: entry angle ~109 degrees puts the
    // center slightly outside the wall so the loop curves back in.
    let psi0 = 1.9f64;
    let z_c = 0.52 * h;
    let c_x = r_o - a * psi0.cos();
    let z_lo_t = z_c - a * psi0.sin();
    let z_hi_t = z_c + a * psi0.sin();
    let row_of = |z: f64| (z / dz - 0.5).round() as i64;
    let r_lo = row_of(z_lo_t).clamp(1, m as i64 - 2) as usize;
    let r_hi = row_of(z_hi_t).clamp(1, m as i64 - 2) as usize;
    if r_hi < r_lo + 2 {
        return Err(Error::MeshGeneration(
            "handle attachments collapse onto the same wall rows".into(),
        ));
    }

    // azimuth of grid column i; the cell between columns 0 and 1 is
    // centered on azimuth 0 where the handle lives
    let phi = |i: usize| 2.0 * std::f64::consts::PI * (i as f64 - 0.5) / n as f64;

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let ring = |r: f64, z: f64, verts: &mut Vec<Vector3<f64>>| -> Vec<u32> {
        (0..n)
            .map(|i| {
                let p = phi(i);
                verts.push(Vector3::new(r * p.cos(), r * p.sin(), z));
                (verts.len() - 1) as u32
            })
            .collect()
    };

    // Outer wall rings (bottom to top), then rim, inner wall, floors.
    let outer_rings: Vec<Vec<u32>> = (0..=m)
        .map(|r| ring(r_o, r as f64 * dz, &mut vertices))
        .collect();
    let inner_top = ring(r_i, h, &mut vertices);
    let inner_bottom = ring(r_i, floor, &mut vertices);
    let inner_floor_center = {
        vertices.push(Vector3::new(0.0, 0.0, floor));
        (vertices.len() - 1) as u32
    };
    let outer_floor_center = {
        vertices.push(Vector3::new(0.0, 0.0, 0.0));
        (vertices.len() - 1) as u32
    };

    let quad = |tris: &mut Vec<[u32; 3]>, a: u32, b: u32, c: u32, d: u32| {
        tris.push([a, b, c]);
        tris.push([a, c, d]);
    };

    // Outer wall, skipping the two handle holes at columns (0, 1).
    for r in 0..m {
        for i in 0..n {
            if i == 0 && (r == r_lo || r == r_hi) {
                continue;
            }
            let j = (i + 1) % n;
            quad(
                &mut triangles,
                outer_rings[r][i],
                outer_rings[r][j],
                outer_rings[r + 1][j],
                outer_rings[r + 1][i],
            );
        }
    }
    // Rim annulus: outer top ring to inner top ring.
    for i in 0..n {
        let j = (i + 1) % n;
        quad(
            &mut triangles,
            outer_rings[m][i],
            outer_rings[m][j],
            inner_top[j],
            inner_top[i],
        );
    }
    // Inner wall: top ring down to inner bottom ring (normals face the cavity).
    for i in 0..n {
        let j = (i + 1) % n;
        quad(
            &mut triangles,
            inner_top[i],
            inner_top[j],
            inner_bottom[j],
            inner_bottom[i],
        );
    }
    // Inner floor fan and outer floor fan.
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([inner_floor_center, inner_bottom[i], inner_bottom[j]]);
        triangles.push([outer_floor_center, outer_rings[0][j], outer_rings[0][i]]);
    }

    // Handle tube stations along the circle, kept clear of the wall.
    let cos_cutoff = (r_o + 0.8 * rho - c_x) / a;
    let psi_max = cos_cutoff.clamp(-1.0, 1.0).acos();
    let arc = 2.0 * psi_max;
    let stations = ((arc * a / (1.5 * rho)).round() as usize).clamp(8, 48);
    let tube_rings: Vec<Vec<u32>> = (0..=stations)
        .map(|s| {
            let psi = -psi_max + arc * s as f64 / stations as f64;
            let center = Vector3::new(c_x + a * psi.cos(), 0.0, z_c + a * psi.sin());
            let normal = Vector3::new(psi.cos(), 0.0, psi.sin());
            let binormal = Vector3::y();
            // fixed cyclic corner order (+y+n, -y+n, -y-n, +y-n)
            [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
                .iter()
                .map(|&(sy, sn)| {
                    vertices.push(center + binormal * (sy * rho) + normal * (sn * rho));
                    (vertices.len() - 1) as u32
                })
                .collect()
        })
        .collect();
    for s in 0..stations {
        for k in 0..4 {
            let k2 = (k + 1) % 4;
            quad(
                &mut triangles,
                tube_rings[s][k],
                tube_rings[s + 1][k],
                tube_rings[s + 1][k2],
                tube_rings[s][k2],
            );
        }
    }

    // Hole boundary loops on the wall (columns 0 and 1 at the hole rows),
    // ordered so traversal matches the free directed edges left by the
    // surrounding wall quads.
    let hole_loop = |r: usize| -> [u32; 4] {
        [
            outer_rings[r][0],     // (y-, z-)
            outer_rings[r][1],     // (y+, z-)
            outer_rings[r + 1][1], // (y+, z+)
            outer_rings[r + 1][0], // (y-, z+)
        ]
    };
    // Bridge a tube end ring onto a hole loop. The hole side always
    // traverses forward; edge parity forces the ring correspondence to run
    // backwards at the lower attachment and forwards at the upper one. Only
    // the corner offset is free, chosen by nearest matching to avoid twist.
    let mut stitch = |ring: &[u32], hole: [u32; 4], reversed: bool| {
        let corr = |offset: usize, k: usize| -> usize {
            if reversed {
                (offset + 4 - k) % 4
            } else {
                (offset + k) % 4
            }
        };
        let offset = (0..4)
            .min_by(|&o1, &o2| {
                let cost = |o: usize| -> f64 {
                    (0..4)
                        .map(|k| {
                            let hv = vertices[hole[k] as usize];
                            let rv = vertices[ring[corr(o, k)] as usize];
                            (hv - rv).norm()
                        })
                        .sum()
                };
                cost(o1).partial_cmp(&cost(o2)).unwrap()
            })
            .unwrap();
        for k in 0..4 {
            let k2 = (k + 1) % 4;
            quad(
                &mut triangles,
                hole[k],
                hole[k2],
                ring[corr(offset, k2)],
                ring[corr(offset, k)],
            );
        }
    };
    stitch(&tube_rings[0], hole_loop(r_lo), true);
    stitch(&tube_rings[stations], hole_loop(r_hi), false);

    let mesh = TriangleMesh::new(vertices, triangles)?;
    mesh.check_watertight().map_err(|e| {
        Error::MeshGeneration(format!("mug stitching produced an open surface: {e}"))
    })?;
    if mesh.euler_characteristic() != 0 {
        return Err(Error::MeshGeneration(format!(
            "mug has Euler characteristic {}, expected 0",
            mesh.euler_characteristic()
        )));
    }
    if mesh.signed_volume() <= 0.0 {
        return Err(Error::MeshGeneration("mug wound inside out".into()));
    }

    // Handle grasp at the outermost point of the loop: approach points at
    // the mug axis (-x), closing direction y.
    let grasp_pos = Vector3::new(c_x + a, 0.0, z_c);
    let handle_rot = Matrix3::from_columns(&[Vector3::z(), Vector3::y(), -Vector3::x()]);
    let handle_grasp = RigidTransform::new(handle_rot, grasp_pos)?;
    // Rim grasp opposite the handle: approach downward, closing tangentially.
    let rim_radius = r_o - params.wall_thickness / 2.0;
    let rim_pos = Vector3::new(-rim_radius, 0.0, h);
    let rim_rot = Matrix3::from_columns(&[-Vector3::x(), Vector3::y(), -Vector3::z()]);
    let rim_grasp = RigidTransform::new(rim_rot, rim_pos)?;

    Ok(Mug {
        mesh,
        annotations: GraspAnnotations {
            handle_grasp: Some(handle_grasp),
            rim_grasp: Some(rim_grasp),
            rim_circle: Some(RimCircle {
                center: [0.0, 0.0, h],
                radius: rim_radius,
            }),
        },
        params: *params,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BowlParams {
    pub rim_diameter: f64,
    pub rim_angle_deg: f64,
    pub wall_thickness: f64,
    pub segments: usize,
}

impl Default for BowlParams {
    fn default() -> Self {
        Self {
            rim_diameter: 0.18,
            rim_angle_deg: 80.0,
            wall_thickness: 0.007,
            segments: 48,
        }
    }
}

/// A generated bowl with its rim annotation.
#[derive(Debug, Clone)]
pub struct Bowl {
    pub mesh: TriangleMesh,
    pub annotations: GraspAnnotations,
    pub params: BowlParams,
}

/// Spherical-cap shell opening upward, base resting on z = 0.
pub fn make_bowl(params: &BowlParams) -> Result<Bowl> {
    if !(0.10..=0.30).contains(&params.rim_diameter) {
        return Err(Error::InvalidParameter(format!(
            "bowl rim diameter {} outside [0.10, 0.30]",
            params.rim_diameter
        )));
    }
    if !(45.0..=100.0).contains(&params.rim_angle_deg) {
        return Err(Error::InvalidParameter(
            "bowl rim angle outside [45, 100] degrees".into(),
        ));
    }
    if params.segments < 16 {
        return Err(Error::InvalidParameter("bowl needs >= 16 segments".into()));
    }
    let theta_r = params.rim_angle_deg.to_radians();
    let rim_r = params.rim_diameter / 2.0;
    let s_o = rim_r / theta_r.sin();
    let s_i = s_o - params.wall_thickness;
    if s_i <= 0.0 {
        return Err(Error::InvalidParameter("bowl wall thicker than radius".into()));
    }
    let n = params.segments;
    let rows = (params.segments / 2).max(8);
    // sphere center at (0, 0, s_o): bottom pole touches z = 0
    let center_z = s_o;

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let ring = |radius_sphere: f64, theta: f64, verts: &mut Vec<Vector3<f64>>| -> Vec<u32> {
        (0..n)
            .map(|i| {
                let p = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let r = radius_sphere * theta.sin();
                let z = center_z - radius_sphere * theta.cos();
                verts.push(Vector3::new(r * p.cos(), r * p.sin(), z));
                (verts.len() - 1) as u32
            })
            .collect()
    };

    // Outer cap: pole (theta=0) up to the rim.
    let outer_rings: Vec<Vec<u32>> = (1..=rows)
        .map(|k| ring(s_o, theta_r * k as f64 / rows as f64, &mut vertices))
        .collect();
    let outer_pole = {
        vertices.push(Vector3::new(0.0, 0.0, 0.0));
        (vertices.len() - 1) as u32
    };
    let inner_rings: Vec<Vec<u32>> = (1..=rows)
        .map(|k| ring(s_i, theta_r * k as f64 / rows as f64, &mut vertices))
        .collect();
    let inner_pole = {
        vertices.push(Vector3::new(0.0, 0.0, center_z - s_i));
        (vertices.len() - 1) as u32
    };

    let quad = |tris: &mut Vec<[u32; 3]>, a: u32, b: u32, c: u32, d: u32| {
        tris.push([a, b, c]);
        tris.push([a, c, d]);
    };
    for i in 0..n {
        let j = (i + 1) % n;
        // pole fans: outer normals face down/out, inner face the cavity
        triangles.push([outer_pole, outer_rings[0][j], outer_rings[0][i]]);
        triangles.push([inner_pole, inner_rings[0][i], inner_rings[0][j]]);
    }
    for k in 0..rows - 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            quad(
                &mut triangles,
                outer_rings[k][i],
                outer_rings[k][j],
                outer_rings[k + 1][j],
                outer_rings[k + 1][i],
            );
            quad(
                &mut triangles,
                inner_rings[k][j],
                inner_rings[k][i],
                inner_rings[k + 1][i],
                inner_rings[k + 1][j],
            );
        }
    }
    // Rim annulus joining the caps.
    for i in 0..n {
        let j = (i + 1) % n;
        quad(
            &mut triangles,
            outer_rings[rows - 1][i],
            outer_rings[rows - 1][j],
            inner_rings[rows - 1][j],
            inner_rings[rows - 1][i],
        );
    }

    let mesh = TriangleMesh::new(vertices, triangles)?;
    mesh.check_watertight()
        .map_err(|e| Error::MeshGeneration(format!("bowl surface open: {e}")))?;
    if mesh.signed_volume() <= 0.0 {
        return Err(Error::MeshGeneration("bowl wound inside out".into()));
    }

    let rim_z_outer = center_z - s_o * theta_r.cos();
    let rim_z_inner = center_z - s_i * theta_r.cos();
    let rim_circle = RimCircle {
        center: [0.0, 0.0, 0.5 * (rim_z_outer + rim_z_inner)],
        radius: 0.5 * (s_o + s_i) * theta_r.sin(),
    };
    Ok(Bowl {
        mesh,
        annotations: GraspAnnotations {
            handle_grasp: None,
            rim_grasp: None,
            rim_circle: Some(rim_circle),
        },
        params: *params,
    })
}

/// Icosphere by repeated subdivision of an icosahedron, centered at the
/// origin. Used as an analytic-sphere reference surface in evaluations.
pub fn make_icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize() * radius)
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: std::collections::HashMap<(u32, u32), u32> =
            std::collections::HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for t in &triangles {
            let mut mids = [0u32; 3];
            for (k, (a, b)) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].iter().enumerate() {
                let key = (*a.min(b), *a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[*a as usize] + vertices[*b as usize]) / 2.0)
                        .normalize()
                        * radius;
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([t[0], mids[0], mids[2]]);
            next.push([t[1], mids[1], mids[0]]);
            next.push([t[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        triangles = next;
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Applies a random yaw about the world z axis and a random translation of
/// magnitude at most `translation_range`; returns the moved mesh and the
/// exact transform that was applied.
pub fn perturb_pose(
    mesh: &TriangleMesh,
    yaw_range: f64,
    translation_range: f64,
    seed: u64,
) -> (TriangleMesh, RigidTransform) {
    let mut rng = StdRng::seed_from_u64(seed);
    let yaw = if yaw_range > 0.0 {
        rng.gen_range(-yaw_range..yaw_range)
    } else {
        0.0
    };
    let translation = if translation_range > 0.0 {
        let dir = loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let norm = v.norm();
            if norm > 1e-6 && norm <= 1.0 {
                break v / norm;
            }
        };
        dir * rng.gen_range(0.0..translation_range)
    } else {
        Vector3::zeros()
    };
    let transform = RigidTransform {
        rotation: RigidTransform::from_yaw(yaw).rotation,
        translation,
    };
    (mesh.transformed(&transform), transform)
}

/// Parameter ranges for one shape family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    Cylinder {
        diameter: [f64; 2],
        height: [f64; 2],
        segments: usize,
    },
    Cuboid {
        side: [f64; 2],
        height: [f64; 2],
    },
    Mug {
        base: MugParams,
        /// Overall size factor range applied to every dimension.
        size_range: [f64; 2],
        /// Additional per-parameter relative jitter.
        jitter: f64,
    },
    Bowl {
        base: BowlParams,
        size_range: [f64; 2],
        jitter: f64,
    },
}

impl FamilySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::Cylinder { .. } => "cylinder",
            FamilySpec::Cuboid { .. } => "cuboid",
            FamilySpec::Mug { .. } => "mug",
            FamilySpec::Bowl { .. } => "bowl",
        }
    }
}

/// A corpus generation request: family ranges, instance count, pose
/// perturbation ranges, and the seed that makes it reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeFamilySpec {
    pub family: FamilySpec,
    pub count: usize,
    pub yaw_range_deg: f64,
    pub translation_range: f64,
    pub seed: u64,
}

/// One generated shape: the perturbed mesh plus everything needed to
/// evaluate against it later.
#[derive(Debug, Clone)]
pub struct GeneratedShape {
    pub family: String,
    pub params: serde_json::Value,
    pub mesh: TriangleMesh,
    /// The exact perturbation applied to the canonical mesh.
    pub ground_truth_pose: RigidTransform,
    /// Annotations at the canonical pose.
    pub annotations: GraspAnnotations,
}

fn range_sample(rng: &mut StdRng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Deterministically generates `spec.count` shapes; instance `i` uses the
/// stream `seed + i` so subsets reproduce independently of count.
pub fn generate_shapes(spec: &ShapeFamilySpec) -> Result<Vec<GeneratedShape>> {
    if spec.count == 0 {
        return Err(Error::InvalidParameter("shape count must be positive".into()));
    }
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = StdRng::seed_from_u64(spec.seed.wrapping_add(i as u64));
        let (mesh, params, annotations) = match &spec.family {
            FamilySpec::Cylinder {
                diameter,
                height,
                segments,
            } => {
                let d = range_sample(&mut rng, *diameter);
                let h = range_sample(&mut rng, *height);
                let mesh = make_cylinder(d, h, *segments)?;
                (
                    mesh,
                    serde_json::json!({"diameter": d, "height": h, "segments": segments}),
                    GraspAnnotations::default(),
                )
            }
            FamilySpec::Cuboid { side, height } => {
                let s = range_sample(&mut rng, *side);
                let h = range_sample(&mut rng, *height);
                let mesh = make_cuboid(s, h)?;
                (
                    mesh,
                    serde_json::json!({"side": s, "height": h}),
                    GraspAnnotations::default(),
                )
            }
            FamilySpec::Mug {
                base,
                size_range,
                jitter,
            } => {
                let s = range_sample(&mut rng, *size_range);
                let mut params = base.scaled(s);
                let mut jittered = |v: f64, rng: &mut StdRng| {
                    v * (1.0 + rng.gen_range(-*jitter..=*jitter))
                };
                params.body_diameter = jittered(params.body_diameter, &mut rng);
                params.body_height = jittered(params.body_height, &mut rng);
                params.handle_radius = jittered(params.handle_radius, &mut rng);
                let mug = make_mug(&params)?;
                (
                    mug.mesh,
                    serde_json::to_value(&params)?,
                    mug.annotations,
                )
            }
            FamilySpec::Bowl {
                base,
                size_range,
                jitter,
            } => {
                let s = range_sample(&mut rng, *size_range);
                let mut params = *base;
                params.rim_diameter *= s;
                params.wall_thickness *= s;
                params.rim_angle_deg *= 1.0 + rng.gen_range(-*jitter..=*jitter);
                let bowl = make_bowl(&params)?;
                (
                    bowl.mesh,
                    serde_json::to_value(&params)?,
                    bowl.annotations,
                )
            }
        };
        let (perturbed, pose) = perturb_pose(
            &mesh,
            spec.yaw_range_deg.to_radians(),
            spec.translation_range,
            spec.seed.wrapping_add(i as u64) ^ 0x700d,
        );
        out.push(GeneratedShape {
            family: spec.family.name().to_string(),
            params,
            mesh: perturbed,
            ground_truth_pose: pose,
            annotations,
        });
    }
    Ok(out)
}

/// Manifest entry describing one saved shape file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub index: usize,
    pub family: String,
    pub file: String,
    pub params: serde_json::Value,
    pub ground_truth_pose: RigidTransform,
    pub annotations: GraspAnnotations,
}

/// JSON manifest listing every shape file with its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub shapes: Vec<ShapeRecord>,
}

impl CorpusManifest {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&data)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Generates shapes, saves their meshes as OBJ under `dir`, and writes
/// `manifest.json`.
pub fn write_corpus(spec: &ShapeFamilySpec, dir: &std::path::Path) -> Result<CorpusManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shapes = generate_shapes(spec)?;
    let mut records = Vec::with_capacity(shapes.len());
    for (index, shape) in shapes.iter().enumerate() {
        let file = format!("shape_{index:04}.obj");
        shape.mesh.save_obj(&dir.join(&file))?;
        records.push(ShapeRecord {
            index,
            family: shape.family.clone(),
            file,
            params: shape.params.clone(),
            ground_truth_pose: shape.ground_truth_pose,
            annotations: shape.annotations.clone(),
        });
    }
    let manifest = CorpusManifest {
        seed: spec.seed,
        shapes: records,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cylinder_bounding_box_and_surface() {
        let mesh = make_cylinder(0.4, 0.5, 64).unwrap();
        let (lo, hi) = mesh.bounding_box();
        assert_relative_eq!(hi.x - lo.x, 0.4, epsilon = 1e-12);
        assert_relative_eq!(hi.y - lo.y, 0.4, epsilon = 1e-12);
        assert_relative_eq!(hi.z - lo.z, 0.5, epsilon = 1e-12);
        mesh.check_watertight().unwrap();
        // (0.2, 0, 0) is on the lateral surface within tessellation error
        let p = Vector3::new(0.2, 0.0, 0.0);
        let nearest = mesh
            .vertices
            .iter()
            .map(|v| (v - p).norm())
            .fold(f64::INFINITY, f64::min);
        let max_edge = 2.0 * 0.2 * (std::f64::consts::PI / 64.0).sin();
        assert!(nearest < max_edge + 0.26);
    }

    #[test]
    fn cylinder_volume_converges() {
        // signed-volume summation oracle vs the analytic pi r^2 h
        let analytic = std::f64::consts::PI * 0.2 * 0.2 * 0.5;
        let coarse = make_cylinder(0.4, 0.5, 16).unwrap().signed_volume();
        let fine = make_cylinder(0.4, 0.5, 256).unwrap().signed_volume();
        assert!((fine - analytic).abs() < (coarse - analytic).abs());
        assert_relative_eq!(fine, analytic, max_relative = 1e-3);
    }

    #[test]
    fn cylinder_rejects_out_of_range() {
        assert!(make_cylinder(0.05, 0.5, 32).is_err());
        assert!(make_cylinder(0.4, 1.5, 32).is_err());
        assert!(make_cylinder(0.4, 0.5, 4).is_err());
    }

    #[test]
    fn cuboid_counts_and_volume() {
        let mesh = make_cuboid(0.2, 0.5).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert_relative_eq!(mesh.signed_volume(), 0.02, epsilon = 1e-15);
        mesh.check_watertight().unwrap();
    }

    #[test]
    fn mug_is_watertight_genus_one() {
        let mug = make_mug(&MugParams::default()).unwrap();
        mug.mesh.check_watertight().unwrap();
        assert_eq!(mug.mesh.euler_characteristic(), 0);
        assert!(mug.mesh.signed_volume() > 0.0);
    }

    #[test]
    fn mug_handle_annotation_is_analytic() {
        let params = MugParams::default();
        let mug = make_mug(&params).unwrap();
        let grasp = mug.annotations.handle_grasp.unwrap();
        let r_o = params.body_diameter / 2.0;
        let expected_x = (r_o - params.handle_radius * 1.9f64.cos()) + params.handle_radius;
        assert_relative_eq!(grasp.translation.x, expected_x, epsilon = 1e-12);
        assert_relative_eq!(grasp.translation.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(grasp.translation.z, 0.52 * params.body_height, epsilon = 1e-12);
        // the annotated point is near the mesh surface (within a tube radius)
        let nearest = mug
            .mesh
            .vertices
            .iter()
            .map(|v| (v - grasp.translation).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 2.0 * params.handle_tube_radius);
    }

    #[test]
    fn mug_scaling_scales_bounding_box() {
        let base = make_mug(&MugParams::default()).unwrap();
        let scaled = make_mug(&MugParams::default().scaled(1.2)).unwrap();
        let (lo0, hi0) = base.mesh.bounding_box();
        let (lo1, hi1) = scaled.mesh.bounding_box();
        for k in 0..3 {
            assert_relative_eq!(hi1[k] - lo1[k], 1.2 * (hi0[k] - lo0[k]), epsilon = 1e-9);
        }
    }

    #[test]
    fn bowl_is_watertight_with_rim() {
        let bowl = make_bowl(&BowlParams::default()).unwrap();
        bowl.mesh.check_watertight().unwrap();
        assert_eq!(bowl.mesh.euler_characteristic(), 2);
        let rim = bowl.annotations.rim_circle.unwrap();
        assert_relative_eq!(rim.radius, 0.0875, epsilon = 2e-3);
        // rim vertices really exist near the annotated circle
        let nearest = bowl
            .mesh
            .vertices
            .iter()
            .map(|v| rim.distance_to(v))
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < bowl.params.wall_thickness);
    }

    #[test]
    fn perturb_pose_cases() {
        let mesh = make_cuboid(0.2, 0.5).unwrap();
        let (same, t) = perturb_pose(&mesh, 0.0, 0.0, 9);
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
        assert_eq!(same, mesh);

        // recorded transform reproduces the perturbed mesh exactly
        let (moved, t) = perturb_pose(&mesh, 0.7, 0.1, 10);
        let reproduced = mesh.transformed(&t);
        assert_eq!(moved, reproduced);
        assert!(t.translation.norm() <= 0.1);
    }

    #[test]
    fn perturb_yaw_rotates_about_z() {
        let mesh = make_cuboid(0.2, 0.5).unwrap();
        let mut found = false;
        for seed in 0..20 {
            let (moved, t) = perturb_pose(&mesh, std::f64::consts::FRAC_PI_2, 0.0, seed);
            let angle = t.rotation[(1, 0)].atan2(t.rotation[(0, 0)]);
            if angle.abs() > 0.3 {
                found = true;
                for (v, w) in mesh.vertices.iter().zip(&moved.vertices) {
                    assert_relative_eq!(w.z, v.z, epsilon = 1e-15);
                    assert_relative_eq!(w.norm(), v.norm(), epsilon = 1e-12);
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_mug(&MugParams::default()).unwrap();
        let b = make_mug(&MugParams::default()).unwrap();
        assert_eq!(a.mesh, b.mesh);
        let (p1, t1) = perturb_pose(&a.mesh, 0.5, 0.05, 42);
        let (p2, t2) = perturb_pose(&b.mesh, 0.5, 0.05, 42);
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    fn mug_spec(count: usize, seed: u64) -> ShapeFamilySpec {
        ShapeFamilySpec {
            family: FamilySpec::Mug {
                base: MugParams::default(),
                size_range: [0.95, 1.1],
                jitter: 0.03,
            },
            count,
            yaw_range_deg: 30.0,
            translation_range: 0.05,
            seed,
        }
    }

    #[test]
    fn corpus_generation_reproducible_and_annotated() {
        let a = generate_shapes(&mug_spec(4, 7)).unwrap();
        let b = generate_shapes(&mug_spec(4, 7)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mesh, y.mesh);
            assert_eq!(x.ground_truth_pose, y.ground_truth_pose);
        }
        for shape in &a {
            assert!(shape.annotations.handle_grasp.is_some());
            assert!(shape.annotations.rim_circle.is_some());
            shape.mesh.check_watertight().unwrap();
            // the recorded pose maps the canonical annotation onto the
            // perturbed mesh: the transformed handle point is near surface
            let grasp = shape.annotations.handle_grasp.unwrap();
            let world_pos = shape.ground_truth_pose.apply(&grasp.translation);
            let nearest = shape
                .mesh
                .vertices
                .iter()
                .map(|v| (v - world_pos).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.03);
        }
    }

    #[test]
    fn write_corpus_round_trips_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&mug_spec(2, 9), dir.path()).unwrap();
        assert_eq!(manifest.shapes.len(), 2);
        let loaded = CorpusManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.shapes.len(), 2);
        for record in &loaded.shapes {
            let mesh = TriangleMesh::load_obj(&dir.path().join(&record.file)).unwrap();
            assert!(mesh.is_watertight());
        }
        // byte-identical manifests for the same seed
        let dir2 = tempfile::tempdir().unwrap();
        write_corpus(&mug_spec(2, 9), dir2.path()).unwrap();
        let bytes1 = std::fs::read(dir.path().join("manifest.json")).unwrap();
        let bytes2 = std::fs::read(dir2.path().join("manifest.json")).unwrap();
        assert_eq!(bytes1, bytes2);
    }
}
