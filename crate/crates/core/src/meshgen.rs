//! Procedural low-poly meshes: articulated box-limb humanoids for agents and
//! extruded prisms for obstacles. Model space puts feet on z=0, the head top
//! at z=height, forward along +x, and width along y.

use crate::camgeom::Vec3World;
use crate::geom2d::Polygon;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Peak leg swing from vertical, radians (30 degrees).
pub const SWING_AMPLITUDE_RAD: f64 = 30.0 * std::f64::consts::PI / 180.0;

/// Clothing colors sampled per agent; torso and legs draw independently.
pub const CLOTHING_PALETTE: [[u8; 3]; 12] = [
    [178, 34, 34],
    [0, 64, 128],
    [34, 139, 34],
    [255, 140, 0],
    [128, 0, 128],
    [64, 64, 64],
    [220, 220, 220],
    [139, 69, 19],
    [0, 139, 139],
    [255, 215, 0],
    [199, 21, 133],
    [25, 25, 112],
];

const SKIN: [u8; 3] = [210, 170, 130];

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {tri} references vertex {index} but only {len} vertices exist")]
    IndexOutOfRange { tri: usize, index: usize, len: usize },
    #[error("{colors} triangle colors for {triangles} triangles")]
    ColorCountMismatch { colors: usize, triangles: usize },
}

/// Indexed triangle soup with one flat color per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3World>,
    triangles: Vec<[usize; 3]>,
    triangle_colors: Vec<[u8; 3]>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3World>,
        triangles: Vec<[usize; 3]>,
        triangle_colors: Vec<[u8; 3]>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        if triangle_colors.len() != triangles.len() {
            return Err(MeshError::ColorCountMismatch {
                colors: triangle_colors.len(),
                triangles: triangles.len(),
            });
        }
        for (tri, t) in triangles.iter().enumerate() {
            for &index in t {
                if index >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        tri,
                        index,
                        len: vertices.len(),
                    });
                }
            }
        }
        Ok(Self {
            vertices,
            triangles,
            triangle_colors,
        })
    }

    pub fn vertices(&self) -> &[Vec3World] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_colors(&self) -> &[[u8; 3]] {
        &self.triangle_colors
    }

    /// Axis-aligned extent as (min, max) corners.
    pub fn bounds(&self) -> (Vec3World, Vec3World) {
        let mut lo = Vec3World::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Vec3World::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            lo.z = lo.z.min(v.z);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
            hi.z = hi.z.max(v.z);
        }
        (lo, hi)
    }

    /// Wavefront-style OBJ text for manual inspection (positions and faces
    /// only; OBJ has no per-face color).
    pub fn to_obj_string(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for v in &self.vertices {
            writeln!(out, "v {:.3} {:.3} {:.3}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        out
    }
}

/// Placement of a model-space mesh in the world: yaw about world z, then
/// translate. Keeps feet on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub heading_rad: f64,
}

impl GroundPose {
    pub fn apply(&self, v: Vec3World) -> Vec3World {
        let (s, c) = self.heading_rad.sin_cos();
        Vec3World::new(
            c * v.x - s * v.y + self.x_mm,
            s * v.x + c * v.y + self.y_mm,
            v.z,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stance {
    Walking,
    Standing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanoidParams {
    pub height_mm: f64,
    pub shoulder_width_mm: f64,
    pub torso_color: [u8; 3],
    pub legs_color: [u8; 3],
    /// Gait cycle position in [0, 1).
    pub gait_phase: f64,
    pub stance: Stance,
}

/// Left and right leg swing angles (radians from vertical) at a gait phase.
/// Legs are antiphase; arms swing opposite their own side's leg.
pub fn leg_swing_angles(phase: f64) -> (f64, f64) {
    let left = SWING_AMPLITUDE_RAD * (2.0 * std::f64::consts::PI * phase).sin();
    (left, -left)
}

// Body proportions as fractions of total height (h) and shoulder width (s).
const HIP_Z: f64 = 0.50; // of h; legs span [0, HIP_Z]
const TORSO_Z0: f64 = 0.48;
const TORSO_Z1: f64 = 0.87;
const HEAD_W: f64 = 0.40; // of s
const TORSO_D: f64 = 0.55;
const LEG_W: f64 = 0.42;
const LEG_D: f64 = 0.50;
const LEG_Y: f64 = 0.25; // leg center offset from midline, of s
const ARM_W: f64 = 0.18;
const ARM_D: f64 = 0.35;
const ARM_Z0: f64 = 0.45;
const ARM_Z1: f64 = 0.86;
const ARM_PIVOT_Z: f64 = 0.82;

/// Box-limb humanoid: head, torso, two arms, two legs. Swing is a shear
/// about each limb's pivot so z coordinates never change, keeping the foot
/// plane at exactly z=0 and the head top at exactly z=height.
pub fn build_humanoid(p: &HumanoidParams) -> TriangleMesh {
    let h = p.height_mm;
    let s = p.shoulder_width_mm;
    let (leg_l, leg_r) = match p.stance {
        Stance::Walking => leg_swing_angles(p.gait_phase),
        Stance::Standing => (0.0, 0.0),
    };
    let (arm_l, arm_r) = (-leg_l, -leg_r);

    let mut b = MeshBuilder::default();
    // legs
    b.sheared_cuboid(
        [-LEG_D / 2.0 * s, (LEG_Y - LEG_W / 2.0) * s, 0.0],
        [LEG_D / 2.0 * s, (LEG_Y + LEG_W / 2.0) * s, HIP_Z * h],
        p.legs_color,
        leg_l,
        HIP_Z * h,
    );
    b.sheared_cuboid(
        [-LEG_D / 2.0 * s, (-LEG_Y - LEG_W / 2.0) * s, 0.0],
        [LEG_D / 2.0 * s, (-LEG_Y + LEG_W / 2.0) * s, HIP_Z * h],
        p.legs_color,
        leg_r,
        HIP_Z * h,
    );
    // torso
    b.sheared_cuboid(
        [-TORSO_D / 2.0 * s, -s / 2.0, TORSO_Z0 * h],
        [TORSO_D / 2.0 * s, s / 2.0, TORSO_Z1 * h],
        p.torso_color,
        0.0,
        0.0,
    );
    // head
    b.sheared_cuboid(
        [-HEAD_W / 2.0 * s, -HEAD_W / 2.0 * s, TORSO_Z1 * h],
        [HEAD_W / 2.0 * s, HEAD_W / 2.0 * s, h],
        SKIN,
        0.0,
        0.0,
    );
    // arms, sleeves in the torso color
    b.sheared_cuboid(
        [-ARM_D / 2.0 * s, s / 2.0, ARM_Z0 * h],
        [ARM_D / 2.0 * s, (0.5 + ARM_W) * s, ARM_Z1 * h],
        p.torso_color,
        arm_l,
        ARM_PIVOT_Z * h,
    );
    b.sheared_cuboid(
        [-ARM_D / 2.0 * s, -(0.5 + ARM_W) * s, ARM_Z0 * h],
        [ARM_D / 2.0 * s, -s / 2.0, ARM_Z1 * h],
        p.torso_color,
        arm_r,
        ARM_PIVOT_Z * h,
    );
    b.finish()
}

/// Deterministic appearance draw: height uniform in [1500, 1900] mm,
/// clothing from the fixed palette, a random initial gait phase.
pub fn appearance_from_seed(seed: u64) -> HumanoidParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height_mm = rng.gen_range(1500.0..1900.0);
    let shoulder_width_mm = height_mm * rng.gen_range(0.23..0.27);
    let torso_color = CLOTHING_PALETTE[rng.gen_range(0..CLOTHING_PALETTE.len())];
    let legs_color = CLOTHING_PALETTE[rng.gen_range(0..CLOTHING_PALETTE.len())];
    let gait_phase = rng.gen_range(0.0..1.0);
    HumanoidParams {
        height_mm,
        shoulder_width_mm,
        torso_color,
        legs_color,
        gait_phase,
        stance: Stance::Walking,
    }
}

/// Vertical prism from a ground footprint: side walls plus top and bottom
/// caps, outward winding throughout.
pub fn extrude_prism(footprint: &Polygon, height_mm: f64, color: [u8; 3]) -> TriangleMesh {
    let pts = footprint.points();
    let n = pts.len();
    // cap triples index the original vertex order; sides need CCW traversal
    let cap = footprint.triangulate();
    let order: Vec<usize> = if footprint.signed_area() > 0.0 {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    let mut vertices = Vec::with_capacity(2 * n);
    for p in pts {
        vertices.push(Vec3World::new(p[0], p[1], 0.0));
    }
    for p in pts {
        vertices.push(Vec3World::new(p[0], p[1], height_mm));
    }
    let mut triangles = Vec::with_capacity(2 * n + 2 * cap.len());
    for k in 0..n {
        let i = order[k];
        let j = order[(k + 1) % n];
        // side quad (i ground, j ground, j top, i top), outward when CCW
        triangles.push([i, j, n + j]);
        triangles.push([i, n + j, n + i]);
    }
    for t in &cap {
        // triangulate() emits CCW triples: +z normal on top, flipped below
        triangles.push([n + t[0], n + t[1], n + t[2]]);
        triangles.push([t[0], t[2], t[1]]);
    }
    let colors = vec![color; triangles.len()];
    TriangleMesh::new(vertices, triangles, colors).expect("prism construction is well-formed")
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Vec3World>,
    triangles: Vec<[usize; 3]>,
    colors: Vec<[u8; 3]>,
}

impl MeshBuilder {
    /// Axis-aligned cuboid [lo, hi] sheared along x by `angle` about height
    /// `pivot_z`: x += tan(angle)·(pivot_z − z). Shear is affine, so faces
    /// stay planar and the outward winding below is preserved.
    fn sheared_cuboid(&mut self, lo: [f64; 3], hi: [f64; 3], color: [u8; 3], angle: f64, pivot_z: f64) {
        let t = angle.tan();
        let base = self.vertices.len();
        for &(xi, yi, zi) in &[
            (0, 0, 0),
            (1, 0, 0),
            (1, 1, 0),
            (0, 1, 0),
            (0, 0, 1),
            (1, 0, 1),
            (1, 1, 1),
            (0, 1, 1),
        ] {
            let x = if xi == 0 { lo[0] } else { hi[0] };
            let y = if yi == 0 { lo[1] } else { hi[1] };
            let z = if zi == 0 { lo[2] } else { hi[2] };
            self.vertices.push(Vec3World::new(x + t * (pivot_z - z), y, z));
        }
        // quads wound counter-clockwise seen from outside
        const FACES: [[usize; 4]; 6] = [
            [0, 3, 2, 1], // bottom, -z
            [4, 5, 6, 7], // top, +z
            [0, 1, 5, 4], // -y
            [2, 3, 7, 6], // +y
            [0, 4, 7, 3], // -x
            [1, 2, 6, 5], // +x
        ];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
            self.colors.push(color);
            self.colors.push(color);
        }
    }

    fn finish(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles, self.colors)
            .expect("builder output is well-formed")
    }
}
