//! Software z-buffer rasterizer with per-pixel instance ids, the
//! occlusion-aware auto-labeler built on top of it, and the two naive
//! labeling baselines (connected components, background subtraction) that
//! the auto-labeler is measured against.
//!
//! Rasterization convention: pixel (x, y) samples at center (x+0.5, y+0.5).
//! A triangle with screen vertices normalized to positive orientation
//! (orient2d(v0,v1,v2) > 0 with v growing downward) covers a center when
//! every edge function orient2d(v_i, v_j, p) is positive, or zero on a
//! top or left edge (horizontal edge pointing +x, or any edge pointing -v).
//! Depth is interpolated perspective-correctly via 1/z. Fragments closer
//! than `DEPTH_TIE_MM` count as tied and the lower instance id wins, so
//! renders are deterministic and insensitive to sub-micrometer noise.

use crate::bbox::PixelBox;
use crate::camgeom::{camera_to_pixel, world_to_camera, CameraModel, FullBBox, Vec3Cam, EPS_NEAR_MM};
use crate::imgio::RgbImage;
use crate::meshgen::{extrude_prism, GroundPose, TriangleMesh};
use crate::scenesim::SceneDescription;
use thiserror::Error;

/// Instance id reserved for scene obstacles; never a pedestrian.
pub const OBSTACLE_ID: u32 = u32::MAX;
/// Depth differences below this (mm) are ties, resolved by instance id.
pub const DEPTH_TIE_MM: f64 = 0.01;

const BG_WHITE: [u8; 3] = [255, 255, 255];
const OBSTACLE_GRAY: [u8; 3] = [110, 110, 110];
const PLATE_FALLBACK: [u8; 3] = [180, 180, 180];
/// Directional light for Composite shading, pointing into the scene.
const LIGHT_DIR: [f64; 3] = [0.3, -0.2, -0.9];

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("background plate is {got_w}x{got_h} but the camera image is {want_w}x{want_h}")]
    ImageSizeMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("instance id 0 is reserved for the background")]
    ZeroInstanceId,
    #[error("instance id {0} appears twice in one render")]
    DuplicateInstanceId(u32),
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("frame contains instance {0} but no solo render was supplied for it")]
    MissingSoloRender(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Shaded meshes over the background plate.
    Composite,
    /// Black objects on white.
    Silhouette,
    /// A distinct flat color per instance id.
    InstanceColor,
}

/// A mesh placed in the world under an instance id.
pub struct PosedMesh<'a> {
    pub instance_id: u32,
    pub mesh: &'a TriangleMesh,
    pub pose: GroundPose,
}

/// One rendered frame: color plus per-pixel instance and depth buffers.
/// `instance == 0` exactly where `depth == +inf` (background).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub width: u32,
    pub height: u32,
    pub color: RgbImage,
    pub instance: Vec<u32>,
    pub depth: Vec<f64>,
}

impl RenderedFrame {
    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn instance_at(&self, x: u32, y: u32) -> u32 {
        self.instance[self.idx(x, y)]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[self.idx(x, y)]
    }

    pub fn count_pixels(&self, id: u32) -> usize {
        self.instance.iter().filter(|&&v| v == id).count()
    }

    /// Tight box over pixels carrying `id`; None when `id` never appears.
    pub fn visible_box(&self, id: u32) -> Option<PixelBox> {
        let mut x1 = i32::MAX;
        let mut y1 = i32::MAX;
        let mut x2 = i32::MIN;
        let mut y2 = i32::MIN;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.instance_at(x, y) == id {
                    any = true;
                    x1 = x1.min(x as i32);
                    y1 = y1.min(y as i32);
                    x2 = x2.max(x as i32);
                    y2 = y2.max(y as i32);
                }
            }
        }
        any.then(|| PixelBox::new(x1, y1, x2, y2))
    }

    /// 0/1 mask of pedestrian pixels (obstacles and background excluded).
    pub fn silhouette_mask(&self) -> Vec<u8> {
        self.instance
            .iter()
            .map(|&v| u8::from(v != 0 && v != OBSTACLE_ID))
            .collect()
    }
}

/// Flat color per instance id: evenly spread hues via the golden ratio.
pub fn instance_color(id: u32) -> [u8; 3] {
    let h = (f64::from(id % 100_000) * 0.618_033_988_749_894_9).fract();
    hsv_to_rgb(h, 0.65, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Render pedestrian meshes plus the scene's obstacle prisms.
pub fn rasterize(
    scene: &SceneDescription,
    meshes: &[PosedMesh],
    cam: &CameraModel,
    mode: RenderMode,
    background: Option<&RgbImage>,
) -> Result<RenderedFrame, RasterError> {
    let obstacle_meshes: Vec<TriangleMesh> = scene
        .obstacles
        .iter()
        .map(|o| extrude_prism(&o.footprint, o.height_mm, OBSTACLE_GRAY))
        .collect();
    let mut all: Vec<PosedMesh> = Vec::with_capacity(meshes.len() + obstacle_meshes.len());
    let mut seen = std::collections::BTreeSet::new();
    for m in meshes {
        if m.instance_id == 0 {
            return Err(RasterError::ZeroInstanceId);
        }
        if m.instance_id == OBSTACLE_ID || !seen.insert(m.instance_id) {
            return Err(RasterError::DuplicateInstanceId(m.instance_id));
        }
        all.push(PosedMesh {
            instance_id: m.instance_id,
            mesh: m.mesh,
            pose: m.pose,
        });
    }
    for om in &obstacle_meshes {
        all.push(PosedMesh {
            instance_id: OBSTACLE_ID,
            mesh: om,
            pose: GroundPose { x_mm: 0.0, y_mm: 0.0, heading_rad: 0.0 },
        });
    }
    rasterize_meshes(&all, cam, mode, background)
}

/// Depth-and-instance render of a single pedestrian with no obstacles and
/// no other agents: the visibility denominator for labeling.
pub fn rasterize_solo(posed: &PosedMesh, cam: &CameraModel) -> RenderedFrame {
    let single = [PosedMesh {
        instance_id: posed.instance_id,
        mesh: posed.mesh,
        pose: posed.pose,
    }];
    rasterize_meshes(&single, cam, RenderMode::Silhouette, None)
        .expect("single valid mesh cannot fail")
}

fn rasterize_meshes(
    meshes: &[PosedMesh],
    cam: &CameraModel,
    mode: RenderMode,
    background: Option<&RgbImage>,
) -> Result<RenderedFrame, RasterError> {
    let (w, h) = (cam.width(), cam.height());
    let mut color = match (mode, background) {
        (RenderMode::Composite, Some(plate)) => {
            if plate.width != w || plate.height != h {
                return Err(RasterError::ImageSizeMismatch {
                    want_w: w,
                    want_h: h,
                    got_w: plate.width,
                    got_h: plate.height,
                });
            }
            plate.clone()
        }
        (RenderMode::Composite, None) => RgbImage::new(w, h, PLATE_FALLBACK),
        (RenderMode::Silhouette, _) | (RenderMode::InstanceColor, _) => RgbImage::new(w, h, BG_WHITE),
    };
    let mut instance = vec![0u32; (w * h) as usize];
    let mut depth = vec![f64::INFINITY; (w * h) as usize];

    for posed in meshes {
        for (tri, &verts) in posed.mesh.triangles().iter().enumerate() {
            let world: [crate::camgeom::Vec3World; 3] = [
                posed.pose.apply(posed.mesh.vertices()[verts[0]]),
                posed.pose.apply(posed.mesh.vertices()[verts[1]]),
                posed.pose.apply(posed.mesh.vertices()[verts[2]]),
            ];
            let base = posed.mesh.triangle_colors()[tri];
            let flat = match mode {
                RenderMode::Silhouette => {
                    if posed.instance_id == OBSTACLE_ID {
                        BG_WHITE
                    } else {
                        [0, 0, 0]
                    }
                }
                RenderMode::InstanceColor => {
                    if posed.instance_id == OBSTACLE_ID {
                        OBSTACLE_GRAY
                    } else {
                        instance_color(posed.instance_id)
                    }
                }
                RenderMode::Composite => shade(base, &world),
            };
            let cam_verts = [
                world_to_camera(world[0], &cam.extrinsics),
                world_to_camera(world[1], &cam.extrinsics),
                world_to_camera(world[2], &cam.extrinsics),
            ];
            for clipped in clip_near(&cam_verts) {
                fill_triangle(
                    &clipped,
                    posed.instance_id,
                    flat,
                    cam,
                    &mut color,
                    &mut instance,
                    &mut depth,
                );
            }
        }
    }
    Ok(RenderedFrame {
        width: w,
        height: h,
        color,
        instance,
        depth,
    })
}

/// Flat Lambert-style shade from the triangle's world normal; two-sided so
/// winding slips never render black.
fn shade(base: [u8; 3], world: &[crate::camgeom::Vec3World; 3]) -> [u8; 3] {
    let e1 = [
        world[1].x - world[0].x,
        world[1].y - world[0].y,
        world[1].z - world[0].z,
    ];
    let e2 = [
        world[2].x - world[0].x,
        world[2].y - world[0].y,
        world[2].z - world[0].z,
    ];
    let n = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let ll = (LIGHT_DIR[0] * LIGHT_DIR[0] + LIGHT_DIR[1] * LIGHT_DIR[1]
        + LIGHT_DIR[2] * LIGHT_DIR[2])
        .sqrt();
    let cos = if nn < 1e-12 {
        0.0
    } else {
        ((n[0] * LIGHT_DIR[0] + n[1] * LIGHT_DIR[1] + n[2] * LIGHT_DIR[2]) / (nn * ll)).abs()
    };
    let k = 0.45 + 0.55 * cos;
    [
        (f64::from(base[0]) * k).round() as u8,
        (f64::from(base[1]) * k).round() as u8,
        (f64::from(base[2]) * k).round() as u8,
    ]
}

/// Sutherland-Hodgman clip of one triangle against z = EPS_NEAR_MM. Kept
/// vertices get a nudge off the plane so projection stays strictly valid.
fn clip_near(v: &[Vec3Cam; 3]) -> Vec<[Vec3Cam; 3]> {
    let eps = EPS_NEAR_MM;
    let safe = EPS_NEAR_MM * (1.0 + 4.0 * f64::EPSILON);
    let inside = |p: &Vec3Cam| p.z > eps;
    let mut poly: Vec<Vec3Cam> = Vec::with_capacity(4);
    for i in 0..3 {
        let cur = v[i];
        let next = v[(i + 1) % 3];
        if inside(&cur) {
            poly.push(cur);
        }
        if inside(&cur) != inside(&next) {
            let t = (eps - cur.z) / (next.z - cur.z);
            let mut p = Vec3Cam::new(
                cur.x + t * (next.x - cur.x),
                cur.y + t * (next.y - cur.y),
                cur.z + t * (next.z - cur.z),
            );
            p.z = p.z.max(safe);
            poly.push(p);
        }
    }
    match poly.len() {
        3 => vec![[poly[0], poly[1], poly[2]]],
        4 => vec![[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]],
        _ => Vec::new(),
    }
}

fn orient2d(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Boundary pixels belong to top edges (horizontal, pointing +u) and left
/// edges (pointing -v), so triangles sharing an edge never double-fill it.
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[1] == b[1] && b[0] > a[0]) || b[1] < a[1]
}

#[allow(clippy::too_many_arguments)]
fn fill_triangle(
    cam_verts: &[Vec3Cam; 3],
    id: u32,
    flat: [u8; 3],
    cam: &CameraModel,
    color: &mut RgbImage,
    instance: &mut [u32],
    depth: &mut [f64],
) {
    let intr = &cam.intrinsics;
    let px: Vec<_> = cam_verts
        .iter()
        .map(|&v| camera_to_pixel(v, intr).expect("near clip leaves z strictly in front"))
        .collect();
    let mut s = [[px[0].u, px[0].v], [px[1].u, px[1].v], [px[2].u, px[2].v]];
    let mut z = [px[0].depth, px[1].depth, px[2].depth];
    let mut area = orient2d(s[0], s[1], s[2]);
    if area == 0.0 {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        z.swap(1, 2);
        area = -area;
    }
    let (w, h) = (cam.width() as i64, cam.height() as i64);
    let u_lo = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let u_hi = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let v_lo = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let v_hi = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    // pixel x covers center x+0.5; solve u_lo <= x+0.5 <= u_hi
    let x0 = ((u_lo - 0.5).ceil() as i64).max(0);
    let x1 = ((u_hi - 0.5).floor() as i64).min(w - 1);
    let y0 = ((v_lo - 0.5).ceil() as i64).max(0);
    let y1 = ((v_hi - 0.5).floor() as i64).min(h - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv_z = [1.0 / z[0], 1.0 / z[1], 1.0 / z[2]];
    let accept = [
        is_top_left(s[1], s[2]),
        is_top_left(s[2], s[0]),
        is_top_left(s[0], s[1]),
    ];
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let w0 = orient2d(s[1], s[2], p);
            let w1 = orient2d(s[2], s[0], p);
            let w2 = orient2d(s[0], s[1], p);
            let inside = (w0 > 0.0 || (w0 == 0.0 && accept[0]))
                && (w1 > 0.0 || (w1 == 0.0 && accept[1]))
                && (w2 > 0.0 || (w2 == 0.0 && accept[2]));
            if !inside {
                continue;
            }
            let zi = area / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
            let o = (y * w + x) as usize;
            let old_z = depth[o];
            let old_id = instance[o];
            let wins = if (zi - old_z).abs() < DEPTH_TIE_MM {
                id < old_id || (id == old_id && zi < old_z)
            } else {
                zi < old_z
            };
            if wins {
                depth[o] = zi;
                instance[o] = id;
                color.set(x as u32, y as u32, flat);
            }
        }
    }
}

/// Occlusion-aware annotation for one instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub instance_id: u32,
    /// Projection of the whole mesh, clipped to the image; always contains
    /// `visible_bbox`.
    pub full_bbox: PixelBox,
    /// Tight box over actually-visible pixels; None when fully occluded.
    pub visible_bbox: Option<PixelBox>,
    /// Visible pixels over solo-render pixels, in [0, 1].
    pub visibility: f64,
    pub truncated: bool,
}

/// Everything the labeler needs for one pedestrian: its solo render (same
/// camera and pose, no other geometry) and its projected vertex box.
pub struct InstanceLabelInput<'a> {
    pub instance_id: u32,
    pub solo: &'a RenderedFrame,
    pub full_bbox: FullBBox,
}

/// Compute per-instance annotations from the composite frame's instance
/// buffer. Visibility is the fraction of the instance's solo-render pixels
/// that survived in the composite. Obstacle pixels are scenery: they get no
/// record but do occlude. Records come back sorted by instance id.
pub fn label_frame(
    frame: &RenderedFrame,
    instances: &[InstanceLabelInput],
) -> Result<Vec<AnnotationRecord>, LabelError> {
    for &id in frame.instance.iter() {
        if id != 0 && id != OBSTACLE_ID && !instances.iter().any(|i| i.instance_id == id) {
            return Err(LabelError::MissingSoloRender(id));
        }
    }
    let mut records: Vec<AnnotationRecord> = Vec::with_capacity(instances.len());
    for inp in instances {
        let id = inp.instance_id;
        let visible_bbox = frame.visible_box(id);
        let visible_px = frame.count_pixels(id);
        let solo_px = inp.solo.count_pixels(id);
        let visibility = if solo_px == 0 {
            0.0
        } else {
            visible_px as f64 / solo_px as f64
        };
        let mut full = integerize_full_box(&inp.full_bbox, frame.width, frame.height);
        if let Some(vb) = visible_bbox {
            full = full.union(&vb);
        }
        records.push(AnnotationRecord {
            instance_id: id,
            full_bbox: full,
            visible_bbox,
            visibility,
            truncated: inp.full_bbox.truncated,
        });
    }
    records.sort_by_key(|r| r.instance_id);
    Ok(records)
}

/// Continuous projection box to inclusive integer pixels, clamped inside
/// the image. A continuous coordinate c covers pixels with index < c, so
/// the upper edge maps through ceil(c) - 1.
fn integerize_full_box(bb: &FullBBox, width: u32, height: u32) -> PixelBox {
    let x1 = bb.u_min.floor() as i32;
    let y1 = bb.v_min.floor() as i32;
    let x2 = (bb.u_max.ceil() as i32 - 1).max(x1);
    let y2 = (bb.v_max.ceil() as i32 - 1).max(y1);
    PixelBox::new(
        x1.clamp(0, width as i32 - 1),
        y1.clamp(0, height as i32 - 1),
        x2.clamp(0, width as i32 - 1),
        y2.clamp(0, height as i32 - 1),
    )
}

/// Connected-component labeling over a 0/1 mask, 8-connectivity, classic
/// two-pass union-find. Returns one tight box per component, sorted by
/// (top, left). This is the "search the connected domain" baseline: it
/// cannot split touching silhouettes.
pub fn ccl_label(mask: &[u8], width: u32, height: u32) -> Vec<PixelBox> {
    assert_eq!(mask.len(), (width * height) as usize, "mask size");
    debug_assert!(mask.iter().all(|&v| v <= 1), "mask must be 0/1");
    let w = width as usize;
    let h = height as usize;
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0]; // parent[0] unused; labels start at 1

    fn find(parent: &mut Vec<u32>, mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let g = parent[parent[x as usize] as usize];
            parent[x as usize] = g;
            x = g;
        }
        x
    }

    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            // already-visited 8-neighbors: W, NW, N, NE
            let mut neighbor_roots: Vec<u32> = Vec::with_capacity(4);
            let mut consider = |nx: isize, ny: isize, labels: &[u32], parent: &mut Vec<u32>| {
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    let l = labels[ny as usize * w + nx as usize];
                    if l != 0 {
                        let r = find(parent, l);
                        if !neighbor_roots.contains(&r) {
                            neighbor_roots.push(r);
                        }
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            consider(xi - 1, yi, &labels, &mut parent);
            consider(xi - 1, yi - 1, &labels, &mut parent);
            consider(xi, yi - 1, &labels, &mut parent);
            consider(xi + 1, yi - 1, &labels, &mut parent);
            if neighbor_roots.is_empty() {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                labels[y * w + x] = fresh;
            } else {
                let min = *neighbor_roots.iter().min().unwrap();
                labels[y * w + x] = min;
                for &r in &neighbor_roots {
                    parent[r as usize] = min;
                }
            }
        }
    }

    let mut boxes: std::collections::BTreeMap<u32, PixelBox> = std::collections::BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l);
            let px = PixelBox::new(x as i32, y as i32, x as i32, y as i32);
            boxes
                .entry(root)
                .and_modify(|b| *b = b.union(&px))
                .or_insert(px);
        }
    }
    let mut out: Vec<PixelBox> = boxes.into_values().collect();
    out.sort_by_key(|b| (b.y1, b.x1));
    out
}

/// Tight box over every pixel differing from the background color (exact
/// RGB compare). Single-object images only: multiple objects merge into
/// one box and nothing detects that.
pub fn whitebg_bbox(image: &RgbImage, bg: [u8; 3]) -> Option<PixelBox> {
    let mut acc: Option<PixelBox> = None;
    for y in 0..image.height {
        for x in 0..image.width {
            if image.get(x, y) != bg {
                let px = PixelBox::new(x as i32, y as i32, x as i32, y as i32);
                acc = Some(match acc {
                    Some(b) => b.union(&px),
                    None => px,
                });
            }
        }
    }
    acc
}
