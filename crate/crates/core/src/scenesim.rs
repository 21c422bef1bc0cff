//! Scene description and pedestrian agent simulation. Agents spawn inside
//! designated zones, walk toward random waypoints with simple steering,
//! form small groups sharing a destination, or stand making phone calls.
//! Everything is deterministic given the scene, config, and RNG seed.

use crate::camgeom::CameraModel;
use crate::geom2d::Polygon;
use crate::meshgen::GroundPose;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Minimum spawn separation between agents (mm).
pub const R_MIN_MM: f64 = 400.0;
/// Group members spawn within this distance of their leader (mm).
pub const R_GROUP_MM: f64 = 1200.0;
/// A waypoint counts as reached within this distance (mm).
pub const R_ARRIVE_MM: f64 = 300.0;
/// Full gait cycle advances once per this walked distance (mm).
pub const STRIDE_LENGTH_MM: f64 = 1400.0;
/// Group members should stay within this distance of the group centroid.
pub const R_GROUP_MAX_MM: f64 = 3000.0;

const PHONE_CALL_RANGE_S: (f64, f64) = (5.0, 30.0);
const SPAWN_RETRY_CAP: u32 = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("could not place agent {agent_index} after {SPAWN_RETRY_CAP} attempts (scene too crowded)")]
    SpawnOverflow { agent_index: usize },
    #[error("spawn zone {zone} lies outside the walkable region")]
    SpawnZoneOutsideWalkable { zone: usize },
    #[error("every probed spawn position is covered by an obstacle")]
    AllSpawnZonesBlocked,
    #[error("scene has no walkable polygons")]
    NoWalkableRegion,
    #[error("scene has no spawn zones")]
    NoSpawnZones,
}

/// Obstacle standing on the ground plane: a footprint extruded to a height.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub footprint: Polygon,
    pub height_mm: f64,
}

/// Static description of a surveillance scene rebuilt in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescription {
    /// Optional background plate path; when absent a plate is synthesized.
    pub background: Option<String>,
    pub camera: CameraModel,
    pub walkable: Vec<Polygon>,
    pub obstacles: Vec<Obstacle>,
    pub spawn_zones: Vec<Polygon>,
}

impl SceneDescription {
    /// Cross-polygon invariants; individual polygons are validated at
    /// construction. Probes a coarse grid per spawn zone so a scene whose
    /// zones are fully covered by obstacles fails here, not mid-simulation.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.walkable.is_empty() {
            return Err(SimError::NoWalkableRegion);
        }
        if self.spawn_zones.is_empty() {
            return Err(SimError::NoSpawnZones);
        }
        for (zone, z) in self.spawn_zones.iter().enumerate() {
            let inside_walkable = z
                .points()
                .iter()
                .all(|&p| self.walkable.iter().any(|w| w.contains(p)));
            if !inside_walkable {
                return Err(SimError::SpawnZoneOutsideWalkable { zone });
            }
        }
        let mut any_free = false;
        'zones: for z in &self.spawn_zones {
            let (lo, hi) = z.bounds();
            for i in 0..8 {
                for j in 0..8 {
                    let p = [
                        lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / 8.0,
                        lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / 8.0,
                    ];
                    if z.contains(p) && self.position_free(p) {
                        any_free = true;
                        break 'zones;
                    }
                }
            }
        }
        if !any_free {
            return Err(SimError::AllSpawnZonesBlocked);
        }
        Ok(())
    }

    fn in_walkable(&self, p: [f64; 2]) -> bool {
        self.walkable.iter().any(|w| w.contains(p))
    }

    fn in_obstacle(&self, p: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| o.footprint.contains(p))
    }

    /// Inside the walkable region and clear of every obstacle footprint.
    pub fn position_free(&self, p: [f64; 2]) -> bool {
        self.in_walkable(p) && !self.in_obstacle(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorState {
    WalkSolo { waypoint: [f64; 2] },
    WalkGroup { group_id: u32, size: u8, waypoint: [f64; 2] },
    StandPhoneCall { remaining_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Positive, unique within a dataset; doubles as the render instance id.
    pub id: u32,
    pub pos: [f64; 2],
    pub heading: f64,
    /// mm/s; zero while standing.
    pub speed: f64,
    pub behavior: BehaviorState,
    pub appearance_seed: u64,
    pub gait_phase: f64,
}

impl AgentState {
    pub fn is_standing(&self) -> bool {
        matches!(self.behavior, BehaviorState::StandPhoneCall { .. })
    }

    fn waypoint(&self) -> Option<[f64; 2]> {
        match self.behavior {
            BehaviorState::WalkSolo { waypoint } => Some(waypoint),
            BehaviorState::WalkGroup { waypoint, .. } => Some(waypoint),
            BehaviorState::StandPhoneCall { .. } => None,
        }
    }

    fn group_id(&self) -> Option<u32> {
        match self.behavior {
            BehaviorState::WalkGroup { group_id, .. } => Some(group_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Inclusive range the agent count is drawn from.
    pub n_agents: (u32, u32),
    pub speed_min: f64,
    pub speed_max: f64,
    pub p_group: f64,
    pub p_phone: f64,
    pub dt: f64,
    pub frames: u32,
    pub rng_seed: u64,
}

/// Rigid placement for the agent's mesh: feet at the agent position on the
/// ground plane, model forward axis rotated to the heading.
pub fn agent_world_pose(agent: &AgentState) -> GroundPose {
    GroundPose {
        x_mm: agent.pos[0],
        y_mm: agent.pos[1],
        heading_rad: agent.heading,
    }
}

/// Uniform sample over the walkable region minus obstacles, by rejection
/// over the walkable bounding box. None when the cap is exhausted.
fn sample_free_point(scene: &SceneDescription, rng: &mut ChaCha8Rng) -> Option<[f64; 2]> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for w in &scene.walkable {
        let (wlo, whi) = w.bounds();
        lo[0] = lo[0].min(wlo[0]);
        lo[1] = lo[1].min(wlo[1]);
        hi[0] = hi[0].max(whi[0]);
        hi[1] = hi[1].max(whi[1]);
    }
    for _ in 0..SPAWN_RETRY_CAP {
        let p = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
        if scene.position_free(p) {
            return Some(p);
        }
    }
    None
}

fn sample_spawn_position(
    scene: &SceneDescription,
    placed: &[AgentState],
    near: Option<[f64; 2]>,
    rng: &mut ChaCha8Rng,
) -> Option<[f64; 2]> {
    for _ in 0..SPAWN_RETRY_CAP {
        let p = match near {
            Some(center) => {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let rad = R_GROUP_MM * rng.gen_range(0.0f64..1.0).sqrt();
                [center[0] + rad * ang.cos(), center[1] + rad * ang.sin()]
            }
            None => {
                let zone = &scene.spawn_zones[rng.gen_range(0..scene.spawn_zones.len())];
                let (lo, hi) = zone.bounds();
                let p = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
                if !zone.contains(p) {
                    continue;
                }
                p
            }
        };
        if !scene.position_free(p) {
            continue;
        }
        let clear = placed
            .iter()
            .all(|a| dist(a.pos, p) >= R_MIN_MM);
        if clear {
            return Some(p);
        }
    }
    None
}

/// Place the initial agent population. Behaviors are drawn per agent:
/// group walk with probability p_group (needs two free slots), phone call
/// with p_phone, solo walk otherwise. Group members spawn around a leader,
/// share one waypoint and walking speed, and carry a common group_id.
pub fn spawn_agents(
    scene: &SceneDescription,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AgentState>, SimError> {
    let n = if cfg.n_agents.0 == cfg.n_agents.1 {
        cfg.n_agents.0
    } else {
        rng.gen_range(cfg.n_agents.0..=cfg.n_agents.1)
    } as usize;
    let mut agents: Vec<AgentState> = Vec::with_capacity(n);
    let mut next_group_id = 1u32;
    while agents.len() < n {
        let remaining = n - agents.len();
        let u: f64 = rng.gen();
        if u < cfg.p_group && remaining >= 2 {
            let size = if remaining >= 3 && rng.gen_bool(0.5) { 3u8 } else { 2u8 };
            let group_id = next_group_id;
            next_group_id += 1;
            let speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
            let leader_pos = sample_spawn_position(scene, &agents, None, rng)
                .ok_or(SimError::SpawnOverflow { agent_index: agents.len() })?;
            let waypoint = sample_free_point(scene, rng).unwrap_or(leader_pos);
            for k in 0..size {
                let pos = if k == 0 {
                    leader_pos
                } else {
                    sample_spawn_position(scene, &agents, Some(leader_pos), rng)
                        .ok_or(SimError::SpawnOverflow { agent_index: agents.len() })?
                };
                agents.push(AgentState {
                    id: agents.len() as u32 + 1,
                    pos,
                    heading: heading_toward(pos, waypoint),
                    speed,
                    behavior: BehaviorState::WalkGroup { group_id, size, waypoint },
                    appearance_seed: rng.gen(),
                    gait_phase: rng.gen_range(0.0..1.0),
                });
            }
        } else if u < cfg.p_group + cfg.p_phone {
            let pos = sample_spawn_position(scene, &agents, None, rng)
                .ok_or(SimError::SpawnOverflow { agent_index: agents.len() })?;
            agents.push(AgentState {
                id: agents.len() as u32 + 1,
                pos,
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
                speed: 0.0,
                behavior: BehaviorState::StandPhoneCall {
                    remaining_s: rng.gen_range(PHONE_CALL_RANGE_S.0..=PHONE_CALL_RANGE_S.1),
                },
                appearance_seed: rng.gen(),
                gait_phase: rng.gen_range(0.0..1.0),
            });
        } else {
            let pos = sample_spawn_position(scene, &agents, None, rng)
                .ok_or(SimError::SpawnOverflow { agent_index: agents.len() })?;
            let waypoint = sample_free_point(scene, rng).unwrap_or(pos);
            agents.push(AgentState {
                id: agents.len() as u32 + 1,
                pos,
                heading: heading_toward(pos, waypoint),
                speed: rng.gen_range(cfg.speed_min..=cfg.speed_max),
                behavior: BehaviorState::WalkSolo { waypoint },
                appearance_seed: rng.gen(),
                gait_phase: rng.gen_range(0.0..1.0),
            });
        }
    }
    Ok(agents)
}

/// Advance the simulation by one dt. Walkers steer toward their waypoint
/// while avoiding nearby agents and obstacle edges; arrivals resample the
/// waypoint (the lowest-id member resamples for a whole group); phone
/// calls count down and end as solo walks. A move that would leave the
/// walkable region is shortened or dropped, never an error.
pub fn step(
    scene: &SceneDescription,
    agents: &[AgentState],
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<AgentState> {
    let mut next: Vec<AgentState> = agents.to_vec();

    // RNG draws happen in agent-index order so trajectories stay a pure
    // function of the seed. Group waypoints are resampled by the leader
    // (lowest id) and applied to every member afterward.
    let mut group_waypoints: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    let mut group_leaders: BTreeMap<u32, u32> = BTreeMap::new();
    for a in agents {
        if let Some(g) = a.group_id() {
            let e = group_leaders.entry(g).or_insert(a.id);
            *e = (*e).min(a.id);
        }
    }
    for a in next.iter_mut() {
        match &mut a.behavior {
            BehaviorState::WalkSolo { waypoint } => {
                if dist(a.pos, *waypoint) <= R_ARRIVE_MM {
                    if let Some(w) = sample_free_point(scene, rng) {
                        *waypoint = w;
                    }
                }
            }
            BehaviorState::WalkGroup { group_id, waypoint, .. } => {
                if group_leaders.get(group_id) == Some(&a.id)
                    && dist(a.pos, *waypoint) <= R_ARRIVE_MM
                {
                    if let Some(w) = sample_free_point(scene, rng) {
                        group_waypoints.insert(*group_id, w);
                    }
                }
            }
            BehaviorState::StandPhoneCall { remaining_s } => {
                *remaining_s -= cfg.dt;
                if *remaining_s <= 0.0 {
                    let waypoint = sample_free_point(scene, rng).unwrap_or(a.pos);
                    a.speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
                    a.behavior = BehaviorState::WalkSolo { waypoint };
                    a.heading = heading_toward(a.pos, waypoint);
                }
            }
        }
    }
    for a in next.iter_mut() {
        if let BehaviorState::WalkGroup { group_id, waypoint, .. } = &mut a.behavior {
            if let Some(w) = group_waypoints.get(group_id) {
                *waypoint = *w;
            }
        }
    }

    // movement pass: pure steering, no RNG
    for i in 0..next.len() {
        let Some(waypoint) = next[i].waypoint() else { continue };
        let pos = next[i].pos;
        let speed = next[i].speed;
        let dir = steer(scene, agents, i, pos, waypoint);
        let Some(dir) = dir else { continue };
        let full = [dir[0] * speed * cfg.dt, dir[1] * speed * cfg.dt];
        let mut moved = None;
        for scale in [1.0, 0.5, 0.25] {
            let cand = [pos[0] + full[0] * scale, pos[1] + full[1] * scale];
            if scene.position_free(cand) {
                moved = Some(cand);
                break;
            }
        }
        if let Some(cand) = moved {
            let step_len = dist(pos, cand);
            let a = &mut next[i];
            a.pos = cand;
            a.heading = heading_toward(pos, cand);
            a.gait_phase = (a.gait_phase + step_len / STRIDE_LENGTH_MM).fract();
        }
    }
    next
}

/// Unit steering direction: goal attraction plus separation from agents
/// and obstacle boundaries within 2·R_MIN. None when forces cancel.
fn steer(
    scene: &SceneDescription,
    agents: &[AgentState],
    idx: usize,
    pos: [f64; 2],
    waypoint: [f64; 2],
) -> Option<[f64; 2]> {
    let influence = 2.0 * R_MIN_MM;
    let mut fx;
    let mut fy;
    match unit(sub(waypoint, pos)) {
        Some(g) => {
            fx = g[0];
            fy = g[1];
        }
        None => return None, // standing exactly on the waypoint
    }
    for (j, other) in agents.iter().enumerate() {
        if j == idx {
            continue;
        }
        let d = dist(pos, other.pos);
        if d < influence {
            if let Some(away) = unit(sub(pos, other.pos)) {
                let w = 1.0 - d / influence;
                fx += away[0] * w;
                fy += away[1] * w;
            }
        }
    }
    for o in &scene.obstacles {
        if o.footprint.contains(pos) {
            continue; // containment is enforced by the move check
        }
        let q = o.footprint.closest_boundary_point(pos);
        let d = dist(pos, q);
        if d < influence {
            if let Some(away) = unit(sub(pos, q)) {
                let w = 1.0 - d / influence;
                fx += away[0] * w;
                fy += away[1] * w;
            }
        }
    }
    unit([fx, fy])
}

/// Run the whole simulation: spawn, then capture the agent list at each of
/// `cfg.frames` steps. Frame f reflects f+1 elapsed steps.
pub fn simulate_frames(
    scene: &SceneDescription,
    cfg: &SimConfig,
) -> Result<Vec<Vec<AgentState>>, SimError> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut agents = spawn_agents(scene, cfg, &mut rng)?;
    let mut frames = Vec::with_capacity(cfg.frames as usize);
    for _ in 0..cfg.frames {
        agents = step(scene, &agents, cfg, &mut rng);
        frames.push(agents.clone());
    }
    Ok(frames)
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn unit(v: [f64; 2]) -> Option<[f64; 2]> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < 1e-9 {
        None
    } else {
        Some([v[0] / n, v[1] / n])
    }
}

fn heading_toward(from: [f64; 2], to: [f64; 2]) -> f64 {
    if dist(from, to) < 1e-9 {
        0.0
    } else {
        (to[1] - from[1]).atan2(to[0] - from[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camgeom::{CameraModel, Extrinsics, Intrinsics};
    use rand::SeedableRng;

    fn test_camera() -> CameraModel {
        CameraModel::new(
            Extrinsics::identity(),
            Intrinsics::new(8.0, 0.01, 0.01, 320.0, 180.0, 640, 360).unwrap(),
        )
    }

    fn open_square_scene() -> SceneDescription {
        let square = Polygon::new(vec![
            [0.0, 0.0],
            [20_000.0, 0.0],
            [20_000.0, 20_000.0],
            [0.0, 20_000.0],
        ])
        .unwrap();
        SceneDescription {
            background: None,
            camera: test_camera(),
            walkable: vec![square.clone()],
            obstacles: vec![],
            spawn_zones: vec![square],
        }
    }

    fn scene_with_pillar() -> SceneDescription {
        let mut scene = open_square_scene();
        scene.obstacles.push(Obstacle {
            footprint: Polygon::new(vec![
                [9_000.0, 9_000.0],
                [11_000.0, 9_000.0],
                [11_000.0, 11_000.0],
                [9_000.0, 11_000.0],
            ])
            .unwrap(),
            height_mm: 2_500.0,
        });
        scene
    }

    fn cfg(n: u32, p_group: f64, p_phone: f64, frames: u32, seed: u64) -> SimConfig {
        SimConfig {
            n_agents: (n, n),
            speed_min: 800.0,
            speed_max: 1600.0,
            p_group,
            p_phone,
            dt: 0.1,
            frames,
            rng_seed: seed,
        }
    }

    #[test]
    fn zero_agents_spawn_empty() {
        let scene = open_square_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agents = spawn_agents(&scene, &cfg(0, 0.3, 0.1, 1, 1), &mut rng).unwrap();
        assert!(agents.is_empty());
    }

    #[test]
    fn forced_group_shares_group_id_and_waypoint() {
        let scene = open_square_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let agents = spawn_agents(&scene, &cfg(2, 1.0, 0.0, 1, 7), &mut rng).unwrap();
        assert_eq!(agents.len(), 2);
        let ids: Vec<_> = agents.iter().map(|a| a.group_id().unwrap()).collect();
        assert_eq!(ids[0], ids[1]);
        assert_eq!(agents[0].waypoint(), agents[1].waypoint());
        assert_eq!(agents[0].speed, agents[1].speed, "groups walk at one speed");
        assert!(dist(agents[0].pos, agents[1].pos) >= R_MIN_MM);
        assert!(dist(agents[0].pos, agents[1].pos) <= R_GROUP_MM);
    }

    #[test]
    fn spawn_is_deterministic() {
        let scene = scene_with_pillar();
        let c = cfg(8, 0.4, 0.2, 1, 99);
        let a = spawn_agents(&scene, &c, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = spawn_agents(&scene, &c, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spawn_overflow_on_overcrowded_scene() {
        let tiny = Polygon::new(vec![[0.0, 0.0], [600.0, 0.0], [600.0, 600.0], [0.0, 600.0]])
            .unwrap();
        let scene = SceneDescription {
            background: None,
            camera: test_camera(),
            walkable: vec![tiny.clone()],
            obstacles: vec![],
            spawn_zones: vec![tiny],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = spawn_agents(&scene, &cfg(50, 0.0, 0.0, 1, 3), &mut rng).unwrap_err();
        assert!(matches!(err, SimError::SpawnOverflow { .. }));
    }

    #[test]
    fn phone_call_counts_down_in_place() {
        let scene = open_square_scene();
        let c = cfg(1, 0.0, 1.0, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agents = spawn_agents(&scene, &c, &mut rng).unwrap();
        let BehaviorState::StandPhoneCall { remaining_s } = agents[0].behavior else {
            panic!("expected a phone caller");
        };
        let stepped = step(&scene, &agents, &c, &mut rng);
        assert_eq!(stepped[0].pos, agents[0].pos);
        let BehaviorState::StandPhoneCall { remaining_s: after } = stepped[0].behavior else {
            panic!("call should continue");
        };
        assert!((remaining_s - after - c.dt).abs() < 1e-12);
    }

    #[test]
    fn phone_call_expires_into_solo_walk() {
        let scene = open_square_scene();
        let c = cfg(1, 0.0, 1.0, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agents = spawn_agents(&scene, &c, &mut rng).unwrap();
        for _ in 0..(35.0 / c.dt) as u32 {
            agents = step(&scene, &agents, &c, &mut rng);
            if matches!(agents[0].behavior, BehaviorState::WalkSolo { .. }) {
                assert!(agents[0].speed >= c.speed_min && agents[0].speed <= c.speed_max);
                return;
            }
        }
        panic!("phone call never ended");
    }

    #[test]
    fn solo_walker_approaches_waypoint() {
        let scene = open_square_scene();
        let c = cfg(1, 0.0, 0.0, 1, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agents = spawn_agents(&scene, &c, &mut rng).unwrap();
        let waypoint = agents[0].waypoint().unwrap();
        let mut d_prev = dist(agents[0].pos, waypoint);
        for _ in 0..10 {
            if d_prev <= R_ARRIVE_MM {
                break;
            }
            agents = step(&scene, &agents, &c, &mut rng);
            let d = dist(agents[0].pos, waypoint);
            assert!(d < d_prev, "distance must strictly decrease ({d} >= {d_prev})");
            d_prev = d;
        }
    }

    #[test]
    fn containment_and_speed_bound_over_many_steps() {
        let scene = scene_with_pillar();
        let c = cfg(10, 0.4, 0.15, 1, 123);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut agents = spawn_agents(&scene, &c, &mut rng).unwrap();
        for _ in 0..200 {
            let prev = agents.clone();
            agents = step(&scene, &agents, &c, &mut rng);
            for (a, b) in prev.iter().zip(&agents) {
                assert!(scene.position_free(b.pos), "agent {} escaped at {:?}", b.id, b.pos);
                assert!(dist(a.pos, b.pos) <= c.speed_max * c.dt + 1e-6);
                assert!((0.0..1.0).contains(&b.gait_phase));
            }
        }
    }

    #[test]
    fn trajectories_are_pure_functions_of_seed() {
        let scene = scene_with_pillar();
        let c = cfg(6, 0.5, 0.1, 50, 77);
        let a = simulate_frames(&scene, &c).unwrap();
        let b = simulate_frames(&scene, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn group_cohesion_over_long_run() {
        let scene = open_square_scene();
        let mut c = cfg(3, 1.0, 0.0, 500, 42);
        c.dt = 0.04;
        let frames = simulate_frames(&scene, &c).unwrap();
        let mut cohesive = 0u32;
        let mut total = 0u32;
        for frame in &frames {
            let mut groups: BTreeMap<u32, Vec<[f64; 2]>> = BTreeMap::new();
            for a in frame {
                if let Some(g) = a.group_id() {
                    groups.entry(g).or_default().push(a.pos);
                }
            }
            for members in groups.values() {
                if members.len() < 2 {
                    continue;
                }
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64;
                total += 1;
                if members.iter().all(|p| dist(*p, [cx, cy]) <= R_GROUP_MAX_MM) {
                    cohesive += 1;
                }
            }
        }
        assert!(total >= 400, "expected a group in most frames");
        let frac = f64::from(cohesive) / f64::from(total);
        assert!(frac >= 0.95, "group cohesion only {frac:.3}");
    }

    #[test]
    fn world_pose_matches_agent_state() {
        let agent = AgentState {
            id: 1,
            pos: [1000.0, 2000.0],
            heading: std::f64::consts::FRAC_PI_2,
            speed: 0.0,
            behavior: BehaviorState::StandPhoneCall { remaining_s: 1.0 },
            appearance_seed: 0,
            gait_phase: 0.0,
        };
        let pose = agent_world_pose(&agent);
        assert_eq!(pose.x_mm, 1000.0);
        assert_eq!(pose.y_mm, 2000.0);
        assert_eq!(pose.heading_rad, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn validate_catches_bad_scenes() {
        let scene = open_square_scene();
        assert_eq!(scene.validate(), Ok(()));

        let mut outside = scene.clone();
        outside.spawn_zones = vec![Polygon::new(vec![
            [30_000.0, 0.0],
            [31_000.0, 0.0],
            [31_000.0, 1_000.0],
            [30_000.0, 1_000.0],
        ])
        .unwrap()];
        assert_eq!(
            outside.validate(),
            Err(SimError::SpawnZoneOutsideWalkable { zone: 0 })
        );

        let mut blocked = scene.clone();
        blocked.spawn_zones = vec![Polygon::new(vec![
            [9_200.0, 9_200.0],
            [10_800.0, 9_200.0],
            [10_800.0, 10_800.0],
            [9_200.0, 10_800.0],
        ])
        .unwrap()];
        blocked.obstacles.push(Obstacle {
            footprint: Polygon::new(vec![
                [9_000.0, 9_000.0],
                [11_000.0, 9_000.0],
                [11_000.0, 11_000.0],
                [9_000.0, 11_000.0],
            ])
            .unwrap(),
            height_mm: 2_000.0,
        });
        assert_eq!(blocked.validate(), Err(SimError::AllSpawnZonesBlocked));

        let mut empty = scene;
        empty.spawn_zones.clear();
        assert_eq!(empty.validate(), Err(SimError::NoSpawnZones));
    }
}
