//! Synthetic multi-view manipulation simulator with the three
//! perceptually-aliased task families: episodic (clean the cued plate),
//! spatial (shell game), and sequential (seasoning order).
//!
//! The world is 2.5D: axis-aligned colored boxes on a table, a pose-controlled
//! EE with proximity grasping, and scripted observe-phase events. During the
//! act phase the candidate objects are indistinguishable and the hidden
//! latent never reaches a rendered pixel while it is concealed.

pub mod expert;
pub mod render;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TaskFamily;
use crate::dataset::{Calibration, CameraCalibration, WorkspaceBox};
use crate::geometry::{norm, sub as vsub, CameraModel, Vec3};

/// Per-fine-step EE displacement cap, meters.
pub const STEP_CAP: f64 = 0.05;
/// Grasp proximity radius, meters.
pub const GRASP_RADIUS: f64 = 0.05;
/// Cup center height above which the cup counts as lifted (cube revealed).
pub const REVEAL_Z: f64 = 0.16;
/// EE home pose.
pub const HOME: Vec3 = [0.0, 0.32, 0.22];
/// Prep pose for the sequential task.
pub const PREP: Vec3 = [0.0, 0.40, 0.24];

pub const SLOT_Y: f64 = 0.55;
pub const SLOT_XS: [f64; 3] = [-0.22, 0.0, 0.22];

pub fn slot_center(slot: usize) -> Vec3 {
    [SLOT_XS[slot], SLOT_Y, 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub image_size: usize,
    pub swap_min: usize,
    pub swap_max: usize,
    /// Fine frames per swap glide.
    pub swap_duration: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { image_size: 32, swap_min: 1, swap_max: 3, swap_duration: 28 }
    }
}

impl SimParams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        SimParams {
            image_size: cfg.image_size,
            swap_min: cfg.swap_min,
            swap_max: cfg.swap_max,
            swap_duration: cfg.swap_duration,
        }
    }
}

pub fn workspace() -> WorkspaceBox {
    WorkspaceBox { min: [-0.40, 0.20, 0.0], max: [0.40, 0.80, 0.42] }
}

/// Fixed camera rig: a static front camera and a hand camera rigidly
/// attached to the EE.
pub fn calibration() -> Calibration {
    let front_cam = CameraModel::look_at(0.95, [0.0, -0.30, 0.42], [0.0, 0.55, 0.05], [0.0, 0.0, 1.0]);
    let front = CameraCalibration {
        intrinsics: front_cam.intrinsics,
        attached_to_ee: false,
        mount_rotation: front_cam.rotation,
        mount_translation: front_cam.translation,
    };
    // Mount transform expressed in the EE-centered frame.
    let hand_cam =
        CameraModel::look_at(0.80, [0.0, -0.10, 0.07], [0.0, 0.12, -0.10], [0.0, 0.0, 1.0]);
    let hand = CameraCalibration {
        intrinsics: hand_cam.intrinsics,
        attached_to_ee: true,
        mount_rotation: hand_cam.rotation,
        mount_translation: hand_cam.translation,
    };
    Calibration { front, hand }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub half: Vec3,
    pub pos: Vec3,
    pub color: [f32; 3],
    pub visible: bool,
    pub graspable: bool,
}

impl Body {
    fn top(&self) -> f64 {
        self.pos[2] + self.half[2]
    }
}

/// Scripted swap: slots `a` and `b` exchange occupants over
/// `[start, start+duration)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapEvent {
    pub start: usize,
    pub duration: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObserveScript {
    /// Spatial: cube's initial slot and the swap schedule.
    pub cube_start_slot: usize,
    pub swaps: Vec<SwapEvent>,
    /// Episodic: which plate slides in.
    pub cued_slot: usize,
    pub slide_start: usize,
    pub slide_end: usize,
    /// First act-phase fine frame.
    pub observe_end: usize,
}

/// Trace the slot-swap permutation applied to the cube's slot.
pub fn apply_swaps(start_slot: usize, swaps: &[(usize, usize)]) -> usize {
    let mut s = start_slot;
    for &(a, b) in swaps {
        if s == a {
            s = b;
        } else if s == b {
            s = a;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageOutcome {
    pub spoon: u8,
    pub seasoned: bool,
    pub returned: bool,
}

/// Success bookkeeping updated by `step`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Progress {
    /// Spatial: index of the first lifted cup body.
    pub lifted_cup: Option<usize>,
    /// Episodic: slot index the tool cube was last placed on, if any.
    pub placed_on: Option<usize>,
    pub returned_home: bool,
    /// Sequential: per-stage outcomes in completion order.
    pub stages: Vec<StageOutcome>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub manipulation_success: bool,
    decision_correct: bool,
}

impl TrialOutcome {
    pub fn new(manipulation_success: bool, decision_correct: bool) -> Self {
        TrialOutcome { manipulation_success, decision_correct }
    }

    /// Decision success is only defined on manipulation success.
    pub fn decision_success(&self) -> Option<bool> {
        self.manipulation_success.then_some(self.decision_correct)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub task: TaskFamily,
    pub params: SimParams,
    pub frame: usize,
    pub ee: Vec3,
    pub ee_quat: [f64; 4],
    pub gripper: f64,
    pub grasped: Option<usize>,
    grasp_offset: Vec3,
    pub bodies: Vec<Body>,
    /// Body indices of the three candidates (cups / plates / spoons).
    pub candidates: [usize; 3],
    /// Extra task body (cube for spatial, tool cube for episodic, bowl for
    /// sequential).
    pub extra: usize,
    pub script: ObserveScript,
    /// Hidden latent: target slot (episodic), cube slot (spatial), progress
    /// stage (sequential).
    pub latent: u8,
    pub psi: u8,
    pub phase_id: u8,
    pub progress: Progress,
    /// The cube's current slot during the spatial task.
    cube_slot: usize,
    /// Which cup body currently occupies each slot.
    cup_at_slot: [usize; 3],
    pub clamp_violations: usize,
}

const CUP_HALF: Vec3 = [0.032, 0.032, 0.05];
const CUBE_HALF: Vec3 = [0.016, 0.016, 0.016];
const PLATE_HALF: Vec3 = [0.055, 0.055, 0.008];
const SPOON_HALF: Vec3 = [0.016, 0.045, 0.014];
const BOWL_HALF: Vec3 = [0.05, 0.05, 0.022];
const BOWL_POS: Vec3 = [0.0, 0.70, 0.022];
const TOOL_PICKUP: Vec3 = [0.0, 0.38, 0.016];
const CUP_HOVER_Z: f64 = 0.15;
const SPOON_COLORS: [[f32; 3]; 3] = [[0.20, 0.72, 0.25], [0.85, 0.20, 0.18], [0.90, 0.84, 0.18]];

impl WorldState {
    /// Seeded task layout with scripted observe-phase events.
    pub fn reset(task: TaskFamily, seed: u64, params: SimParams) -> WorldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_u64);
        let mut bodies = Vec::new();
        let mut script = ObserveScript::default();
        let mut latent = 0u8;
        let candidates: [usize; 3];
        let extra: usize;
        let mut cube_slot = 0usize;
        match task {
            TaskFamily::Spatial => {
                cube_slot = rng.gen_range(0..3usize);
                script.cube_start_slot = cube_slot;
                let k = rng.gen_range(params.swap_min..=params.swap_max);
                let cover_end = 24;
                let mut t = cover_end;
                for _ in 0..k {
                    let a = rng.gen_range(0..3usize);
                    let b = (a + rng.gen_range(1..3usize)) % 3;
                    script.swaps.push(SwapEvent { start: t, duration: params.swap_duration, a, b });
                    t += params.swap_duration;
                }
                script.observe_end = t + 8;
                let swap_pairs: Vec<(usize, usize)> =
                    script.swaps.iter().map(|s| (s.a, s.b)).collect();
                latent = apply_swaps(cube_slot, &swap_pairs) as u8;
                candidates = [0, 1, 2];
                for slot in 0..3 {
                    bodies.push(Body {
                        half: CUP_HALF,
                        pos: [SLOT_XS[slot], SLOT_Y, CUP_HOVER_Z],
                        color: [0.80, 0.25, 0.18],
                        visible: true,
                        graspable: true,
                    });
                }
                extra = bodies.len();
                let c = slot_center(cube_slot);
                bodies.push(Body {
                    half: CUBE_HALF,
                    pos: [c[0], c[1], CUBE_HALF[2]],
                    color: [0.15, 0.35, 0.90],
                    visible: true,
                    graspable: false,
                });
            }
            TaskFamily::Episodic => {
                let cued = rng.gen_range(0..3usize);
                latent = cued as u8;
                script.cued_slot = cued;
                script.slide_start = 8;
                script.slide_end = 44;
                script.observe_end = 56;
                candidates = [0, 1, 2];
                for slot in 0..3 {
                    let pos = if slot == cued {
                        // The cued plate starts at a staging position and is
                        // placed during the observe phase.
                        [SLOT_XS[slot], 0.78, PLATE_HALF[2]]
                    } else {
                        [SLOT_XS[slot], SLOT_Y, PLATE_HALF[2]]
                    };
                    bodies.push(Body {
                        half: PLATE_HALF,
                        pos,
                        color: [0.78, 0.76, 0.70],
                        visible: true,
                        graspable: false,
                    });
                }
                extra = bodies.len();
                bodies.push(Body {
                    half: CUBE_HALF,
                    pos: TOOL_PICKUP,
                    color: [0.92, 0.55, 0.15],
                    visible: true,
                    graspable: true,
                });
            }
            TaskFamily::Sequential => {
                script.observe_end = 16;
                latent = 0;
                candidates = [0, 1, 2];
                for slot in 0..3 {
                    bodies.push(Body {
                        half: SPOON_HALF,
                        pos: [SLOT_XS[slot], SLOT_Y, SPOON_HALF[2]],
                        color: SPOON_COLORS[slot],
                        visible: true,
                        graspable: true,
                    });
                }
                extra = bodies.len();
                bodies.push(Body {
                    half: BOWL_HALF,
                    pos: BOWL_POS,
                    color: [0.35, 0.32, 0.34],
                    visible: true,
                    graspable: false,
                });
            }
        }
        let mut state = WorldState {
            task,
            params,
            frame: 0,
            ee: HOME,
            ee_quat: [1.0, 0.0, 0.0, 0.0],
            gripper: 0.0,
            grasped: None,
            grasp_offset: [0.0; 3],
            bodies,
            candidates,
            extra,
            script,
            latent,
            psi: 0,
            phase_id: 0,
            progress: Progress::default(),
            cube_slot,
            cup_at_slot: [0, 1, 2],
            clamp_violations: 0,
        };
        state.apply_script();
        state.refresh_visibility();
        state
    }

    /// True while the hidden latent has no rendered trace (always true for
    /// episodic/sequential during act; false for spatial once the cube is
    /// revealed).
    pub fn latent_concealed(&self) -> bool {
        match self.task {
            TaskFamily::Spatial => !self.bodies[self.extra].visible,
            _ => true,
        }
    }

    /// Re-label the hidden latent, moving latent-dependent concealed state
    /// along with it. Rendering act-phase frames of the permuted state must
    /// be byte-identical while the latent is concealed.
    pub fn with_latent(&self, new_latent: u8) -> WorldState {
        let mut s = self.clone();
        match self.task {
            TaskFamily::Spatial => {
                let slot = new_latent as usize;
                s.latent = new_latent;
                s.cube_slot = slot;
                let cup = s.cup_at_slot[slot];
                let cup_xy = s.bodies[cup].pos;
                s.bodies[s.extra].pos = [cup_xy[0], cup_xy[1], CUBE_HALF[2]];
                s.refresh_visibility();
            }
            TaskFamily::Episodic => {
                s.latent = new_latent;
                s.script.cued_slot = new_latent as usize;
            }
            TaskFamily::Sequential => {
                s.latent = new_latent;
            }
        }
        s
    }

    fn smoothstep(x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    }

    /// Scripted observe-phase animation, a pure function of the frame index.
    fn apply_script(&mut self) {
        let f = self.frame;
        match self.task {
            TaskFamily::Spatial => {
                if f >= self.script.observe_end {
                    return;
                }
                // Cups hover, descend over [12, 24), then swap in sequence.
                let mut slot_of_cup = [0usize; 3];
                let mut positions = [[0.0f64; 3]; 3];
                for (slot, &xs) in SLOT_XS.iter().enumerate() {
                    positions[slot] = [xs, SLOT_Y, 0.0];
                }
                let mut cup_at_slot = [0usize, 1, 2];
                let mut cube_slot = self.script.cube_start_slot;
                let mut cup_world = [[0.0f64; 3]; 3];
                for slot in 0..3 {
                    cup_world[slot] = [SLOT_XS[slot], SLOT_Y, CUP_HALF[2]];
                }
                let descend = Self::smoothstep((f as f64 - 12.0) / 12.0);
                let z = CUP_HOVER_Z * (1.0 - descend) + CUP_HALF[2] * descend;
                for cw in &mut cup_world {
                    cw[2] = z;
                }
                for swap in &self.script.swaps {
                    if f < swap.start {
                        break;
                    }
                    let t = Self::smoothstep((f - swap.start) as f64 / swap.duration as f64);
                    let (sa, sb) = (swap.a, swap.b);
                    let (xa, xb) = (SLOT_XS[sa], SLOT_XS[sb]);
                    let cup_a = cup_at_slot[sa];
                    let cup_b = cup_at_slot[sb];
                    // Glide with a small depth bulge so the two cups do not
                    // overlap mid-swap.
                    let bulge = 0.055 * (std::f64::consts::PI * t).sin();
                    cup_world[cup_a] = [xa + (xb - xa) * t, SLOT_Y + bulge, z];
                    cup_world[cup_b] = [xb + (xa - xb) * t, SLOT_Y - bulge, z];
                    if t >= 1.0 {
                        cup_at_slot.swap(sa, sb);
                        if cube_slot == sa {
                            cube_slot = sb;
                        } else if cube_slot == sb {
                            cube_slot = sa;
                        }
                    } else {
                        // Mid-swap the cube follows its gliding cup.
                        if cube_slot == sa {
                            self.bodies[self.extra].pos =
                                [cup_world[cup_a][0], cup_world[cup_a][1], CUBE_HALF[2]];
                        } else if cube_slot == sb {
                            self.bodies[self.extra].pos =
                                [cup_world[cup_b][0], cup_world[cup_b][1], CUBE_HALF[2]];
                        }
                    }
                }
                for cup in 0..3 {
                    self.bodies[self.candidates[cup]].pos = cup_world[cup];
                }
                let _ = (slot_of_cup, positions);
                self.cup_at_slot = cup_at_slot;
                self.cube_slot = cube_slot;
                // Settled cube rests under its slot's cup.
                let active_swap =
                    self.script.swaps.iter().any(|s| f >= s.start && f < s.start + s.duration);
                if !active_swap {
                    let c = slot_center(cube_slot);
                    self.bodies[self.extra].pos = [c[0], c[1], CUBE_HALF[2]];
                }
            }
            TaskFamily::Episodic => {
                if f >= self.script.observe_end {
                    return;
                }
                let cued = self.script.cued_slot;
                let t = Self::smoothstep(
                    (f as f64 - self.script.slide_start as f64)
                        / (self.script.slide_end - self.script.slide_start) as f64,
                );
                let start_y = 0.78;
                let y = start_y + (SLOT_Y - start_y) * t;
                self.bodies[self.candidates[cued]].pos = [SLOT_XS[cued], y, PLATE_HALF[2]];
            }
            TaskFamily::Sequential => {}
        }
    }

    /// The spatial cube is concealed while some grounded cup covers it.
    fn refresh_visibility(&mut self) {
        if self.task != TaskFamily::Spatial {
            return;
        }
        let cube = self.bodies[self.extra].pos;
        let covered = self.candidates.iter().any(|&c| {
            let cup = &self.bodies[c];
            (cup.pos[0] - cube[0]).abs() < 0.03
                && (cup.pos[1] - cube[1]).abs() < 0.055
                && cup.pos[2] < 0.09
        });
        self.bodies[self.extra].visible = !covered;
    }

    fn in_observe(&self) -> bool {
        self.frame < self.script.observe_end
    }

    /// Advance one fine step toward the raw pose setpoint
    /// (position, quaternion, gripper channel).
    pub fn step(&mut self, setpoint: &[f64; 8]) {
        self.frame += 1;
        self.apply_script();

        let target = [setpoint[0], setpoint[1], setpoint[2]];
        let (target, clamped) = workspace().clamp(&target);
        if clamped {
            self.clamp_violations += 1;
        }
        let delta = vsub(&target, &self.ee);
        let dist = norm(&delta);
        let scale = if dist > STEP_CAP { STEP_CAP / dist } else { 1.0 };
        for i in 0..3 {
            self.ee[i] += delta[i] * scale;
        }
        self.ee_quat = [setpoint[3], setpoint[4], setpoint[5], setpoint[6]];

        let grip_cmd = setpoint[7];
        let was = self.gripper;
        self.gripper = grip_cmd;
        if was < 0.5 && grip_cmd >= 0.5 {
            self.try_grasp();
        } else if was >= 0.5 && grip_cmd < 0.5 {
            self.release();
        }

        if let Some(idx) = self.grasped {
            for i in 0..3 {
                self.bodies[idx].pos[i] = self.ee[i] + self.grasp_offset[i];
            }
        }

        self.refresh_visibility();
        self.update_progress();
        self.update_phase();
    }

    fn try_grasp(&mut self) {
        if self.grasped.is_some() || self.in_observe() {
            return;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in self.bodies.iter().enumerate() {
            if !b.graspable {
                continue;
            }
            let grasp_point = [b.pos[0], b.pos[1], b.top()];
            let d = norm(&vsub(&grasp_point, &self.ee));
            if d < GRASP_RADIUS && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((idx, _)) = best {
            self.grasped = Some(idx);
            self.grasp_offset = vsub(&self.bodies[idx].pos, &self.ee);
        }
    }

    fn release(&mut self) {
        let Some(idx) = self.grasped.take() else { return };
        // Dropped objects settle onto the surface under them.
        let mut rest = self.bodies[idx].half[2];
        if self.task == TaskFamily::Episodic && idx == self.extra {
            for &p in &self.candidates {
                let plate = &self.bodies[p];
                if (plate.pos[0] - self.bodies[idx].pos[0]).abs() < plate.half[0]
                    && (plate.pos[1] - self.bodies[idx].pos[1]).abs() < plate.half[1]
                {
                    rest = plate.top() + self.bodies[idx].half[2];
                }
            }
        }
        self.bodies[idx].pos[2] = rest;
    }

    fn update_progress(&mut self) {
        if self.in_observe() || self.progress.done {
            return;
        }
        match self.task {
            TaskFamily::Spatial => {
                if self.progress.lifted_cup.is_none() {
                    if let Some(g) = self.grasped {
                        if self.candidates.contains(&g) && self.bodies[g].pos[2] > REVEAL_Z {
                            self.progress.lifted_cup = Some(g);
                            self.progress.done = true;
                        }
                    }
                }
            }
            TaskFamily::Episodic => {
                if self.grasped == Some(self.extra) {
                    self.progress.placed_on = None;
                } else if self.grasped.is_none() {
                    let cube = self.bodies[self.extra].pos;
                    self.progress.placed_on = None;
                    for (slot, &p) in self.candidates.iter().enumerate() {
                        let plate = &self.bodies[p];
                        if (plate.pos[0] - cube[0]).abs() < plate.half[0]
                            && (plate.pos[1] - cube[1]).abs() < plate.half[1]
                            && cube[2] < plate.top() + 2.5 * CUBE_HALF[2]
                        {
                            self.progress.placed_on = Some(slot);
                        }
                    }
                    if self.progress.placed_on.is_some()
                        && norm(&vsub(&self.ee, &HOME)) < 0.05
                    {
                        self.progress.returned_home = true;
                        self.progress.done = true;
                    }
                }
            }
            TaskFamily::Sequential => {
                let stage = self.progress.stages.len();
                // Current in-flight stage state is tracked through phase_id.
                if let Some(g) = self.grasped {
                    if self.candidates.contains(&g) {
                        let spoon = self.candidates.iter().position(|&c| c == g).unwrap() as u8;
                        if stage < 3 && self.phase_id == (3 * stage + 1) as u8 {
                            // Decision resolved by the grasp.
                            self.progress.stages.push(StageOutcome {
                                spoon,
                                seasoned: false,
                                returned: false,
                            });
                        }
                        let cur = self.progress.stages.len().saturating_sub(1);
                        let candidates = self.candidates;
                        if let Some(st) = self.progress.stages.get_mut(cur) {
                            let pos = self.bodies[g].pos;
                            if g == candidates[st.spoon as usize]
                                && (pos[0] - BOWL_POS[0]).abs() < BOWL_HALF[0]
                                && (pos[1] - BOWL_POS[1]).abs() < BOWL_HALF[1]
                                && pos[2] < 0.09
                            {
                                st.seasoned = true;
                            }
                        }
                    }
                } else if let Some(st) = self.progress.stages.last_mut() {
                    if st.seasoned && !st.returned {
                        let idx = self.candidates[st.spoon as usize];
                        let slot = st.spoon as usize;
                        let p = self.bodies[idx].pos;
                        let home_slot = slot_center(slot);
                        if (p[0] - home_slot[0]).abs() < 0.05
                            && (p[1] - home_slot[1]).abs() < 0.05
                            && norm(&vsub(&self.ee, &PREP)) < 0.06
                        {
                            st.returned = true;
                            if self.progress.stages.len() == 3 {
                                self.progress.done = true;
                            }
                        }
                    }
                }
                self.latent = self
                    .progress
                    .stages
                    .iter()
                    .filter(|s| s.returned)
                    .count()
                    .min(2) as u8;
            }
        }
    }

    fn update_phase(&mut self) {
        if self.in_observe() {
            self.psi = 0;
            self.phase_id = 0;
            return;
        }
        self.psi = 1;
        match self.task {
            TaskFamily::Spatial | TaskFamily::Episodic => {
                self.phase_id = 1;
            }
            TaskFamily::Sequential => {
                // Nine phases: (decision, manipulation, recovery) per stage.
                let completed = self.progress.stages.iter().filter(|s| s.returned).count();
                let stage = completed.min(2);
                let in_flight = self.progress.stages.get(stage);
                let sub = match in_flight {
                    None => 0,                                       // decision
                    Some(st) if !st.seasoned => 1,                   // manipulation
                    Some(st) if st.seasoned && !st.returned => 2,    // recovery
                    Some(_) => 0,
                };
                self.phase_id = (3 * stage + 1 + sub) as u8;
            }
        }
    }

    /// Raw pose observation (position, quaternion, gripper).
    pub fn ee_pose(&self) -> [f64; 8] {
        [
            self.ee[0],
            self.ee[1],
            self.ee[2],
            self.ee_quat[0],
            self.ee_quat[1],
            self.ee_quat[2],
            self.ee_quat[3],
            self.gripper,
        ]
    }

    /// Pose normalized for model consumption: box-normalized position,
    /// quaternion raw, gripper raw.
    pub fn proprio(&self) -> [f32; 8] {
        let n = workspace().normalize(&self.ee);
        [
            n[0] as f32,
            n[1] as f32,
            n[2] as f32,
            self.ee_quat[0] as f32,
            self.ee_quat[1] as f32,
            self.ee_quat[2] as f32,
            self.ee_quat[3] as f32,
            self.gripper as f32,
        ]
    }

    pub fn outcome(&self) -> TrialOutcome {
        match self.task {
            TaskFamily::Spatial => {
                let manip = self.progress.lifted_cup.is_some();
                let correct = self
                    .progress
                    .lifted_cup
                    .map(|cup| self.cup_at_slot[self.cube_slot] == cup)
                    .unwrap_or(false);
                TrialOutcome::new(manip, correct)
            }
            TaskFamily::Episodic => {
                let manip = self.progress.returned_home && self.progress.placed_on.is_some();
                let correct = manip && self.progress.placed_on == Some(self.latent as usize);
                TrialOutcome::new(manip, correct)
            }
            TaskFamily::Sequential => {
                let manip = self.progress.stages.len() == 3
                    && self.progress.stages.iter().all(|s| s.seasoned && s.returned);
                let correct = manip
                    && self.progress.stages.iter().map(|s| s.spoon).collect::<Vec<_>>()
                        == vec![0, 1, 2];
                TrialOutcome::new(manip, correct)
            }
        }
    }

    /// Per-stage decision/manipulation outcomes for the sequential task.
    pub fn stage_outcomes(&self) -> &[StageOutcome] {
        &self.progress.stages
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_permutation_trace() {
        assert_eq!(apply_swaps(0, &[(0, 1), (1, 2)]), 2);
        assert_eq!(apply_swaps(1, &[(0, 1), (1, 2)]), 0);
        assert_eq!(apply_swaps(2, &[(0, 1), (1, 2)]), 1);
    }

    #[test]
    fn reset_is_deterministic() {
        let a = WorldState::reset(TaskFamily::Spatial, 42, SimParams::default());
        let b = WorldState::reset(TaskFamily::Spatial, 42, SimParams::default());
        assert_eq!(a, b);
        let mut a = a;
        let mut b = b;
        let sp = [0.1, 0.5, 0.2, 1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..50 {
            a.step(&sp);
            b.step(&sp);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_point_setpoint_only_advances_frame() {
        let mut s = WorldState::reset(TaskFamily::Sequential, 7, SimParams::default());
        // Move past the observe phase so nothing is scripted.
        let hold = [s.ee[0], s.ee[1], s.ee[2], 1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..20 {
            s.step(&hold);
        }
        let before = s.clone();
        s.step(&hold);
        assert_eq!(s.frame, before.frame + 1);
        assert_eq!(s.ee, before.ee);
        assert_eq!(s.bodies, before.bodies);
    }

    #[test]
    fn displacement_cap_bounds_progress() {
        let mut s = WorldState::reset(TaskFamily::Spatial, 3, SimParams::default());
        let start = s.ee;
        let target = [start[0] + 0.2, start[1], start[2], 1.0, 0.0, 0.0, 0.0, 0.0];
        let mut steps = 0;
        while (s.ee[0] - target[0]).abs() > 1e-9 && steps < 100 {
            s.step(&target);
            steps += 1;
        }
        assert!(steps >= 4, "0.2 m at cap 0.05 needs at least 4 steps, took {steps}");
    }

    #[test]
    fn out_of_box_setpoint_is_clamped_and_logged() {
        let mut s = WorldState::reset(TaskFamily::Spatial, 3, SimParams::default());
        let sp = [5.0, 5.0, 5.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        s.step(&sp);
        assert_eq!(s.clamp_violations, 1);
        let ws = workspace();
        assert!(s.ee[0] <= ws.max[0] + 1e-9);
    }

    #[test]
    fn cube_concealed_after_cover_and_revealed_by_lift() {
        let mut s = WorldState::reset(TaskFamily::Spatial, 11, SimParams::default());
        // Initially the cups hover: cube visible.
        assert!(s.bodies[s.extra].visible);
        let hold = [HOME[0], HOME[1], HOME[2], 1.0, 0.0, 0.0, 0.0, 0.0];
        while s.frame < s.script.observe_end {
            s.step(&hold);
        }
        assert!(!s.bodies[s.extra].visible, "cube concealed after covering");
        assert!(s.latent_concealed());

        // Drive to the latent cup and lift it.
        let slot = s.latent as usize;
        let cup_body = s.cup_at_slot[slot];
        let top = s.bodies[cup_body].top();
        let above = [SLOT_XS[slot], SLOT_Y, top + 0.1];
        for _ in 0..80 {
            s.step(&[above[0], above[1], above[2], 1.0, 0.0, 0.0, 0.0, 0.0]);
        }
        let at = [SLOT_XS[slot], SLOT_Y, top + 0.012];
        for _ in 0..20 {
            s.step(&[at[0], at[1], at[2], 1.0, 0.0, 0.0, 0.0, 0.0]);
        }
        for _ in 0..3 {
            s.step(&[at[0], at[1], at[2], 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        assert_eq!(s.grasped, Some(cup_body), "grasped the cup over the cube");
        for _ in 0..40 {
            s.step(&[at[0], at[1], 0.34, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        assert!(s.bodies[s.extra].visible, "lifting the cup reveals the cube");
        let out = s.outcome();
        assert!(out.manipulation_success);
        assert_eq!(out.decision_success(), Some(true));
    }

    #[test]
    fn act_phase_renders_do_not_depend_on_latent_while_concealed() {
        use super::render::render;
        let cal = calibration();
        for seed in 0..6u64 {
            let mut s = WorldState::reset(TaskFamily::Spatial, seed, SimParams::default());
            let hold = [HOME[0], HOME[1], HOME[2], 1.0, 0.0, 0.0, 0.0, 0.0];
            while s.frame < s.script.observe_end + 5 {
                s.step(&hold);
            }
            assert!(s.latent_concealed());
            let cam = cal.front.camera(&s.ee);
            let base = render(&s, &cam, 32);
            for perm in 0..3u8 {
                let alt = s.with_latent(perm);
                assert!(alt.latent_concealed());
                let img = render(&alt, &cam, 32);
                assert_eq!(base, img, "seed {seed} latent {perm}");
            }
        }
    }

    #[test]
    fn latent_matches_traced_permutation() {
        for seed in 0..20u64 {
            let s = WorldState::reset(TaskFamily::Spatial, seed, SimParams::default());
            let pairs: Vec<(usize, usize)> = s.script.swaps.iter().map(|w| (w.a, w.b)).collect();
            assert_eq!(s.latent as usize, apply_swaps(s.script.cube_start_slot, &pairs));
        }
    }
}
