//! Privileged scripted expert (reads the hidden latent) and episode
//! recording: full-rate rollout, temporal downsampling, dataset assembly.

use crate::config::TaskFamily;
use crate::dataset::{Dataset, Episode, Frame};
use crate::error::Result;
use crate::geometry::{norm, sub as vsub, Vec3};

use super::render::render;
use super::{calibration, slot_center, workspace, SimParams, WorldState, HOME, PREP, REVEAL_Z};

const EXPERT_SPEED: f64 = 0.016;
const HOVER: f64 = 0.10;
const LIFT_Z: f64 = 0.33;

/// Incremental setpoint toward a target position.
fn toward(ee: &Vec3, target: &Vec3, grip: f64) -> [f64; 8] {
    let delta = vsub(target, ee);
    let dist = norm(&delta);
    let scale = if dist > EXPERT_SPEED { EXPERT_SPEED / dist } else { 1.0 };
    [
        ee[0] + delta[0] * scale,
        ee[1] + delta[1] * scale,
        ee[2] + delta[2] * scale,
        1.0,
        0.0,
        0.0,
        0.0,
        grip,
    ]
}

fn hold(ee: &Vec3, grip: f64) -> [f64; 8] {
    [ee[0], ee[1], ee[2], 1.0, 0.0, 0.0, 0.0, grip]
}

fn near_xy(ee: &Vec3, p: &Vec3, tol: f64) -> bool {
    (ee[0] - p[0]).abs() < tol && (ee[1] - p[1]).abs() < tol
}

/// Approach-grasp helper: hover above the grasp point, descend, close.
fn approach_and_grasp(ee: &Vec3, grasp_point: &Vec3) -> [f64; 8] {
    if !near_xy(ee, grasp_point, 0.006) {
        let hover_target = [grasp_point[0], grasp_point[1], grasp_point[2] + HOVER];
        return toward(ee, &hover_target, 0.0);
    }
    if ee[2] > grasp_point[2] + 0.012 {
        return toward(ee, grasp_point, 0.0);
    }
    hold(ee, 1.0)
}

/// One privileged expert decision: the pose setpoint for the current frame.
/// Always decision- and manipulation-correct by construction.
pub fn expert_setpoint(state: &WorldState) -> [f64; 8] {
    let ee = &state.ee;
    if state.frame < state.script.observe_end {
        let rest = match state.task {
            TaskFamily::Sequential => PREP,
            _ => HOME,
        };
        return toward(ee, &rest, 0.0);
    }
    match state.task {
        TaskFamily::Spatial => {
            if state.progress.done {
                return hold(ee, 1.0);
            }
            let slot = state.latent as usize;
            let cup = state.cup_at_slot[slot];
            let cup_body = &state.bodies[cup];
            if state.grasped == Some(cup) {
                let up = [cup_body.pos[0], cup_body.pos[1], LIFT_Z + 0.06];
                return toward(ee, &up, 1.0);
            }
            let grasp_point =
                [cup_body.pos[0], cup_body.pos[1], cup_body.pos[2] + cup_body.half[2] + 0.006];
            approach_and_grasp(ee, &grasp_point)
        }
        TaskFamily::Episodic => {
            let tool = state.extra;
            let tool_body = &state.bodies[tool];
            if state.progress.placed_on.is_some() && state.grasped.is_none() {
                return toward(ee, &HOME, 0.0);
            }
            if state.grasped == Some(tool) {
                let plate_slot = state.latent as usize;
                let target = slot_center(plate_slot);
                let drop = [target[0], target[1], 0.075];
                if near_xy(ee, &target, 0.008) && ee[2] <= drop[2] + 0.01 {
                    return hold(ee, 0.0);
                }
                if near_xy(ee, &target, 0.008) {
                    return toward(ee, &drop, 1.0);
                }
                let transit = [target[0], target[1], 0.17];
                return toward(ee, &transit, 1.0);
            }
            let grasp_point =
                [tool_body.pos[0], tool_body.pos[1], tool_body.pos[2] + tool_body.half[2] + 0.006];
            approach_and_grasp(ee, &grasp_point)
        }
        TaskFamily::Sequential => {
            let returned = state.progress.stages.iter().filter(|s| s.returned).count();
            if returned == 3 {
                return toward(ee, &PREP, 0.0);
            }
            let in_flight = state.progress.stages.len() > returned;
            if !in_flight {
                // Decision: go grasp the next spoon in the green-red-yellow
                // order.
                let spoon = state.candidates[returned];
                let b = &state.bodies[spoon];
                let grasp_point = [b.pos[0], b.pos[1], b.pos[2] + b.half[2] + 0.006];
                return approach_and_grasp(ee, &grasp_point);
            }
            let stage = state.progress.stages.last().expect("in flight");
            let spoon_idx = state.candidates[stage.spoon as usize];
            if !stage.seasoned {
                // Manipulation: carry the spoon over the bowl and dip.
                let bowl = &state.bodies[state.extra];
                let over = [bowl.pos[0], bowl.pos[1], 0.16];
                let dip = [bowl.pos[0], bowl.pos[1], 0.075];
                if near_xy(ee, &bowl.pos, 0.01) {
                    return toward(ee, &dip, 1.0);
                }
                return toward(ee, &over, 1.0);
            }
            if !stage.returned {
                if state.grasped == Some(spoon_idx) {
                    // Recovery: bring the spoon back to its slot and release.
                    let slot = slot_center(stage.spoon as usize);
                    let place = [slot[0], slot[1], 0.06];
                    if near_xy(ee, &slot, 0.006) && ee[2] <= place[2] + 0.012 {
                        return hold(ee, 0.0);
                    }
                    if near_xy(ee, &slot, 0.006) {
                        return toward(ee, &place, 1.0);
                    }
                    let transit = [slot[0], slot[1], 0.16];
                    return toward(ee, &transit, 1.0);
                }
                return toward(ee, &PREP, 0.0);
            }
            toward(ee, &PREP, 0.0)
        }
    }
}

/// Roll the expert in a fresh environment, recording every fine frame.
pub fn record_episode(task: TaskFamily, seed: u64, params: &SimParams) -> Episode {
    let cal = calibration();
    let mut state = WorldState::reset(task, seed, *params);
    let mut frames = Vec::new();
    let mut post_done = 0usize;
    for _ in 0..4000 {
        let front_cam = cal.front.camera(&state.ee);
        let hand_cam = cal.hand.camera(&state.ee);
        let front_image = render(&state, &front_cam, params.image_size);
        let hand_image = render(&state, &hand_cam, params.image_size);
        let pose = state.ee_pose();
        let mut ee_pose = [0.0f32; 8];
        for (o, v) in ee_pose.iter_mut().zip(&pose) {
            *o = *v as f32;
        }
        frames.push(Frame {
            front_image,
            hand_image,
            proprio: state.proprio(),
            psi: state.psi,
            phase_id: state.phase_id,
            latent: state.latent,
            ee_pose,
        });
        if state.progress.done {
            post_done += 1;
            if post_done >= 8 {
                break;
            }
        }
        let sp = expert_setpoint(&state);
        state.step(&sp);
    }
    assert!(state.progress.done, "expert failed to complete task {task:?} seed {seed}");
    Episode { frames }
}

/// Keep every `stride`-th frame starting from frame 0.
pub fn downsample(episode: &Episode, stride: usize) -> Episode {
    Episode { frames: episode.frames.iter().step_by(stride.max(1)).cloned().collect() }
}

/// Run the expert over `n_episodes` seeds, downsample, and assemble the
/// dataset container.
pub fn record_dataset(
    task: TaskFamily,
    n_episodes: usize,
    seed: u64,
    params: &SimParams,
    stride: usize,
) -> Dataset {
    let episodes = (0..n_episodes)
        .map(|i| downsample(&record_episode(task, seed.wrapping_add(i as u64), params), stride))
        .collect();
    Dataset {
        task,
        image_size: params.image_size as u16,
        calibration: calibration(),
        workspace: workspace(),
        episodes,
    }
}

/// Record and save in one call (the `gen-data` entry point).
pub fn record_dataset_to(
    path: &std::path::Path,
    task: TaskFamily,
    n_episodes: usize,
    seed: u64,
    params: &SimParams,
    stride: usize,
) -> Result<Dataset> {
    let ds = record_dataset(task, n_episodes, seed, params, stride);
    ds.save(path)?;
    Ok(ds)
}
