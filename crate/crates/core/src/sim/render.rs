//! Flat-shaded software rasterizer: colored axis-aligned boxes projected
//! through a pinhole camera, occlusion by painter's-order depth, fixed
//! directional lighting. Deterministic by construction.

use crate::geometry::{normalize, project, CameraModel, Vec3};

use super::{Body, WorldState};

const BACKGROUND: [f32; 3] = [0.18, 0.20, 0.24];
const TABLE_COLOR: [f32; 3] = [0.55, 0.47, 0.38];
const EE_COLOR: [f32; 3] = [0.12, 0.12, 0.16];
const LIGHT: Vec3 = [0.30, -0.50, 0.80];
const NEAR_PLANE: f64 = 0.05;

struct Face {
    /// Projected vertex positions in pixel coordinates.
    corners: [[f64; 2]; 4],
    depth: f64,
    color: [f32; 3],
}

fn box_faces(camera: &CameraModel, center: &Vec3, half: &Vec3, color: [f32; 3], size: usize, out: &mut Vec<Face>) {
    // 6 faces; each defined by an axis and sign with outward normal.
    const AXES: [(usize, f64); 6] =
        [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)];
    let light = normalize(&LIGHT);
    for &(axis, sign) in &AXES {
        let mut normal = [0.0; 3];
        normal[axis] = sign;
        let lambert = (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).max(0.0);
        let shade = 0.55 + 0.45 * lambert;
        let shaded = [
            (color[0] * shade as f32).min(1.0),
            (color[1] * shade as f32).min(1.0),
            (color[2] * shade as f32).min(1.0),
        ];
        // The four corners of this face in world space.
        let (u_axis, v_axis) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut corners_world = [[0.0f64; 3]; 4];
        let offsets = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        for (k, &(du, dv)) in offsets.iter().enumerate() {
            let mut c = *center;
            c[axis] += sign * half[axis];
            c[u_axis] += du * half[u_axis];
            c[v_axis] += dv * half[v_axis];
            corners_world[k] = c;
        }
        // Back-face cull against the camera direction saves fill work but is
        // not required for correctness under painter's order; keep all faces
        // whose corners are in front of the near plane.
        let mut corners = [[0.0f64; 2]; 4];
        let mut depth_sum = 0.0;
        let mut ok = true;
        for (k, cw) in corners_world.iter().enumerate() {
            let d = camera.depth(cw);
            if d < NEAR_PLANE {
                ok = false;
                break;
            }
            depth_sum += d;
            match project(camera, cw) {
                Ok(u) => {
                    corners[k] = [u[0] * size as f64, u[1] * size as f64];
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        out.push(Face { corners, depth: depth_sum / 4.0, color: shaded });
    }
}

fn fill_triangle(img: &mut [f32], size: usize, a: &[f64; 2], b: &[f64; 2], c: &[f64; 2], color: [f32; 3]) {
    let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
    let max_x = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(size);
    let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
    let max_y = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(size);
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if area.abs() < 1e-12 {
        return;
    }
    for py in min_y..max_y {
        for px in min_x..max_x {
            let p = [px as f64 + 0.5, py as f64 + 0.5];
            let w0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let w1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0]);
            let w2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0]);
            let inside = if area > 0.0 {
                w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
            } else {
                w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
            };
            if inside {
                let idx = (py * size + px) * 3;
                img[idx] = color[0];
                img[idx + 1] = color[1];
                img[idx + 2] = color[2];
            }
        }
    }
}

/// Render the scene from a camera at `size x size`, returning u8 RGB bytes.
pub fn render(state: &WorldState, camera: &CameraModel, size: usize) -> Vec<u8> {
    let mut img = vec![0.0f32; size * size * 3];
    for px in img.chunks_mut(3) {
        px.copy_from_slice(&BACKGROUND);
    }
    // The table slab is drawn first, unsorted: it lies below every object,
    // and its face centroids would misorder against small distant bodies
    // under painter's sorting.
    let mut table = Vec::with_capacity(6);
    box_faces(camera, &[0.0, 0.5, -0.012], &[0.42, 0.33, 0.012], TABLE_COLOR, size, &mut table);
    let mut t_order: Vec<usize> = (0..table.len()).collect();
    t_order.sort_by(|&i, &j| {
        table[j].depth.partial_cmp(&table[i].depth).unwrap_or(std::cmp::Ordering::Equal)
    });
    for idx in t_order {
        let f = &table[idx];
        fill_triangle(&mut img, size, &f.corners[0], &f.corners[1], &f.corners[2], f.color);
        fill_triangle(&mut img, size, &f.corners[0], &f.corners[2], &f.corners[3], f.color);
    }

    let mut faces = Vec::with_capacity((state.bodies.len() + 1) * 6);
    for body in &state.bodies {
        if !body.visible {
            continue;
        }
        box_faces(camera, &body.pos, &body.half, body.color, size, &mut faces);
    }
    // EE marker.
    let ee_body = Body {
        half: [0.014, 0.014, 0.014],
        pos: state.ee,
        color: EE_COLOR,
        visible: true,
        graspable: false,
    };
    box_faces(camera, &ee_body.pos, &ee_body.half, ee_body.color, size, &mut faces);

    // Painter's order: far faces first; ties broken by insertion index for
    // determinism.
    let mut order: Vec<usize> = (0..faces.len()).collect();
    order.sort_by(|&i, &j| {
        faces[j].depth.partial_cmp(&faces[i].depth).unwrap_or(std::cmp::Ordering::Equal)
    });
    for idx in order {
        let f = &faces[idx];
        fill_triangle(&mut img, size, &f.corners[0], &f.corners[1], &f.corners[2], f.color);
        fill_triangle(&mut img, size, &f.corners[0], &f.corners[2], &f.corners[3], f.color);
    }
    img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Count pixels whose color is closer to `target` than to any other listed
/// color (test oracle helper).
pub fn count_pixels_near(img: &[u8], target: [f32; 3], tolerance: f32) -> usize {
    img.chunks(3)
        .filter(|px| {
            let d0 = (px[0] as f32 / 255.0 - target[0]).abs();
            let d1 = (px[1] as f32 / 255.0 - target[1]).abs();
            let d2 = (px[2] as f32 / 255.0 - target[2]).abs();
            d0 < tolerance && d1 < tolerance && d2 < tolerance
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskFamily;
    use crate::sim::{calibration, SimParams, WorldState, HOME};

    #[test]
    fn empty_scene_is_background() {
        let mut state = WorldState::reset(TaskFamily::Spatial, 0, SimParams::default());
        state.bodies.clear();
        // Also pull the EE and table out of view by rendering a camera that
        // looks away from the scene.
        let cam = crate::geometry::CameraModel::look_at(
            0.9,
            [0.0, -0.3, 0.4],
            [0.0, -5.0, 0.4],
            [0.0, 0.0, 1.0],
        );
        let img = render(&state, &cam, 16);
        let bg = [
            (BACKGROUND[0] * 255.0).round() as u8,
            (BACKGROUND[1] * 255.0).round() as u8,
            (BACKGROUND[2] * 255.0).round() as u8,
        ];
        assert!(img.chunks(3).all(|px| px == bg));
    }

    #[test]
    fn hidden_cube_contributes_no_pixels() {
        let cal = calibration();
        let mut s = WorldState::reset(TaskFamily::Spatial, 5, SimParams::default());
        let hold = [HOME[0], HOME[1], HOME[2], 1.0, 0.0, 0.0, 0.0, 0.0];
        // Before covering: the cube is visible from the front.
        let cam = cal.front.camera(&s.ee);
        let img = render(&s, &cam, 32);
        let cube_color = [0.15f32, 0.35, 0.90];
        assert!(count_pixels_near(&img, cube_color, 0.22) > 0, "cube visible at reset");
        while s.frame < s.script.observe_end {
            s.step(&hold);
        }
        let front = render(&s, &cal.front.camera(&s.ee), 32);
        let hand = render(&s, &cal.hand.camera(&s.ee), 32);
        assert_eq!(count_pixels_near(&front, cube_color, 0.22), 0);
        assert_eq!(count_pixels_near(&hand, cube_color, 0.22), 0);
    }

    #[test]
    fn candidates_render_identically_under_latent_swap() {
        let cal = calibration();
        let mut s = WorldState::reset(TaskFamily::Spatial, 9, SimParams::default());
        let hold = [HOME[0], HOME[1], HOME[2], 1.0, 0.0, 0.0, 0.0, 0.0];
        while s.frame < s.script.observe_end + 3 {
            s.step(&hold);
        }
        let cam = cal.front.camera(&s.ee);
        let a = render(&s, &cam, 32);
        let b = render(&s.with_latent((s.latent + 1) % 3), &cam, 32);
        assert_eq!(a, b);
    }

    #[test]
    fn render_is_deterministic() {
        let cal = calibration();
        let s = WorldState::reset(TaskFamily::Episodic, 13, SimParams::default());
        let cam = cal.front.camera(&s.ee);
        assert_eq!(render(&s, &cam, 32), render(&s, &cam, 32));
    }
}
