//! Projective geometry: pinhole cameras, EE-anchored patch descriptors,
//! fundamental matrices, and the analytic epipolar feasibility bias.
//!
//! All image coordinates are normalized to the unit square so temperatures
//! and distances stay resolution-independent. All functions here are pure.

use crate::error::{EngramError, Result};
use crate::tensor::Tensor;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn mat3_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn mat3_inverse(a: &Mat3) -> Result<Mat3> {
    let det = mat3_det(a);
    if det.abs() < 1e-14 {
        return Err(EngramError::DegenerateGeometry("non-invertible 3x3 matrix".into()));
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[j][i] = sign * minor * inv_det;
        }
    }
    Ok(out)
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Pinhole camera: intrinsics in normalized image units plus a rigid
/// world-to-camera transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Mat3,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraModel {
    pub fn new(intrinsics: Mat3, rotation: Mat3, translation: Vec3) -> Self {
        debug_assert!((mat3_det(&rotation) - 1.0).abs() < 1e-6, "rotation must be proper");
        debug_assert!((intrinsics[2][2] - 1.0).abs() < 1e-12, "K[2][2] must be 1");
        CameraModel { intrinsics, rotation, translation }
    }

    /// Camera with focal length `f` (normalized units), principal point at
    /// the image center, positioned at `eye` looking toward `target`.
    pub fn look_at(f: f64, eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let fwd = normalize(&sub(&target, &eye));
        let right = normalize(&cross(&fwd, &up));
        let down = cross(&fwd, &right);
        // Camera axes: x right, y down, z forward.
        let rotation = [right, down, fwd];
        let translation = scale(&mat3_vec(&rotation, &eye), -1.0);
        let intrinsics = [[f, 0.0, 0.5], [0.0, f, 0.5], [0.0, 0.0, 1.0]];
        CameraModel::new(intrinsics, rotation, translation)
    }

    pub fn center(&self) -> Vec3 {
        // c = -R^T t
        scale(&mat3_vec(&mat3_transpose(&self.rotation), &self.translation), -1.0)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        add(&mat3_vec(&self.rotation, p), &self.translation)
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, p: &Vec3) -> f64 {
        self.to_camera(p)[2]
    }
}

/// Perspective projection to normalized image coordinates.
pub fn project(camera: &CameraModel, p: &Vec3) -> Result<[f64; 2]> {
    let pc = camera.to_camera(p);
    if pc[2] <= 0.0 {
        return Err(EngramError::BehindCamera { depth: pc[2] });
    }
    let uh = mat3_vec(&camera.intrinsics, &pc);
    Ok([uh[0] / uh[2], uh[1] / uh[2]])
}

/// Unit ray through a normalized image point, in the camera frame.
pub fn back_ray(camera: &CameraModel, u: &[f64; 2]) -> Result<Vec3> {
    let kinv = mat3_inverse(&camera.intrinsics)?;
    Ok(normalize(&mat3_vec(&kinv, &[u[0], u[1], 1.0])))
}

/// Normalized patch-center coordinates for a row-major grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub centers: Vec<[f64; 2]>,
}

impl PatchGrid {
    pub fn regular(cols: usize, rows: usize) -> Self {
        let mut centers = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                centers.push([(c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64]);
            }
        }
        PatchGrid { centers }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Per-patch geometric descriptor `[u, r, rho, cos_theta]` (7 values).
#[derive(Debug, Clone, PartialEq)]
pub struct GeoDescriptor {
    pub center: [f64; 2],
    pub ray: Vec3,
    pub ee_distance: f64,
    pub cos_angle: f64,
}

impl GeoDescriptor {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.center[0],
            self.center[1],
            self.ray[0],
            self.ray[1],
            self.ray[2],
            self.ee_distance,
            self.cos_angle,
        ]
    }
}

/// EE-anchored descriptors for every patch center of a view.
pub fn patch_descriptors(
    camera: &CameraModel,
    ee_world: &Vec3,
    grid: &PatchGrid,
) -> Result<Vec<GeoDescriptor>> {
    let kinv = mat3_inverse(&camera.intrinsics)?;
    let u_ee = project(camera, ee_world)?;
    let ee_cam = camera.to_camera(ee_world);
    let d = normalize(&ee_cam);
    let mut out = Vec::with_capacity(grid.len());
    for u in &grid.centers {
        let ray = normalize(&mat3_vec(&kinv, &[u[0], u[1], 1.0]));
        let rho = ((u[0] - u_ee[0]).powi(2) + (u[1] - u_ee[1]).powi(2)).sqrt();
        out.push(GeoDescriptor { center: *u, ray, ee_distance: rho, cos_angle: dot(&ray, &d) });
    }
    Ok(out)
}

/// Fundamental matrix mapping view `a` points to epipolar lines in view `b`,
/// built analytically from calibration: `F = K_b^-T [t]x R K_a^-1`,
/// normalized to unit Frobenius norm. Rank 2 by construction.
pub fn fundamental_matrix(cam_a: &CameraModel, cam_b: &CameraModel) -> Result<Mat3> {
    let r_rel = mat3_mul(&cam_b.rotation, &mat3_transpose(&cam_a.rotation));
    let t_rel = sub(&cam_b.translation, &mat3_vec(&r_rel, &cam_a.translation));
    if norm(&t_rel) < 1e-12 {
        return Err(EngramError::DegenerateGeometry("zero baseline between cameras".into()));
    }
    let tx: Mat3 = [
        [0.0, -t_rel[2], t_rel[1]],
        [t_rel[2], 0.0, -t_rel[0]],
        [-t_rel[1], t_rel[0], 0.0],
    ];
    let e = mat3_mul(&tx, &r_rel);
    let kb_inv_t = mat3_transpose(&mat3_inverse(&cam_b.intrinsics)?);
    let ka_inv = mat3_inverse(&cam_a.intrinsics)?;
    let mut f = mat3_mul(&kb_inv_t, &mat3_mul(&e, &ka_inv));
    let fro: f64 = f.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    for row in &mut f {
        for v in row {
            *v /= fro;
        }
    }
    Ok(f)
}

/// Squared point-to-epipolar-line distance, epsilon-guarded:
/// `d_ij = (u_j^T F u_i)^2 / (||(F u_i)_{1:2}||^2 + eps)`.
pub fn epipolar_distance(f: &Mat3, u_a: &[f64; 2], u_b: &[f64; 2], epsilon: f64) -> f64 {
    let line = mat3_vec(f, &[u_a[0], u_a[1], 1.0]);
    let num = u_b[0] * line[0] + u_b[1] * line[1] + line[2];
    (num * num) / (line[0] * line[0] + line[1] * line[1] + epsilon)
}

/// Attention bias `B(i,j) = -d_ij / tau`, an Na x Nb matrix of nonpositive
/// reals. Zero exactly when patch j lies on patch i's epipolar line.
pub fn epipolar_bias(
    f: &Mat3,
    centers_a: &PatchGrid,
    centers_b: &PatchGrid,
    epsilon: f64,
    temperature: f64,
) -> Tensor<f64> {
    assert!(epsilon > 0.0 && temperature > 0.0);
    let (na, nb) = (centers_a.len(), centers_b.len());
    let mut out = Tensor::zeros(na, nb);
    for (i, ua) in centers_a.centers.iter().enumerate() {
        let line = mat3_vec(f, &[ua[0], ua[1], 1.0]);
        let denom = line[0] * line[0] + line[1] * line[1] + epsilon;
        for (j, ub) in centers_b.centers.iter().enumerate() {
            let num = ub[0] * line[0] + ub[1] * line[1] + line[2];
            out.data[i * nb + j] = -(num * num) / denom / temperature;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn canonical_camera() -> CameraModel {
        // Unit focal length, principal point (0.5, 0.5), at the origin
        // looking down +z.
        CameraModel::new(
            [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.0, 0.0, 0.0],
        )
    }

    fn random_camera<R: Rng>(rng: &mut R) -> CameraModel {
        let eye = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..-0.5), rng.gen_range(0.5..1.5)];
        let target = [rng.gen_range(-0.2..0.2), rng.gen_range(0.3..0.7), rng.gen_range(0.0..0.2)];
        let f = rng.gen_range(0.7..1.4);
        CameraModel::look_at(f, eye, target, [0.0, 0.0, 1.0])
    }

    fn random_point<R: Rng>(rng: &mut R) -> Vec3 {
        [rng.gen_range(-0.2..0.2), rng.gen_range(0.3..0.7), rng.gen_range(0.0..0.2)]
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let cam = canonical_camera();
        let u = project(&cam, &[0.0, 0.0, 1.0]).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-12 && (u[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perspective_offset_halves_with_doubled_depth() {
        let cam = canonical_camera();
        let near = project(&cam, &[0.1, 0.0, 1.0]).unwrap();
        let far = project(&cam, &[0.1, 0.0, 2.0]).unwrap();
        let off_near = near[0] - 0.5;
        let off_far = far[0] - 0.5;
        assert!((off_near - 2.0 * off_far).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = canonical_camera();
        assert!(matches!(
            project(&cam, &[0.0, 0.0, -1.0]),
            Err(EngramError::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_back_ray_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cam = random_camera(&mut rng);
            let p = random_point(&mut rng);
            let u = project(&cam, &p).unwrap();
            let ray = back_ray(&cam, &u).unwrap();
            let true_dir = normalize(&cam.to_camera(&p));
            let angle = dot(&ray, &true_dir).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-6, "angle {angle}");
        }
    }

    #[test]
    fn descriptor_at_ee_projection_has_zero_rho_and_aligned_ray() {
        let cam = canonical_camera();
        let ee = [0.0, 0.0, 1.0];
        let u_ee = project(&cam, &ee).unwrap();
        let grid = PatchGrid { centers: vec![u_ee] };
        let d = patch_descriptors(&cam, &ee, &grid).unwrap();
        assert!(d[0].ee_distance < 1e-9);
        assert!((d[0].cos_angle - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_patches_share_rho() {
        let cam = canonical_camera();
        let ee = [0.0, 0.0, 1.0];
        let u_ee = project(&cam, &ee).unwrap();
        let grid = PatchGrid {
            centers: vec![[u_ee[0] - 0.1, u_ee[1]], [u_ee[0] + 0.1, u_ee[1]]],
        };
        let d = patch_descriptors(&cam, &ee, &grid).unwrap();
        assert!((d[0].ee_distance - d[1].ee_distance).abs() < 1e-12);
    }

    #[test]
    fn cos_theta_matches_explicit_vector_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let ee = random_point(&mut rng);
            let grid = PatchGrid::regular(4, 4);
            let descs = patch_descriptors(&cam, &ee, &grid).unwrap();
            for (u, d) in grid.centers.iter().zip(&descs) {
                // Independent route: build both unit vectors from raw camera
                // quantities and take their inner product.
                let kinv = mat3_inverse(&cam.intrinsics).unwrap();
                let ray = normalize(&mat3_vec(&kinv, &[u[0], u[1], 1.0]));
                let dir = normalize(&cam.to_camera(&ee));
                let expect = dot(&ray, &dir);
                assert!((expect - d.cos_angle).abs() < 1e-6);
                assert!((norm(&d.ray) - 1.0).abs() < 1e-6);
            }
        }
    }

    fn rectified_pair() -> (CameraModel, CameraModel) {
        let k = [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]];
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let a = CameraModel::new(k, eye, [0.0, 0.0, 0.0]);
        let b = CameraModel::new(k, eye, [-0.2, 0.0, 0.0]);
        (a, b)
    }

    #[test]
    fn rectified_pair_fundamental_has_canonical_form() {
        let (a, b) = rectified_pair();
        let f = fundamental_matrix(&a, &b).unwrap();
        // Proportional to [[0,0,0],[0,0,-1],[0,1,0]] up to scale.
        let s = f[2][1];
        assert!(s.abs() > 1e-9);
        let expect = [[0.0, 0.0, 0.0], [0.0, 0.0, -s], [0.0, s, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((f[i][j] - expect[i][j]).abs() < 1e-9, "entry {i}{j}");
            }
        }
    }

    #[test]
    fn epipolar_constraint_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cam_a = random_camera(&mut rng);
        let cam_b = random_camera(&mut rng);
        let f = fundamental_matrix(&cam_a, &cam_b).unwrap();
        for _ in 0..20 {
            let p = random_point(&mut rng);
            let ua = project(&cam_a, &p).unwrap();
            let ub = project(&cam_b, &p).unwrap();
            let line = mat3_vec(&f, &[ua[0], ua[1], 1.0]);
            let resid = (ub[0] * line[0] + ub[1] * line[1] + line[2]).abs();
            assert!(resid < 1e-6, "residual {resid}");
        }
    }

    #[test]
    fn swapped_cameras_transpose_fundamental() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cam_a = random_camera(&mut rng);
        let cam_b = random_camera(&mut rng);
        let fab = fundamental_matrix(&cam_a, &cam_b).unwrap();
        let fba = fundamental_matrix(&cam_b, &cam_a).unwrap();
        let fab_t = mat3_transpose(&fab);
        // Equal up to sign after Frobenius normalization.
        let sign = if (fab_t[2][1] - fba[2][1]).abs() < (fab_t[2][1] + fba[2][1]).abs() {
            1.0
        } else {
            -1.0
        };
        for i in 0..3 {
            for j in 0..3 {
                assert!((fab_t[i][j] - sign * fba[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fundamental_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cam_a = random_camera(&mut rng);
        let cam_b = random_camera(&mut rng);
        let f = fundamental_matrix(&cam_a, &cam_b).unwrap();
        assert!(mat3_det(&f).abs() < 1e-9);
    }

    #[test]
    fn zero_baseline_rejected() {
        let cam = canonical_camera();
        assert!(matches!(
            fundamental_matrix(&cam, &cam.clone()),
            Err(EngramError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn same_scanline_bias_is_zero_for_rectified_pair() {
        let (a, b) = rectified_pair();
        let f = fundamental_matrix(&a, &b).unwrap();
        let d = epipolar_distance(&f, &[0.2, 0.5], &[0.7, 0.5], 1e-12);
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_bias_for_rectified_pair() {
        // Vertical offset 0.3 on a rectified pair: d = 0.09, tau = 0.09 -> B = -1.
        let (a, b) = rectified_pair();
        let f = fundamental_matrix(&a, &b).unwrap();
        let ga = PatchGrid { centers: vec![[0.2, 0.5]] };
        let gb = PatchGrid { centers: vec![[0.7, 0.8]] };
        let bias = epipolar_bias(&f, &ga, &gb, 1e-12, 0.09);
        assert!((bias.data[0] - (-1.0)).abs() < 1e-9, "bias {}", bias.data[0]);
    }

    #[test]
    fn bias_invariant_to_fundamental_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cam_a = random_camera(&mut rng);
        let cam_b = random_camera(&mut rng);
        let f = fundamental_matrix(&cam_a, &cam_b).unwrap();
        let mut f_scaled = f;
        for row in &mut f_scaled {
            for v in row {
                *v *= 137.0;
            }
        }
        let ga = PatchGrid::regular(4, 4);
        let gb = PatchGrid::regular(4, 4);
        let b1 = epipolar_bias(&f, &ga, &gb, 1e-14, 0.05);
        let b2 = epipolar_bias(&f_scaled, &ga, &gb, 1e-14, 0.05);
        for (x, y) in b1.data.iter().zip(&b2.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn common_point_bias_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let cam_a = random_camera(&mut rng);
            let cam_b = random_camera(&mut rng);
            let f = fundamental_matrix(&cam_a, &cam_b).unwrap();
            let p = random_point(&mut rng);
            let ua = project(&cam_a, &p).unwrap();
            let ub = project(&cam_b, &p).unwrap();
            let d = epipolar_distance(&f, &ua, &ub, 1e-12);
            assert!(d < 1e-10, "distance {d}");
        }
    }

    proptest! {
        #[test]
        fn rho_is_a_metric_on_sampled_triples(
            ax in 0.0..1.0f64, ay in 0.0..1.0f64,
            bx in 0.0..1.0f64, by in 0.0..1.0f64,
            cx in 0.0..1.0f64, cy in 0.0..1.0f64,
        ) {
            let rho = |p: [f64;2], q: [f64;2]| ((p[0]-q[0]).powi(2) + (p[1]-q[1]).powi(2)).sqrt();
            let a = [ax, ay];
            let b = [bx, by];
            let c = [cx, cy];
            prop_assert!(rho(a, a) == 0.0);
            prop_assert!(rho(a, c) <= rho(a, b) + rho(b, c) + 1e-12);
        }

        #[test]
        fn bias_entries_are_nonpositive(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam_a = random_camera(&mut rng);
            let cam_b = random_camera(&mut rng);
            let f = fundamental_matrix(&cam_a, &cam_b).unwrap();
            let g = PatchGrid::regular(3, 3);
            let b = epipolar_bias(&f, &g, &g, 1e-8, 0.05);
            prop_assert!(b.data.iter().all(|&v| v <= 0.0));
        }
    }
}
