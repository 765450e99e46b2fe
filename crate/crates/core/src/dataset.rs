//! Episode container: versioned little-endian binary file with a calibration
//! block, workspace box, episode index table, and per-episode frame blocks
//! (images as raw u8 RGB, proprio/pose as 32-bit reals, labels as u8).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::TaskFamily;
use crate::error::{EngramError, Result};
use crate::geometry::{mat3_vec, sub as vsub, CameraModel, Mat3, Vec3};

pub const DATASET_MAGIC: &[u8; 4] = b"EMEM";
pub const DATASET_VERSION: u16 = 1;

/// One camera: intrinsics, a static-or-rigidly-attached flag, and the mount
/// transform (rotation + translation, 12 reals). For a static camera the
/// mount is the world-to-camera extrinsics; for an EE-mounted camera it maps
/// the EE-centered frame to the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub intrinsics: Mat3,
    pub attached_to_ee: bool,
    pub mount_rotation: Mat3,
    pub mount_translation: Vec3,
}

impl CameraCalibration {
    /// Instantiate the camera for a given EE position. Hand-mounted cameras
    /// are recomputed every frame from the EE pose:
    /// `x_cam = R (x_w - p_ee) + t_mount = R x_w + (t_mount - R p_ee)`.
    pub fn camera(&self, ee_position: &Vec3) -> CameraModel {
        if self.attached_to_ee {
            let shift = mat3_vec(&self.mount_rotation, ee_position);
            let translation = vsub(&self.mount_translation, &shift);
            CameraModel::new(self.intrinsics, self.mount_rotation, translation)
        } else {
            CameraModel::new(self.intrinsics, self.mount_rotation, self.mount_translation)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub front: CameraCalibration,
    pub hand: CameraCalibration,
}

/// Axis-aligned workspace box `[min, max]`, used to normalize positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl WorkspaceBox {
    /// Affine map of a world position into `[-1, 1]^3`.
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = 2.0 * (p[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0;
        }
        out
    }

    pub fn denormalize(&self, p: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.min[i] + (p[i] + 1.0) * 0.5 * (self.max[i] - self.min[i]);
        }
        out
    }

    pub fn clamp(&self, p: &Vec3) -> (Vec3, bool) {
        let mut out = *p;
        let mut clamped = false;
        for i in 0..3 {
            if out[i] < self.min[i] {
                out[i] = self.min[i];
                clamped = true;
            }
            if out[i] > self.max[i] {
                out[i] = self.max[i];
                clamped = true;
            }
        }
        (out, clamped)
    }
}

/// One recorded frame after temporal downsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub front_image: Vec<u8>,
    pub hand_image: Vec<u8>,
    /// Normalized observation vector: box-normalized position, quaternion,
    /// gripper channel.
    pub proprio: [f32; 8],
    /// Observe/act indicator.
    pub psi: u8,
    /// Fine-grained phase annotation (task specific).
    pub phase_id: u8,
    /// Hidden-latent label.
    pub latent: u8,
    /// Raw world EE pose (position, quaternion, gripper).
    pub ee_pose: [f32; 8],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame index at which the current phase of frame `t` ends (inclusive
    /// index of its last frame).
    pub fn phase_end(&self, t: usize) -> usize {
        let phase = self.frames[t].phase_id;
        let mut end = t;
        while end + 1 < self.frames.len() && self.frames[end + 1].phase_id == phase {
            end += 1;
        }
        end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskFamily,
    pub image_size: u16,
    pub calibration: Calibration,
    pub workspace: WorkspaceBox,
    pub episodes: Vec<Episode>,
}

fn write_mat3<W: Write>(w: &mut W, m: &Mat3) -> Result<()> {
    for row in m {
        for &v in row {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_mat3<R: Read>(r: &mut R) -> Result<Mat3> {
    let mut m = [[0.0f64; 3]; 3];
    for row in &mut m {
        for v in row {
            *v = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok(m)
}

fn write_camera<W: Write>(w: &mut W, c: &CameraCalibration) -> Result<()> {
    write_mat3(w, &c.intrinsics)?;
    w.write_u8(c.attached_to_ee as u8)?;
    write_mat3(w, &c.mount_rotation)?;
    for &v in &c.mount_translation {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_camera<R: Read>(r: &mut R) -> Result<CameraCalibration> {
    let intrinsics = read_mat3(r)?;
    let attached = r.read_u8()? != 0;
    let mount_rotation = read_mat3(r)?;
    let mut mount_translation = [0.0f64; 3];
    for v in &mut mount_translation {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(CameraCalibration {
        intrinsics,
        attached_to_ee: attached,
        mount_rotation,
        mount_translation,
    })
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(DATASET_MAGIC)?;
        w.write_u16::<LittleEndian>(DATASET_VERSION)?;
        w.write_u8(self.task.id())?;
        w.write_u16::<LittleEndian>(self.image_size)?;
        write_camera(&mut w, &self.calibration.front)?;
        write_camera(&mut w, &self.calibration.hand)?;
        for &v in self.workspace.min.iter().chain(self.workspace.max.iter()) {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(self.episodes.len() as u32)?;
        // Index table: byte offset and frame count per episode. Offsets are
        // relative to the end of the table.
        let image_bytes = self.image_size as usize * self.image_size as usize * 3;
        let frame_bytes = 2 * image_bytes + 8 * 4 + 3 + 8 * 4;
        let mut offset: u64 = 0;
        for ep in &self.episodes {
            w.write_u64::<LittleEndian>(offset)?;
            w.write_u32::<LittleEndian>(ep.frames.len() as u32)?;
            offset += (ep.frames.len() * frame_bytes) as u64;
        }
        for ep in &self.episodes {
            for f in &ep.frames {
                debug_assert_eq!(f.front_image.len(), image_bytes);
                w.write_all(&f.front_image)?;
                w.write_all(&f.hand_image)?;
                for &v in &f.proprio {
                    w.write_f32::<LittleEndian>(v)?;
                }
                w.write_u8(f.psi)?;
                w.write_u8(f.phase_id)?;
                w.write_u8(f.latent)?;
                for &v in &f.ee_pose {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(EngramError::DatasetFormat("bad magic".into()));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != DATASET_VERSION {
            return Err(EngramError::DatasetFormat(format!("unsupported version {version}")));
        }
        let task = TaskFamily::from_id(r.read_u8()?)?;
        let image_size = r.read_u16::<LittleEndian>()?;
        let front = read_camera(&mut r)?;
        let hand = read_camera(&mut r)?;
        let mut ws = [0.0f64; 6];
        for v in &mut ws {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let n_episodes = r.read_u32::<LittleEndian>()? as usize;
        let mut counts = Vec::with_capacity(n_episodes);
        for _ in 0..n_episodes {
            let _offset = r.read_u64::<LittleEndian>()?;
            counts.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let image_bytes = image_size as usize * image_size as usize * 3;
        let mut episodes = Vec::with_capacity(n_episodes);
        for count in counts {
            let mut frames = Vec::with_capacity(count);
            for _ in 0..count {
                let mut front_image = vec![0u8; image_bytes];
                r.read_exact(&mut front_image)?;
                let mut hand_image = vec![0u8; image_bytes];
                r.read_exact(&mut hand_image)?;
                let mut proprio = [0.0f32; 8];
                for v in &mut proprio {
                    *v = r.read_f32::<LittleEndian>()?;
                }
                let psi = r.read_u8()?;
                let phase_id = r.read_u8()?;
                let latent = r.read_u8()?;
                let mut ee_pose = [0.0f32; 8];
                for v in &mut ee_pose {
                    *v = r.read_f32::<LittleEndian>()?;
                }
                frames.push(Frame {
                    front_image,
                    hand_image,
                    proprio,
                    psi,
                    phase_id,
                    latent,
                    ee_pose,
                });
            }
            episodes.push(Episode { frames });
        }
        // Trailing bytes indicate a writer/reader mismatch.
        let pos = r.stream_position()?;
        let end = r.seek(SeekFrom::End(0))?;
        if pos != end {
            return Err(EngramError::DatasetFormat(format!("{} trailing bytes", end - pos)));
        }
        Ok(Dataset {
            task,
            image_size,
            calibration: Calibration { front, hand },
            workspace: WorkspaceBox { min: [ws[0], ws[1], ws[2]], max: [ws[3], ws[4], ws[5]] },
            episodes,
        })
    }
}
