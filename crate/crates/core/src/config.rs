//! Run configuration: a flat, human-readable key-value file (TOML syntax).

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{EngramError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMemory,
    MemoryBank,
    VanillaSsm,
    NoDorsal,
    NoHolohead,
}

impl Variant {
    pub fn all() -> [Variant; 6] {
        [
            Variant::Full,
            Variant::NoMemory,
            Variant::MemoryBank,
            Variant::VanillaSsm,
            Variant::NoDorsal,
            Variant::NoHolohead,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMemory => "no_memory",
            Variant::MemoryBank => "memory_bank",
            Variant::VanillaSsm => "vanilla_ssm",
            Variant::NoDorsal => "no_dorsal",
            Variant::NoHolohead => "no_holohead",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Episodic,
    Spatial,
    Sequential,
}

impl TaskFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Episodic => "episodic",
            TaskFamily::Spatial => "spatial",
            TaskFamily::Sequential => "sequential",
        }
    }

    pub fn id(&self) -> u8 {
        match self {
            TaskFamily::Episodic => 0,
            TaskFamily::Spatial => 1,
            TaskFamily::Sequential => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(TaskFamily::Episodic),
            1 => Ok(TaskFamily::Spatial),
            2 => Ok(TaskFamily::Sequential),
            other => Err(EngramError::Config(format!("unknown task id {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "episodic" => Ok(TaskFamily::Episodic),
            "spatial" => Ok(TaskFamily::Spatial),
            "sequential" => Ok(TaskFamily::Sequential),
            other => Err(EngramError::Config(format!("unknown task family '{other}'"))),
        }
    }

    /// Chance-level decision success for the task.
    pub fn decision_chance(&self) -> f64 {
        match self {
            TaskFamily::Episodic | TaskFamily::Spatial => 1.0 / 3.0,
            TaskFamily::Sequential => 1.0 / 27.0,
        }
    }

    /// Chance level for the linear probe on the decision state.
    pub fn probe_chance(&self) -> f64 {
        match self {
            TaskFamily::Episodic | TaskFamily::Spatial => 1.0 / 3.0,
            TaskFamily::Sequential => 1.0 / 9.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model dimensions.
    pub model_width: usize,
    pub code_width: usize,
    pub working_width: usize,
    pub spatial_anchors: usize,
    pub temporal_slots: usize,
    pub memory_layers: usize,
    pub episodic_state: usize,
    pub working_state: usize,
    pub working_expand: usize,
    pub conv_width: usize,
    pub base_priors: Vec<f64>,
    pub flexible_init: f64,
    pub router_hidden: usize,
    pub perception_heads: usize,
    pub policy_depth: usize,
    pub policy_width: usize,
    pub policy_heads: usize,
    pub horizon: usize,
    pub anchor_waypoints: usize,
    pub compass_waypoints: usize,
    pub holo_hidden: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub proprio_dim: usize,

    // Optimizer.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub train_steps: u64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub ema_decay: f64,

    // Sequence training.
    pub chunk_len: usize,
    pub chunk_stride: usize,
    pub loss_window: usize,

    // Loss weights.
    pub flow_weight: f64,
    pub holo2d_weight: f64,
    pub holo3d_weight: f64,

    // Epipolar bias.
    pub epipolar_epsilon: f64,
    pub epipolar_temperature: f64,

    // Cross-view enhancement: both directions read the pre-update tokens.
    pub cross_view_pre_update: bool,
    // Optional additive fusion of the imagination latent into the policy
    // conditioning token. Off by default.
    pub holo_fusion: bool,

    // Sampling and closed-loop execution.
    pub ode_steps: usize,
    pub replan_interval: usize,
    pub execute_full_horizon: bool,
    pub eval_use_ema: bool,
    pub eval_trials: usize,
    pub eval_max_ticks: usize,

    // Simulator / data generation.
    pub episodes: usize,
    pub record_stride: usize,
    pub swap_min: usize,
    pub swap_max: usize,
    pub swap_duration: usize,

    // Linear probe.
    pub probe_steps: usize,
    pub probe_lr: f64,
    pub probe_episodes: usize,

    pub seed: u64,
    pub variant: Variant,
    pub task: TaskFamily,
}

impl Default for RunConfig {
    /// Desk-scale defaults: everything trains on a CPU in minutes.
    fn default() -> Self {
        RunConfig {
            model_width: 64,
            code_width: 16,
            working_width: 64,
            spatial_anchors: 4,
            temporal_slots: 4,
            memory_layers: 2,
            episodic_state: 16,
            working_state: 8,
            working_expand: 2,
            conv_width: 4,
            base_priors: vec![0.001, 0.005, 0.02],
            flexible_init: 0.01,
            router_hidden: 32,
            perception_heads: 4,
            policy_depth: 3,
            policy_width: 64,
            policy_heads: 4,
            horizon: 8,
            anchor_waypoints: 4,
            compass_waypoints: 4,
            holo_hidden: 128,
            patch_size: 8,
            image_size: 32,
            proprio_dim: 8,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-6,
            warmup_steps: 100,
            train_steps: 2000,
            batch_size: 4,
            grad_clip: 100.0,
            ema_decay: 0.999,
            chunk_len: 64,
            chunk_stride: 1,
            loss_window: 8,
            flow_weight: 1.0,
            holo2d_weight: 0.5,
            holo3d_weight: 0.5,
            epipolar_epsilon: 1e-8,
            epipolar_temperature: 0.05,
            cross_view_pre_update: true,
            holo_fusion: false,
            ode_steps: 50,
            replan_interval: 4,
            execute_full_horizon: false,
            eval_use_ema: true,
            eval_trials: 50,
            eval_max_ticks: 120,
            episodes: 120,
            record_stride: 4,
            swap_min: 1,
            swap_max: 3,
            swap_duration: 28,
            probe_steps: 200,
            probe_lr: 0.05,
            probe_episodes: 80,
            seed: 0,
            variant: Variant::Full,
            task: TaskFamily::Spatial,
        }
    }
}

impl RunConfig {
    /// The configuration reported for the full-scale system. Not intended to
    /// run on a desktop CPU; kept as a named reference point.
    pub fn paper_scale() -> Self {
        RunConfig {
            model_width: 768,
            code_width: 64,
            working_width: 512,
            spatial_anchors: 8,
            temporal_slots: 4,
            memory_layers: 2,
            episodic_state: 128,
            working_state: 32,
            working_expand: 2,
            conv_width: 4,
            perception_heads: 8,
            policy_depth: 6,
            policy_width: 384,
            policy_heads: 8,
            horizon: 8,
            anchor_waypoints: 8,
            compass_waypoints: 8,
            holo_hidden: 512,
            patch_size: 14,
            image_size: 224,
            lr: 1e-4,
            train_steps: 20_000,
            chunk_len: 512,
            chunk_stride: 4,
            loss_window: 16,
            ..Default::default()
        }
    }

    pub fn patches_per_view(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn total_slots(&self) -> usize {
        self.spatial_anchors * self.temporal_slots
    }

    /// Internal channel width of the working SSM (`expand * d_w`).
    pub fn working_channels(&self) -> usize {
        self.working_expand * self.working_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % self.patch_size != 0 {
            return Err(EngramError::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.base_priors.len() + 1 != self.temporal_slots {
            return Err(EngramError::Config(format!(
                "need {} base priors for {} temporal slots (last column is flexible)",
                self.temporal_slots - 1,
                self.temporal_slots
            )));
        }
        if self.chunk_len < self.loss_window {
            return Err(EngramError::Config("chunk_len must be >= loss_window".into()));
        }
        if self.model_width % self.perception_heads != 0
            || self.policy_width % self.policy_heads != 0
        {
            return Err(EngramError::Config("width must divide into heads".into()));
        }
        let ok = [
            self.model_width,
            self.working_width,
            self.spatial_anchors,
            self.temporal_slots,
            self.memory_layers,
            self.episodic_state,
            self.working_state,
            self.horizon,
            self.anchor_waypoints,
            self.compass_waypoints,
        ]
        .iter()
        .all(|&v| v > 0);
        if !ok {
            return Err(EngramError::Config("all model extents must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| EngramError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
