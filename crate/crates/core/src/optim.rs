//! AdamW with decoupled weight decay, EMA shadow weights, gradient clipping,
//! the warmup+cosine schedule, and the finite-difference gradient checker.

use crate::autodiff::{Graph, NodeId};
use crate::error::{EngramError, Result};
use crate::nn::{check_grad_shapes, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, weight_decay: 1e-6 }
    }
}

/// One AdamW step with bias correction and decoupled decay `lr*wd*theta`.
/// `step_index` starts at 1. Moments persist on the parameters.
pub fn optimizer_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &[Tensor<S>],
    cfg: &OptimizerConfig,
    step_index: u64,
) -> Result<()> {
    assert!(step_index >= 1, "step_index starts at 1");
    assert!(cfg.lr > 0.0, "learning rate must be positive");
    check_grad_shapes(store, grads)?;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let lr = S::from_f64(cfg.lr);
    let wd = S::from_f64(cfg.weight_decay);
    let eps = S::from_f64(ADAM_EPS);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(step_index as i32));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(step_index as i32));
    for (p, gr) in store.iter_mut().zip(grads) {
        for i in 0..p.value.data.len() {
            let g = gr.data[i];
            let m = b1 * p.first_moment.data[i] + (S::one() - b1) * g;
            let v = b2 * p.second_moment.data[i] + (S::one() - b2) * g * g;
            p.first_moment.data[i] = m;
            p.second_moment.data[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let theta = p.value.data[i];
            p.value.data[i] = theta - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * theta;
        }
    }
    Ok(())
}

/// `shadow <- decay*shadow + (1-decay)*current`, elementwise.
pub fn ema_update<S: Scalar>(store: &mut ParamStore<S>, decay: f64) {
    assert!((0.0..1.0).contains(&decay), "decay must be in [0,1)");
    let d = S::from_f64(decay);
    let om = S::one() - d;
    for p in store.iter_mut() {
        for i in 0..p.ema.data.len() {
            p.ema.data[i] = d * p.ema.data[i] + om * p.value.data[i];
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in &g.data {
            let x = v.as_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in &mut g.data {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// Linear warmup followed by cosine decay to zero.
pub fn lr_at_step(base_lr: f64, step: u64, warmup: u64, total: u64) -> f64 {
    if total == 0 {
        return base_lr;
    }
    if step < warmup {
        return base_lr * (step + 1) as f64 / warmup.max(1) as f64;
    }
    let span = (total.saturating_sub(warmup)).max(1) as f64;
    let t = (step - warmup) as f64 / span;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Compare reverse-mode gradients against central finite differences
/// `(f(x+eps) - f(x-eps)) / 2eps` for every entry of every parameter, at
/// 64-bit precision. Relative error uses `max(|analytic|, |numeric|, 1e-8)`
/// as the denominator.
pub fn grad_check<F>(store: &ParamStore<f64>, build: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> NodeId,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let eval = |s: &ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        let bound = s.bind(&mut g);
        let loss = build(&mut g, &bound);
        g.value(loss).data[0]
    };

    // Analytic pass.
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let loss = build(&mut g, &bound);
    let base = g.value(loss).data[0];
    if !base.is_finite() {
        return Err(EngramError::GradCheckNonFinite { parameter: "<base evaluation>".into() });
    }
    g.backward(loss);
    let analytic = store.collect_grads(&g, &bound);

    let mut work = store.clone();
    let mut entries = Vec::with_capacity(store.len());
    for (pi, p) in store.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..p.value.data.len() {
            let orig = p.value.data[i];
            work.get_mut(&p.name).value.data[i] = orig + epsilon;
            let f_plus = eval(&work);
            work.get_mut(&p.name).value.data[i] = orig - epsilon;
            let f_minus = eval(&work);
            work.get_mut(&p.name).value.data[i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(EngramError::GradCheckNonFinite { parameter: p.name.clone() });
            }
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[pi].data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        entries.push(GradCheckEntry { name: p.name.clone(), max_rel_err: worst });
    }
    Ok(GradCheckReport { entries })
}
