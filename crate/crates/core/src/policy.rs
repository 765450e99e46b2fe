//! Conditional rectified-flow trajectory policy: interpolant construction,
//! the AdaLN transformer velocity network conditioned on a single projected
//! memory token, the masked flow loss, and fixed-step Euler sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};
use crate::config::RunConfig;
use crate::error::{EngramError, Result};
use crate::nn::{
    add_attention_params, add_linear_params, linear, multihead_attention, Bound, Init, ParamStore,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Raw pose width: position 3 + orientation quaternion 4 + gripper 1.
pub const D_RAW: usize = 8;

/// One rectified-flow training sample: `x_tau = (1-tau) x0 + tau x1`,
/// `u = x1 - x0`.
#[derive(Debug, Clone)]
pub struct FlowSample<S> {
    pub x0: Tensor<S>,
    pub x1: Tensor<S>,
    pub tau: f64,
    pub x_tau: Tensor<S>,
    pub velocity: Tensor<S>,
}

pub fn make_flow_sample<S: Scalar, R: Rng>(x1: &Tensor<S>, rng: &mut R) -> FlowSample<S> {
    let tau: f64 = rng.gen_range(0.0..1.0);
    let x0 = Tensor::randn(x1.rows, x1.cols, 1.0, rng);
    flow_sample_at(x1, x0, tau)
}

pub fn flow_sample_at<S: Scalar>(x1: &Tensor<S>, x0: Tensor<S>, tau: f64) -> FlowSample<S> {
    let t = S::from_f64(tau);
    let x_tau = x0.zip(x1, |a, b| (S::one() - t) * a + t * b);
    let velocity = x1.zip(&x0, |b, a| b - a);
    FlowSample { x0, x1: x1.clone(), tau, x_tau, velocity }
}

/// Sinusoidal embedding of the flow time, `[1, width]` (half sin, half cos,
/// geometric frequencies). Constant with respect to parameters.
pub fn time_features<S: Scalar>(tau: f64, width: usize) -> Tensor<S> {
    let half = width / 2;
    let mut out = Tensor::zeros(1, width);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        out.data[i] = S::from_f64((tau * freq).sin());
        out.data[half + i] = S::from_f64((tau * freq).cos());
    }
    out
}

pub fn add_policy_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    cfg: &RunConfig,
) {
    let d = cfg.policy_width;
    store.add("policy.ctx.w", cfg.working_width, d, Init::Xavier, rng);
    add_linear_params(store, rng, "policy.embed", D_RAW, d, Init::Xavier);
    store.add("policy.pos", cfg.horizon, d, Init::Gauss(0.02), rng);
    add_linear_params(store, rng, "policy.time.fc1", d, d, Init::Xavier);
    add_linear_params(store, rng, "policy.time.fc2", d, d, Init::Xavier);
    for l in 0..cfg.policy_depth {
        let pre = format!("policy.block{l}");
        // 3 branches x (shift, scale, gate); zero-init so every residual
        // branch is gated off at step 0.
        add_linear_params(store, rng, &format!("{pre}.adaln"), d, 9 * d, Init::Zeros);
        add_attention_params(store, rng, &format!("{pre}.self"), d, Init::Xavier);
        add_attention_params(store, rng, &format!("{pre}.cross"), d, Init::Xavier);
        add_linear_params(store, rng, &format!("{pre}.ff1"), d, 4 * d, Init::Xavier);
        add_linear_params(store, rng, &format!("{pre}.ff2"), 4 * d, d, Init::Xavier);
    }
    add_linear_params(store, rng, "policy.final.adaln", d, 2 * d, Init::Zeros);
    add_linear_params(store, rng, "policy.out", d, D_RAW, Init::Zeros);
}

/// Project the decision state to the single conditioning token
/// `c_t = W_ctx h_t`. The only memory-derived input to the velocity network.
pub fn conditioning_token<S: Scalar>(g: &mut Graph<S>, p: &Bound, h_t: NodeId) -> NodeId {
    let w = p.get("policy.ctx.w");
    g.matmul(h_t, w)
}

/// AdaLN modulation: `LN(x) * (1 + scale) + shift`.
fn modulated_ln<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    shift: NodeId,
    scale: NodeId,
) -> NodeId {
    let normed = g.layer_norm(x);
    let gain = g.add_scalar(scale, S::one());
    let scaled = g.mul_row_vec(normed, gain);
    g.add_row_vec(scaled, shift)
}

/// Velocity network: trajectory tokens with learned positions, sinusoidal
/// time embedding through a two-layer MLP, transformer blocks with
/// self-attention, cross-attention to the single conditioning token, and a
/// feed-forward sublayer, all modulated by zero-initialized AdaLN driven by
/// the time embedding.
pub fn velocity_net<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    x_tau: NodeId,
    tau: f64,
    c_t: NodeId,
) -> NodeId {
    let d = cfg.policy_width;
    let te = g.constant(time_features(tau, d));
    let e = linear(g, p, "policy.time.fc1", te);
    let e = g.silu(e);
    let e_tau = linear(g, p, "policy.time.fc2", e);

    let mut tokens = linear(g, p, "policy.embed", x_tau);
    let pos = p.get("policy.pos");
    tokens = g.add(tokens, pos);

    for l in 0..cfg.policy_depth {
        let pre = format!("policy.block{l}");
        let mods = linear(g, p, &format!("{pre}.adaln"), e_tau);
        let part = |g: &mut Graph<S>, i: usize| g.slice_cols(mods, i * d, d);
        let (sh1, sc1, g1) = (part(g, 0), part(g, 1), part(g, 2));
        let (sh2, sc2, g2) = (part(g, 3), part(g, 4), part(g, 5));
        let (sh3, sc3, g3) = (part(g, 6), part(g, 7), part(g, 8));

        let xa = modulated_ln(g, tokens, sh1, sc1);
        let sa = multihead_attention(g, p, &format!("{pre}.self"), xa, xa, xa, cfg.policy_heads, None);
        let gated = g.mul_row_vec(sa.out, g1);
        tokens = g.add(tokens, gated);

        let xc = modulated_ln(g, tokens, sh2, sc2);
        let ca =
            multihead_attention(g, p, &format!("{pre}.cross"), xc, c_t, c_t, cfg.policy_heads, None);
        let gated = g.mul_row_vec(ca.out, g2);
        tokens = g.add(tokens, gated);

        let xf = modulated_ln(g, tokens, sh3, sc3);
        let ff = linear(g, p, &format!("{pre}.ff1"), xf);
        let ff = g.silu(ff);
        let ff = linear(g, p, &format!("{pre}.ff2"), ff);
        let gated = g.mul_row_vec(ff, g3);
        tokens = g.add(tokens, gated);
    }

    let mods = linear(g, p, "policy.final.adaln", e_tau);
    let shift = g.slice_cols(mods, 0, d);
    let scale = g.slice_cols(mods, d, d);
    let out = modulated_ln(g, tokens, shift, scale);
    linear(g, p, "policy.out", out)
}

/// Mean squared error over mask-valid trajectory steps (all `d_raw` entries
/// of a valid step count); an empty mask yields zero.
pub fn flow_loss<S: Scalar>(
    g: &mut Graph<S>,
    predicted: NodeId,
    target: NodeId,
    mask: &[bool],
) -> NodeId {
    let h = g.rows(predicted);
    let d = g.cols(predicted);
    assert_eq!(mask.len(), h, "mask length must equal the horizon");
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return g.constant(Tensor::scalar(S::zero()));
    }
    let mask_col = Tensor::new(
        h,
        1,
        mask.iter().map(|&m| if m { S::one() } else { S::zero() }).collect(),
    );
    let mask_node = g.constant(mask_col);
    let diff = g.sub(predicted, target);
    let sq = g.mul(diff, diff);
    let masked = g.mul_col_vec(sq, mask_node);
    let total = g.sum(masked);
    g.scale(total, S::from_f64(1.0 / (valid * d) as f64))
}

/// Fixed-step explicit Euler integration of `dx/dtau = v(x, tau, c)` from a
/// seeded Gaussian draw. The network runs frozen (no gradients).
pub fn sample<S: Scalar, R: Rng>(
    store: &ParamStore<S>,
    cfg: &RunConfig,
    h_t: &Tensor<S>,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor<S>> {
    assert!(steps >= 1);
    let x0 = Tensor::randn(cfg.horizon, D_RAW, 1.0, rng);
    sample_from(store, cfg, h_t, steps, x0)
}

pub fn sample_from<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &RunConfig,
    h_t: &Tensor<S>,
    steps: usize,
    x0: Tensor<S>,
) -> Result<Tensor<S>> {
    let dt = S::from_f64(1.0 / steps as f64);
    let mut x = x0;
    for k in 0..steps {
        let tau = k as f64 / steps as f64;
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let h_node = g.constant(h_t.clone());
        let c_t = conditioning_token(&mut g, &bound, h_node);
        let x_node = g.constant(x.clone());
        let v = velocity_net(&mut g, &bound, cfg, x_node, tau, c_t);
        let v = g.value(v);
        for (xi, vi) in x.data.iter_mut().zip(&v.data) {
            *xi = *xi + dt * *vi;
        }
        if !x.data.iter().all(|v| v.is_finite()) {
            return Err(EngramError::SamplingDiverged { flow_time: tau });
        }
    }
    Ok(x)
}

/// Draw a standard normal trajectory seed.
pub fn noise_draw<S: Scalar, R: Rng>(cfg: &RunConfig, rng: &mut R) -> Tensor<S> {
    let mut t = Tensor::zeros(cfg.horizon, D_RAW);
    for v in &mut t.data {
        let z: f64 = rng.sample(StandardNormal);
        *v = S::from_f64(z);
    }
    t
}
