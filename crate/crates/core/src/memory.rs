//! Hierarchical episodic/working memory stack.
//!
//! Per timestep: multimodal token fusion, per-layer dynamic context
//! modulation, spatial routing into A anchors, temporal expansion into B
//! slots, a fused selective-SSM scan over all AxB slot states, episodic
//! recall, a working-state SSM step, and a task-queried fusion of the layer
//! readouts into the single decision state `h_t`. Only `h_t` leaves this
//! module.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::config::RunConfig;
use crate::error::{EngramError, Result};
use crate::nn::{
    add_layer_norm_params, add_linear_params, add_mlp2_params, layer_norm_affine, linear, mlp2,
    Bound, Init, ParamStore,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverse softplus: `softplus(inv_softplus(y)) == y`.
pub fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Recurrent carry of one memory layer. Slot states are `[A*B, d_state]`
/// (a-major), the working SSM state is `[E, d_state_w]` with
/// `E = expand * d_w`, and `h` is the layer's working output `[1, d_w]`.
pub struct LayerState {
    slots: NodeId,
    work: NodeId,
    h: NodeId,
}

/// Recurrent carry of the whole stack plus the fused readout. The readout is
/// the only value exposed outside this module.
pub struct MemoryState {
    layers: Vec<LayerState>,
    readout: NodeId,
}

impl MemoryState {
    /// The decision state `h_t`.
    pub fn h(&self) -> NodeId {
        self.readout
    }

    /// Zero initial state.
    pub fn initial<S: Scalar>(g: &mut Graph<S>, cfg: &RunConfig) -> MemoryState {
        let layers = (0..cfg.memory_layers)
            .map(|_| LayerState {
                slots: g.constant(Tensor::zeros(cfg.total_slots(), cfg.episodic_state)),
                work: g.constant(Tensor::zeros(cfg.working_channels(), cfg.working_state)),
                h: g.constant(Tensor::zeros(1, cfg.working_width)),
            })
            .collect();
        let readout = g.constant(Tensor::zeros(1, cfg.working_width));
        MemoryState { layers, readout }
    }

    /// Detach into plain tensors (for carrying state across evaluation graphs).
    pub fn detach<S: Scalar>(&self, g: &Graph<S>) -> DetachedMemoryState<S> {
        DetachedMemoryState {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (g.value(l.slots).clone(), g.value(l.work).clone(), g.value(l.h).clone())
                })
                .collect(),
            readout: g.value(self.readout).clone(),
        }
    }
}

/// Host-side copy of the recurrent carry.
#[derive(Debug, Clone)]
pub struct DetachedMemoryState<S> {
    layers: Vec<(Tensor<S>, Tensor<S>, Tensor<S>)>,
    pub readout: Tensor<S>,
}

impl<S: Scalar> DetachedMemoryState<S> {
    pub fn attach(&self, g: &mut Graph<S>) -> MemoryState {
        let layers = self
            .layers
            .iter()
            .map(|(s, w, h)| LayerState {
                slots: g.constant(s.clone()),
                work: g.constant(w.clone()),
                h: g.constant(h.clone()),
            })
            .collect();
        MemoryState { layers, readout: g.constant(self.readout.clone()) }
    }

    pub fn requires_finite(&self) -> Result<()> {
        for (i, (s, w, h)) in self.layers.iter().enumerate() {
            s.requires_finite(&format!("memory layer {i} slot states"))?;
            w.requires_finite(&format!("memory layer {i} working state"))?;
            h.requires_finite(&format!("memory layer {i} output"))?;
        }
        self.readout.requires_finite("memory readout")
    }
}

/// Base step sizes per temporal column: configured priors for the
/// prior-guided columns, 1.0 for the flexible column (its step size comes
/// entirely from the learned softplus term).
pub fn column_base_steps(cfg: &RunConfig) -> Vec<f64> {
    let mut base = cfg.base_priors.clone();
    base.push(1.0);
    base
}

pub fn add_fuse_params<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R, cfg: &RunConfig) {
    let d = cfg.model_width;
    add_linear_params(store, rng, "fuse.proprio", cfg.proprio_dim, d, Init::Xavier);
    store.add("fuse.phase.emb", 2, d, Init::Gauss(0.02), rng);
    // Additive identity tags start at zero.
    for tag in ["vis", "view_f", "view_h", "prop", "phase"] {
        store.add(&format!("fuse.tag.{tag}"), 1, d, Init::Zeros, rng);
    }
    add_layer_norm_params(store, rng, "fuse.ln", d);
}

pub fn add_memory_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    cfg: &RunConfig,
) {
    let d = cfg.model_width;
    let dw = cfg.working_width;
    let ds = cfg.episodic_state;
    let slots = cfg.total_slots();
    let base = column_base_steps(cfg);
    for l in 0..cfg.memory_layers {
        let pre = format!("mem{l}");
        store.add(&format!("{pre}.ctx.w"), dw, d, Init::Xavier, rng);
        add_mlp2_params(store, rng, &format!("{pre}.router"), d, cfg.router_hidden, cfg.spatial_anchors, Init::Xavier);
        // Temporal slot queries and the shared key/value maps.
        store.add(&format!("{pre}.queries"), slots, d, Init::Gauss(0.5), rng);
        store.add(&format!("{pre}.tkey.w"), d, d, Init::Xavier, rng);
        store.add(&format!("{pre}.tval.w"), d, d, Init::Xavier, rng);
        // Selective scan: per-slot parameter projections; shared input/output
        // maps; negative-constrained diagonal state matrix via -exp(a_log).
        for i in 0..slots {
            store.add(&format!("{pre}.slot{i}.proj.w"), d, 2 * ds + 1, Init::Xavier, rng);
            let col = i % cfg.temporal_slots;
            // Step-size bias: prior-guided columns start at multiplier 1.0,
            // the flexible column starts at the configured step size.
            let delta0 = if col + 1 == cfg.temporal_slots {
                inv_softplus(cfg.flexible_init)
            } else {
                debug_assert!((base[col] - cfg.base_priors[col]).abs() < 1e-15);
                inv_softplus(1.0)
            };
            let mut bias = Tensor::zeros(1, 2 * ds + 1);
            bias.data[2 * ds] = S::from_f64(delta0);
            store.insert_tensor(&format!("{pre}.slot{i}.proj.b"), bias);
        }
        store.add(&format!("{pre}.a_log"), slots, ds, Init::Zeros, rng);
        store.add(&format!("{pre}.epi_in.w"), d, ds, Init::Xavier, rng);
        store.add(&format!("{pre}.epi_out.w"), ds, d, Init::Xavier, rng);
        store.add(&format!("{pre}.epi_gate.w"), d, d, Init::Xavier, rng);
        // Per-slot recall projections, stored stacked: block i is W_{a,b}.
        store.add(&format!("{pre}.recall.w"), slots * d, dw, Init::Xavier, rng);
        add_working_ssm_params(store, rng, &format!("{pre}.work"), cfg);
        // Readout, key, and value encoders for hierarchical fusion.
        store.add(&format!("{pre}.readout.w"), dw, dw, Init::Xavier, rng);
        add_layer_norm_params(store, rng, &format!("{pre}.readout.ln"), dw);
        store.add(&format!("{pre}.key.w"), dw, dw, Init::Xavier, rng);
        add_linear_params(store, rng, &format!("{pre}.enc"), dw, dw, Init::Xavier);
    }
    store.add("mem.q_task", 1, dw, Init::Gauss(1.0), rng);
}

/// Parameters of one working-style selective SSM block (also used by the
/// vanilla-SSM ablation).
pub fn add_working_ssm_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    pre: &str,
    cfg: &RunConfig,
) {
    let dw = cfg.working_width;
    let e = cfg.working_channels();
    let dsw = cfg.working_state;
    store.add(&format!("{pre}.in_r.w"), dw, dw, Init::Xavier, rng);
    add_layer_norm_params(store, rng, &format!("{pre}.ln"), dw);
    store.add(&format!("{pre}.wx.w"), dw, e, Init::Xavier, rng);
    store.add(&format!("{pre}.wz.w"), dw, e, Init::Xavier, rng);
    store.add(&format!("{pre}.wdt.w"), dw, e, Init::Xavier, rng);
    store.insert_tensor(
        &format!("{pre}.dt_bias"),
        Tensor::full(1, e, S::from_f64(inv_softplus(0.1))),
    );
    store.add(&format!("{pre}.wb.w"), dw, dsw, Init::Xavier, rng);
    store.add(&format!("{pre}.wc.w"), dw, dsw, Init::Xavier, rng);
    store.add(&format!("{pre}.a_log"), e, dsw, Init::Zeros, rng);
    store.add(&format!("{pre}.skip"), e, 1, Init::Ones, rng);
    add_linear_params(store, rng, &format!("{pre}.out"), e, dw, Init::Xavier);
}

/// Multimodal fusion: tag, append proprio and phase tokens, layer-normalize.
/// Token layout: front vision rows, hand vision rows, proprio, phase.
pub fn fuse_tokens<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    vision: NodeId,
    n_front: usize,
    proprio: NodeId,
    phase: Option<u8>,
) -> Result<NodeId> {
    let n = g.rows(vision);
    let front = g.slice_rows(vision, 0, n_front);
    let hand = g.slice_rows(vision, n_front, n - n_front);
    let tag_vis = p.get("fuse.tag.vis");
    let tag_f = p.get("fuse.tag.view_f");
    let tag_h = p.get("fuse.tag.view_h");
    let front = g.add_row_vec(front, tag_vis);
    let front = g.add_row_vec(front, tag_f);
    let hand = g.add_row_vec(hand, tag_vis);
    let hand = g.add_row_vec(hand, tag_h);
    let prop = linear(g, p, "fuse.proprio", proprio);
    let tag_p = p.get("fuse.tag.prop");
    let prop = g.add_row_vec(prop, tag_p);
    let mut parts = vec![front, hand, prop];
    if let Some(psi) = phase {
        if psi > 1 {
            return Err(EngramError::Config(format!("unknown phase id {psi}")));
        }
        let emb = p.get("fuse.phase.emb");
        let row = g.slice_rows(emb, psi as usize, 1);
        let tag_ph = p.get("fuse.tag.phase");
        let row = g.add_row_vec(row, tag_ph);
        parts.push(row);
    }
    let z = g.concat_rows(&parts);
    Ok(layer_norm_affine(g, p, "fuse.ln", z))
}

/// Broadcast-add the projected working context to every token row.
pub fn modulate_context<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    layer: usize,
    z: NodeId,
    h_prev_layer: NodeId,
) -> NodeId {
    let w = p.get(&format!("mem{layer}.ctx.w"));
    let ctx = g.matmul(h_prev_layer, w);
    g.add_row_vec(z, ctx)
}

/// Softmax routing of vision tokens into A spatial anchors plus the weighted
/// anchor summaries. Returns `(pi, summaries)` with `pi: [N, A]` rows on the
/// simplex and `summaries: [A, d]`.
pub fn spatial_route<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    layer: usize,
    vision: NodeId,
) -> (NodeId, NodeId) {
    let logits = mlp2(g, p, &format!("mem{layer}.router"), vision);
    let pi = g.softmax(logits);
    let pi_t = g.transpose(pi);
    let u = g.matmul(pi_t, vision);
    (pi, u)
}

/// Single-query attention of each slot's learned query over its anchor token
/// set, producing the `[A*B, d]` slot feature matrix (a-major).
pub fn temporal_slots<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    layer: usize,
    summaries: NodeId,
    proprio_token: NodeId,
    phase_token: Option<NodeId>,
) -> NodeId {
    let d = cfg.model_width;
    let scale = S::from_f64(1.0 / (d as f64).sqrt());
    let queries = p.get(&format!("mem{layer}.queries"));
    let wk = p.get(&format!("mem{layer}.tkey.w"));
    let wv = p.get(&format!("mem{layer}.tval.w"));
    let mut rows = Vec::with_capacity(cfg.spatial_anchors);
    for a in 0..cfg.spatial_anchors {
        let u_a = g.slice_rows(summaries, a, 1);
        let mut parts = vec![u_a, proprio_token];
        if let Some(ph) = phase_token {
            parts.push(ph);
        }
        let set = g.concat_rows(&parts);
        let keys = g.matmul(set, wk);
        let vals = g.matmul(set, wv);
        let q_a = g.slice_rows(queries, a * cfg.temporal_slots, cfg.temporal_slots);
        let kt = g.transpose(keys);
        let logits = g.matmul(q_a, kt);
        let logits = g.scale(logits, scale);
        let attn = g.softmax(logits);
        rows.push(g.matmul(attn, vals));
    }
    g.concat_rows(&rows)
}

/// Fused selective scan over all AxB slots in one pass over the flattened
/// slot axis. Per slot: `theta = Proj(f)` yields the content-dependent input
/// factor `b_in`, readout factor `c_out`, and step modifier `delta`; the
/// effective step is `base * softplus(delta)` (base 1.0 for the flexible
/// column); the state update is `m <- exp(delta*A_diag) (.) m_prev +
/// delta*(b_in (.) W_in f)` and the readout `r = (c_out (.) m) W_out`, gated
/// by `silu(W_gate f)`.
///
/// The content factors are diagonal: the full input map is
/// `diag(b_in) @ W_in` and the readout map `W_out @ diag(c_out)`, the usual
/// selective-SSM factorization (a full content-dependent matrix per slot
/// would also fit the contract but is quadratically larger).
pub fn slot_scan<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    layer: usize,
    features: NodeId,
    slots_prev: NodeId,
) -> (NodeId, NodeId) {
    let ds = cfg.episodic_state;
    let slots = cfg.total_slots();
    let pre = format!("mem{layer}");
    // Per-slot parameter projections, stacked back into [slots, 2*ds+1].
    let mut theta_rows = Vec::with_capacity(slots);
    for i in 0..slots {
        let f_i = g.slice_rows(features, i, 1);
        let w = p.get(&format!("{pre}.slot{i}.proj.w"));
        let b = p.get(&format!("{pre}.slot{i}.proj.b"));
        let t = g.matmul(f_i, w);
        theta_rows.push(g.add_row_vec(t, b));
    }
    let theta = g.concat_rows(&theta_rows);
    let b_in = g.slice_cols(theta, 0, ds);
    let c_out = g.slice_cols(theta, ds, ds);
    let delta_raw = g.slice_cols(theta, 2 * ds, 1);
    let delta = g.softplus(delta_raw);
    let base: Vec<S> = (0..slots)
        .map(|i| S::from_f64(column_base_steps(cfg)[i % cfg.temporal_slots]))
        .collect();
    let base = g.constant(Tensor::new(slots, 1, base));
    let delta = g.mul(delta, base);

    let a_log = p.get(&format!("{pre}.a_log"));
    let a_pos = g.exp(a_log);
    let a_diag = g.neg(a_pos);
    let decay_exp = g.mul_col_vec(a_diag, delta);
    let decay = g.exp(decay_exp);
    let carried = g.mul(decay, slots_prev);

    let w_in = p.get(&format!("{pre}.epi_in.w"));
    let inj_dir = g.matmul(features, w_in);
    let inj = g.mul(b_in, inj_dir);
    let inj = g.mul_col_vec(inj, delta);
    let m_new = g.add(carried, inj);

    let w_out = p.get(&format!("{pre}.epi_out.w"));
    let expressed = g.mul(c_out, m_new);
    let r_pre = g.matmul(expressed, w_out);
    let w_gate = p.get(&format!("{pre}.epi_gate.w"));
    let gate_pre = g.matmul(features, w_gate);
    let gate = g.silu(gate_pre);
    let readouts = g.mul(r_pre, gate);
    (m_new, readouts)
}

/// Mean of per-slot projections of the slot readouts:
/// `r_t = (1/AB) sum_{a,b} W_{a,b} r_{a,b}`. The stacked recall matrix holds
/// the per-slot projections as consecutive row blocks, so one matmul over the
/// flattened readouts computes the sum exactly.
pub fn episodic_recall<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    layer: usize,
    readouts: NodeId,
) -> NodeId {
    let slots = cfg.total_slots();
    let flat = g.reshape(readouts, 1, slots * cfg.model_width);
    let w = p.get(&format!("mem{layer}.recall.w"));
    let summed = g.matmul(flat, w);
    g.scale(summed, S::from_f64(1.0 / slots as f64))
}

/// One selective-SSM step of a working-style block on a `[1, d_w]` input.
/// Returns `(new_state, output)`.
pub fn working_ssm_step<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    pre: &str,
    v: NodeId,
    state_prev: NodeId,
) -> (NodeId, NodeId) {
    let x = g.matmul(v, p.get(&format!("{pre}.wx.w")));
    let zg = g.matmul(v, p.get(&format!("{pre}.wz.w")));
    let dt_lin = g.matmul(v, p.get(&format!("{pre}.wdt.w")));
    let dt_lin = g.add_row_vec(dt_lin, p.get(&format!("{pre}.dt_bias")));
    let dt = g.softplus(dt_lin);
    let b = g.matmul(v, p.get(&format!("{pre}.wb.w")));
    let c = g.matmul(v, p.get(&format!("{pre}.wc.w")));

    let dt_col = g.transpose(dt);
    let x_col = g.transpose(x);
    let a_log = p.get(&format!("{pre}.a_log"));
    let a_pos = g.exp(a_log);
    let a_diag = g.neg(a_pos);
    let decay_exp = g.mul_col_vec(a_diag, dt_col);
    let decay = g.exp(decay_exp);
    let carried = g.mul(decay, state_prev);
    let drive = g.mul(dt_col, x_col);
    let inj = g.matmul(drive, b);
    let state = g.add(carried, inj);

    let c_col = g.transpose(c);
    let y = g.matmul(state, c_col);
    let skip = p.get(&format!("{pre}.skip"));
    let skip_term = g.mul(skip, x_col);
    let y = g.add(y, skip_term);
    let z_col = g.transpose(zg);
    let gate = g.silu(z_col);
    let y = g.mul(y, gate);
    let y_row = g.transpose(y);
    let out = linear(g, p, &format!("{pre}.out"), y_row);
    (state, out)
}

/// Working-memory integration: inject the recall vector, normalize, and run
/// one working-SSM step.
pub fn working_update<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    layer: usize,
    h_prev: NodeId,
    recall: NodeId,
    work_prev: NodeId,
) -> (NodeId, NodeId) {
    let pre = format!("mem{layer}.work");
    let inj = g.matmul(recall, p.get(&format!("{pre}.in_r.w")));
    let summed = g.add(h_prev, inj);
    let v = layer_norm_affine(g, p, &format!("{pre}.ln"), summed);
    working_ssm_step(g, p, &pre, v, work_prev)
}

/// Task-queried softmax fusion of the per-layer working readouts.
pub fn hierarchical_readout<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    layer_outputs: &[NodeId],
) -> NodeId {
    let q_task = p.get("mem.q_task");
    let mut logits = Vec::with_capacity(layer_outputs.len());
    let mut values = Vec::with_capacity(layer_outputs.len());
    for (l, &h) in layer_outputs.iter().enumerate() {
        let y = g.matmul(h, p.get(&format!("mem{l}.readout.w")));
        let y = layer_norm_affine(g, p, &format!("mem{l}.readout.ln"), y);
        let key = g.matmul(y, p.get(&format!("mem{l}.key.w")));
        let prod = g.mul(q_task, key);
        logits.push(g.sum(prod));
        values.push(linear(g, p, &format!("mem{l}.enc"), y));
    }
    let logits = g.concat_cols(&logits);
    let alpha = g.softmax(logits);
    let mut h_t = None;
    for (l, &v) in values.iter().enumerate() {
        let a_l = g.slice_cols(alpha, l, 1);
        let term = g.mul_col_vec(v, a_l);
        h_t = Some(match h_t {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    let _ = cfg;
    h_t.expect("at least one layer")
}

/// One full memory step: fused tokens in, new state (with readout) out.
pub fn memory_step<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    z: NodeId,
    n_vision: usize,
    has_phase: bool,
    prev: &MemoryState,
) -> MemoryState {
    let mut ctx = g.constant(Tensor::zeros(1, cfg.working_width));
    let mut layers = Vec::with_capacity(cfg.memory_layers);
    let mut outputs = Vec::with_capacity(cfg.memory_layers);
    for l in 0..cfg.memory_layers {
        let z_mod = modulate_context(g, p, l, z, ctx);
        let vision = g.slice_rows(z_mod, 0, n_vision);
        let prop_tok = g.slice_rows(z_mod, n_vision, 1);
        let phase_tok = has_phase.then(|| g.slice_rows(z_mod, n_vision + 1, 1));
        let (_pi, summaries) = spatial_route(g, p, l, vision);
        let features = temporal_slots(g, p, cfg, l, summaries, prop_tok, phase_tok);
        let (slots, readouts) = slot_scan(g, p, cfg, l, features, prev.layers[l].slots);
        let recall = episodic_recall(g, p, cfg, l, readouts);
        let (work, h) = working_update(g, p, l, prev.layers[l].h, recall, prev.layers[l].work);
        layers.push(LayerState { slots, work, h });
        outputs.push(h);
        ctx = h;
    }
    let readout = hierarchical_readout(g, p, cfg, &outputs);
    MemoryState { layers, readout }
}
