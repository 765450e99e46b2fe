//! Ventral/dorsal perception: patch appearance tokens, EE-anchored geometry
//! codes and unary biases, geometry-biased bidirectional cross-view attention,
//! FiLM modulation, and the fused evidence output.

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::config::RunConfig;
use crate::nn::{
    add_attention_params, add_linear_params, add_mlp2_params, linear, mlp2, multihead_attention,
    Bound, Init, ParamStore,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-frame perception inputs. Everything here is observation- or
/// calibration-derived, so it enters the graph as constants.
#[derive(Debug, Clone)]
pub struct PerceptionInput<S> {
    /// Non-overlapping patches, row-major grid order: `[N_f, patch_dim]`.
    pub front_patches: Tensor<S>,
    pub hand_patches: Tensor<S>,
    /// Geometric descriptors per patch: `[N_v, 7]`. Empty when the dorsal
    /// pathway is ablated.
    pub front_desc: Tensor<S>,
    pub hand_desc: Tensor<S>,
    /// Epipolar feasibility biases, `[N_f, N_h]` and `[N_h, N_f]`.
    pub bias_front_to_hand: Tensor<S>,
    pub bias_hand_to_front: Tensor<S>,
    /// Normalized proprioception row `[1, proprio_dim]`.
    pub proprio: Tensor<S>,
    /// Observe/act indicator.
    pub phase: u8,
}

/// Fused evidence tokens: front rows first, then hand rows.
pub struct FusedEvidence {
    pub tokens: NodeId,
    pub n_front: usize,
    pub n_hand: usize,
}

pub fn add_perception_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    cfg: &RunConfig,
    dorsal: bool,
) {
    let d = cfg.model_width;
    let n = cfg.patches_per_view();
    let patch_dim = cfg.patch_size * cfg.patch_size * 3;
    add_linear_params(store, rng, "perc.patch", patch_dim, d, Init::Xavier);
    store.add("perc.pos", n, d, Init::Gauss(0.02), rng);
    // Residual cross-view attention; zero-init output projection so the
    // residual is the identity at initialization.
    add_attention_params(store, rng, "perc.cross", d, Init::Zeros);
    if dorsal {
        add_mlp2_params(store, rng, "perc.code", 7, cfg.code_width, cfg.code_width, Init::Xavier);
        add_mlp2_params(store, rng, "perc.bias", 7, cfg.code_width, 1, Init::Zeros);
        // FiLM maps start as the identity modulation: gamma == 1, beta == 0.
        store.add("perc.film.gamma.w", cfg.code_width, d, Init::Zeros, rng);
        store.add("perc.film.gamma.b", 1, d, Init::Ones, rng);
        store.add("perc.film.beta.w", cfg.code_width, d, Init::Zeros, rng);
        store.add("perc.film.beta.b", 1, d, Init::Zeros, rng);
    }
}

/// Patchify encoder: linear embedding plus a learned per-position embedding.
/// Token `i` corresponds to patch-grid cell `i` in row-major order.
pub fn encode_patches<S: Scalar>(g: &mut Graph<S>, p: &Bound, patches: NodeId) -> NodeId {
    let e = linear(g, p, "perc.patch", patches);
    let pos = p.get("perc.pos");
    g.add(e, pos)
}

/// Conditioning codes and unary attention biases from the 7-d descriptors.
pub fn geometry_codes<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    descriptors: NodeId,
) -> (NodeId, NodeId) {
    let codes = mlp2(g, p, "perc.code", descriptors);
    let biases = mlp2(g, p, "perc.bias", descriptors);
    (codes, biases)
}

/// One direction of geometry-biased cross-view attention with residual update.
/// `bias` is the combined `[N_q, N_k]` additive logit bias, shared by heads.
fn enhance_direction<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    queries: NodeId,
    keys: NodeId,
    heads: usize,
    bias: Option<NodeId>,
) -> (NodeId, Vec<NodeId>) {
    let attn = multihead_attention(g, p, "perc.cross", queries, keys, keys, heads, bias);
    (g.add(queries, attn.out), attn.weights)
}

pub struct EnhanceOutput {
    pub front: NodeId,
    pub hand: NodeId,
    pub front_weights: Vec<NodeId>,
    pub hand_weights: Vec<NodeId>,
}

/// Bidirectional enhancement. With `dorsal`, logits receive the analytic
/// epipolar bias plus the unary biases `b_q 1^T + 1 b_k^T`; without it this
/// reduces to plain bidirectional cross-attention.
#[allow(clippy::too_many_arguments)]
pub fn cross_view_enhance<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    v_front: NodeId,
    v_hand: NodeId,
    epi_fh: Option<NodeId>,
    epi_hf: Option<NodeId>,
    unary_front: Option<NodeId>,
    unary_hand: Option<NodeId>,
) -> EnhanceOutput {
    let heads = cfg.perception_heads;
    let combine = |g: &mut Graph<S>, epi: Option<NodeId>, bq: Option<NodeId>, bk: Option<NodeId>| {
        let mut total = epi;
        if let (Some(t), Some(q)) = (total, bq) {
            total = Some(g.add_col_vec(t, q));
        }
        if let (Some(t), Some(k)) = (total, bk) {
            let kt = g.transpose(k);
            total = Some(g.add_row_vec(t, kt));
        }
        total
    };
    let bias_fh = combine(g, epi_fh, unary_front, unary_hand);
    let bias_hf = combine(g, epi_hf, unary_hand, unary_front);
    // Both directions read the pre-update tokens by default; the config flag
    // switches the second direction to the already-enhanced front tokens.
    let (front, front_weights) = enhance_direction(g, p, v_front, v_hand, heads, bias_fh);
    let hand_keys = if cfg.cross_view_pre_update { v_front } else { front };
    let (hand, hand_weights) = enhance_direction(g, p, v_hand, hand_keys, heads, bias_hf);
    EnhanceOutput { front, hand, front_weights, hand_weights }
}

/// FiLM modulation from the conditioning codes, then front-then-hand concat.
pub fn film_fuse<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    v_front: NodeId,
    v_hand: NodeId,
    codes_front: Option<NodeId>,
    codes_hand: Option<NodeId>,
) -> FusedEvidence {
    let n_front = g.rows(v_front);
    let n_hand = g.rows(v_hand);
    let modulate = |g: &mut Graph<S>, v: NodeId, c: Option<NodeId>| match c {
        Some(c) => {
            let gamma_w = p.get("perc.film.gamma.w");
            let gamma_b = p.get("perc.film.gamma.b");
            let beta_w = p.get("perc.film.beta.w");
            let beta_b = p.get("perc.film.beta.b");
            let gamma = g.matmul(c, gamma_w);
            let gamma = g.add_row_vec(gamma, gamma_b);
            let beta = g.matmul(c, beta_w);
            let beta = g.add_row_vec(beta, beta_b);
            let scaled = g.mul(gamma, v);
            g.add(scaled, beta)
        }
        None => v,
    };
    let f = modulate(g, v_front, codes_front);
    let h = modulate(g, v_hand, codes_hand);
    let tokens = g.concat_rows(&[f, h]);
    FusedEvidence { tokens, n_front, n_hand }
}

/// Full perception forward pass. `dorsal == false` drops the epipolar bias,
/// both unary bias terms, and the FiLM codes (ventral path unchanged).
pub fn perceive<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &RunConfig,
    input: &PerceptionInput<S>,
    dorsal: bool,
) -> FusedEvidence {
    let front_patches = g.constant(input.front_patches.clone());
    let hand_patches = g.constant(input.hand_patches.clone());
    let v_front = encode_patches(g, p, front_patches);
    let v_hand = encode_patches(g, p, hand_patches);
    if dorsal {
        let fd = g.constant(input.front_desc.clone());
        let hd = g.constant(input.hand_desc.clone());
        let (codes_f, bias_f) = geometry_codes(g, p, fd);
        let (codes_h, bias_h) = geometry_codes(g, p, hd);
        let epi_fh = g.constant(input.bias_front_to_hand.clone());
        let epi_hf = g.constant(input.bias_hand_to_front.clone());
        let enhanced = cross_view_enhance(
            g,
            p,
            cfg,
            v_front,
            v_hand,
            Some(epi_fh),
            Some(epi_hf),
            Some(bias_f),
            Some(bias_h),
        );
        film_fuse(g, p, enhanced.front, enhanced.hand, Some(codes_f), Some(codes_h))
    } else {
        let enhanced = cross_view_enhance(g, p, cfg, v_front, v_hand, None, None, None, None);
        film_fuse(g, p, enhanced.front, enhanced.hand, None, None)
    }
}

/// Extract non-overlapping patches from an `[H, W, 3]` image stored as a flat
/// row-major `f32` array in `[0,1]`, producing `[N, patch*patch*3]`.
pub fn patchify<S: Scalar>(pixels: &[f32], image_size: usize, patch: usize) -> Tensor<S> {
    assert_eq!(pixels.len(), image_size * image_size * 3);
    let grid = image_size / patch;
    let n = grid * grid;
    let pd = patch * patch * 3;
    let mut out = Tensor::zeros(n, pd);
    for gr in 0..grid {
        for gc in 0..grid {
            let token = gr * grid + gc;
            let mut k = 0;
            for py in 0..patch {
                for px in 0..patch {
                    let y = gr * patch + py;
                    let x = gc * patch + px;
                    let base = (y * image_size + x) * 3;
                    for ch in 0..3 {
                        out.data[token * pd + k] = S::from_f64(pixels[base + ch] as f64);
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            model_width: 8,
            code_width: 4,
            perception_heads: 2,
            image_size: 16,
            patch_size: 8,
            ..Default::default()
        }
    }

    fn store_for(cfg: &RunConfig, dorsal: bool, seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        add_perception_params(&mut store, &mut rng, cfg, dorsal);
        store
    }

    #[test]
    fn patch_count_matches_grid() {
        let cfg = RunConfig { image_size: 32, patch_size: 8, ..Default::default() };
        let img = vec![0.0f32; 32 * 32 * 3];
        let p: Tensor<f64> = patchify(&img, cfg.image_size, cfg.patch_size);
        assert_eq!(p.rows, 16);
        assert_eq!(p.cols, 192);
    }

    #[test]
    fn zero_image_tokens_equal_positional_embeddings() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, false, 3);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let img = vec![0.0f32; cfg.image_size * cfg.image_size * 3];
        let patches = g.constant(patchify::<f64>(&img, cfg.image_size, cfg.patch_size));
        let tokens = encode_patches(&mut g, &b, patches);
        let pos = store.get("perc.pos").value.clone();
        // Bias is zero-initialized, so tokens reduce to the positional part.
        for (t, e) in g.value(tokens).data.iter().zip(&pos.data) {
            assert!((t - e).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_input_patches_permutes_tokens() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, false, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut img: Vec<f32> = (0..cfg.image_size * cfg.image_size * 3)
            .map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0))
            .collect();
        let before = patchify::<f64>(&img, cfg.image_size, cfg.patch_size);
        // Swap the two left patches (patch rows 0 and 2 in the 2x2 grid) by
        // swapping their pixel blocks.
        for py in 0..8 {
            for px in 0..8 {
                for ch in 0..3 {
                    let a = ((py) * 16 + px) * 3 + ch;
                    let bidx = ((8 + py) * 16 + px) * 3 + ch;
                    img.swap(a, bidx);
                }
            }
        }
        let after = patchify::<f64>(&img, cfg.image_size, cfg.patch_size);

        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let p0 = g.constant(before);
        let p1 = g.constant(after);
        let t0 = encode_patches(&mut g, &b, p0);
        let t1 = encode_patches(&mut g, &b, p1);
        let pos = store.get("perc.pos").value.clone();
        let v0 = g.value(t0).clone();
        let v1 = g.value(t1).clone();
        let d = cfg.model_width;
        // Token content (minus the positional part) moved from row 0 to row 2.
        for c in 0..d {
            let content0 = v0.get(0, c) - pos.get(0, c);
            let moved = v1.get(2, c) - pos.get(2, c);
            assert!((content0 - moved).abs() < 1e-9);
        }
    }

    #[test]
    fn unary_bias_minus_30_suppresses_key() {
        // W_Q = W_K = 0 leaves only the unary key bias (0, -30): softmax
        // weights become (1, ~9.4e-14).
        let cfg = tiny_cfg();
        let mut store = store_for(&cfg, false, 7);
        store.get_mut("perc.cross.wq").value = Tensor::zeros(8, 8);
        store.get_mut("perc.cross.wk").value = Tensor::zeros(8, 8);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let q = g.constant(Tensor::randn(1, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let k = g.constant(Tensor::randn(2, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
        let key_bias = g.constant(Tensor::new(2, 1, vec![0.0, -30.0]));
        let zero = g.constant(Tensor::zeros(1, 2));
        let kb = g.transpose(key_bias);
        let bias = g.add_row_vec(zero, kb);
        let out = multihead_attention(&mut g, &b, "perc.cross", q, k, k, 2, Some(bias));
        for w in &out.weights {
            let row = g.value(*w).row_slice(0);
            assert!((row[0] - 1.0).abs() < 1e-12);
            assert!((row[1] - 9.36e-14).abs() < 1e-14, "got {}", row[1]);
        }
    }

    #[test]
    fn residual_is_identity_at_zero_output_projection() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, true, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let vf = g.constant(Tensor::randn(4, 8, 1.0, &mut rng));
        let vh = g.constant(Tensor::randn(4, 8, 1.0, &mut rng));
        let out = cross_view_enhance(&mut g, &b, &cfg, vf, vh, None, None, None, None);
        assert_eq!(g.value(out.front).data, g.value(vf).data);
        assert_eq!(g.value(out.hand).data, g.value(vh).data);
    }

    #[test]
    fn attention_rows_are_stochastic_both_directions() {
        let cfg = tiny_cfg();
        let mut store = store_for(&cfg, false, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Give the output projection weight so the residual actually moves.
        store.get_mut("perc.cross.wo").value = Tensor::randn(8, 8, 0.5, &mut rng);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let vf = g.constant(Tensor::randn(4, 8, 1.0, &mut rng));
        let vh = g.constant(Tensor::randn(3, 8, 1.0, &mut rng));
        let out = cross_view_enhance(&mut g, &b, &cfg, vf, vh, None, None, None, None);
        for w in out.front_weights.iter().chain(&out.hand_weights) {
            let t = g.value(*w);
            for r in 0..t.rows {
                let sum: f64 = t.row_slice(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(t.row_slice(r).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn film_identity_and_saturating_cases() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, true, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let vf = g.constant(Tensor::randn(2, 8, 1.0, &mut rng));
        let vh = g.constant(Tensor::randn(2, 8, 1.0, &mut rng));
        let cf = g.constant(Tensor::randn(2, 4, 1.0, &mut rng));
        let ch = g.constant(Tensor::randn(2, 4, 1.0, &mut rng));
        // gamma == 1, beta == 0 at init: identity modulation.
        let fused = film_fuse(&mut g, &b, vf, vh, Some(cf), Some(ch));
        assert_eq!(g.value(fused.tokens).rows, 4);
        let front_rows = &g.value(fused.tokens).data[..16];
        assert_eq!(front_rows, &g.value(vf).data[..]);

        // gamma == 0: rows equal beta regardless of the tokens.
        let mut store2 = store_for(&cfg, true, 17);
        store2.get_mut("perc.film.gamma.b").value = Tensor::zeros(1, 8);
        store2.get_mut("perc.film.beta.b").value = Tensor::full(1, 8, 0.25);
        let mut g2 = Graph::new();
        let b2 = store2.bind(&mut g2);
        let vf2 = g2.constant(Tensor::randn(2, 8, 1.0, &mut rng));
        let vh2 = g2.constant(Tensor::randn(2, 8, 1.0, &mut rng));
        let cf2 = g2.constant(Tensor::zeros(2, 4));
        let ch2 = g2.constant(Tensor::zeros(2, 4));
        let fused2 = film_fuse(&mut g2, &b2, vf2, vh2, Some(cf2), Some(ch2));
        assert!(g2.value(fused2.tokens).data.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn identical_descriptors_give_identical_codes_and_biases() {
        let cfg = tiny_cfg();
        let store = store_for(&cfg, true, 19);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let desc = Tensor::from_rows(&vec![vec![0.1, 0.2, 0.0, 0.0, 1.0, 0.3, 0.9]; 3]);
        let dnode = g.constant(desc);
        let (codes, biases) = geometry_codes(&mut g, &b, dnode);
        let c = g.value(codes);
        for r in 1..3 {
            assert_eq!(c.row_slice(0), c.row_slice(r));
        }
        let bv = g.value(biases);
        assert_eq!(bv.cols, 1);
        assert!((bv.data[0] - bv.data[1]).abs() < 1e-15);
    }
}
