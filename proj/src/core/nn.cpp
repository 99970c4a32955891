#include "nn.h"

#include <cmath>

namespace mef {

AttentionMask full_attention_mask(int tq, int tk) {
    AttentionMask m;
    m.tq = tq;
    m.tk = tk;
    m.allowed.assign(static_cast<size_t>(tq) * tk, 1);
    return m;
}

AttentionMask causal_self_attention_mask(int t) {
    if (t < 1) throw_config("causal mask: sequence length must be >= 1");
    AttentionMask m;
    m.tq = t;
    m.tk = t;
    m.allowed.assign(static_cast<size_t>(t) * t, 0);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j <= i; ++j)
            m.allowed[static_cast<size_t>(i) * t + j] = 1;
    return m;
}

Tensor apply_linear(const Tensor& x, const LinearRef& lin) {
    Tensor y = add_row(matmul(x, lin.w), lin.b);
    if (lin.has_lora) {
        Tensor delta = matmul(matmul(x, lin.lora_a), lin.lora_b);
        y = add(y, scale(delta, lin.lora_scale));
    }
    return y;
}

AttentionOut multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                                  const AttnParams& p, const AttentionConfig& cfg,
                                  const AttentionMask* mask, bool record_weights) {
    cfg.validate();
    const int tq = q_in.dim(0);
    const int tk = kv_in.dim(0);
    if (mask && (mask->tq != tq || mask->tk != tk))
        throw_numeric("attention mask is " + std::to_string(mask->tq) + "x" +
                      std::to_string(mask->tk) + " but inputs are " + std::to_string(tq) +
                      "x" + std::to_string(tk));
    const int hd = cfg.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor q = apply_linear(q_in, p.q);
    Tensor k = apply_linear(kv_in, p.k);
    Tensor v = apply_linear(kv_in, p.v);

    AttentionOut result;
    if (record_weights) {
        result.weights = AttnWeights{cfg.heads, tq, tk, {}};
        result.weights->w.reserve(static_cast<size_t>(cfg.heads) * tq * tk);
    }

    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
        Tensor logits = scale(matmul_nt(qh, kh), inv_sqrt_hd);
        Tensor weights = mask ? softmax_rows_masked(logits, mask->allowed)
                              : softmax_rows(logits);
        if (result.weights) {
            const auto& wv = weights.values();
            result.weights->w.insert(result.weights->w.end(), wv.begin(), wv.end());
        }
        ctx.push_back(matmul(weights, vh));
    }
    Tensor merged = cfg.heads == 1 ? ctx[0] : concat_cols(ctx);
    result.out = apply_linear(merged, p.o);
    return result;
}

static Tensor apply_layer_norm(const Tensor& x, const LayerNormRef& ln) {
    return layer_norm(x, ln.gamma, ln.beta, kLayerNormEps);
}

static Tensor apply_ffn(const Tensor& x, const FfnParams& f) {
    return apply_linear(gelu(apply_linear(x, f.w1)), f.w2);
}

TransformerLayerOut transformer_layer(const Tensor& x, const Tensor* kv,
                                      const TransformerLayerParams& p,
                                      const AttentionConfig& cfg,
                                      const AttentionMask* self_mask,
                                      const AttentionMask* cross_mask,
                                      int cross_rows, bool record_cross) {
    TransformerLayerOut out;
    Tensor normed = apply_layer_norm(x, p.ln1);
    Tensor h = add(x, multi_head_attention(normed, normed, p.self_attn, cfg, self_mask, false).out);
    if (kv && p.has_cross) {
        if (cross_rows >= 0 && cross_rows < h.dim(0)) {
            Tensor head_rows = slice_rows(h, 0, cross_rows);
            AttentionOut att = multi_head_attention(apply_layer_norm(head_rows, p.lnc), *kv,
                                                    p.cross_attn, cfg, cross_mask, record_cross);
            Tensor updated = add(head_rows, att.out);
            Tensor rest = slice_rows(h, cross_rows, h.dim(0));
            h = concat_rows({updated, rest});
            out.cross_weights = std::move(att.weights);
        } else {
            AttentionOut att = multi_head_attention(apply_layer_norm(h, p.lnc), *kv, p.cross_attn,
                                                    cfg, cross_mask, record_cross);
            h = add(h, att.out);
            out.cross_weights = std::move(att.weights);
        }
    }
    out.out = add(h, apply_ffn(apply_layer_norm(h, p.ln2), p.ffn));
    return out;
}

// ---- registration / binding ----

void register_linear(ParamStore& store, const std::string& prefix, int d_in, int d_out,
                     RngState& rng) {
    store.add_randn(prefix + ".w", {d_in, d_out}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    store.add_zeros(prefix + ".b", {d_out});
}

void register_layer_norm(ParamStore& store, const std::string& prefix, int d) {
    store.add_full(prefix + ".gamma", {d}, 1.0);
    store.add_zeros(prefix + ".beta", {d});
}

void register_attention(ParamStore& store, const std::string& prefix, int d_q, int d_kv, int d_h,
                        RngState& rng) {
    register_linear(store, prefix + ".q", d_q, d_h, rng);
    register_linear(store, prefix + ".k", d_kv, d_h, rng);
    register_linear(store, prefix + ".v", d_kv, d_h, rng);
    register_linear(store, prefix + ".o", d_h, d_h, rng);
}

void register_transformer_layer(ParamStore& store, const std::string& prefix, int d_h, int d_ff,
                                int d_kv_cross, RngState& rng) {
    register_layer_norm(store, prefix + ".ln1", d_h);
    register_attention(store, prefix + ".self", d_h, d_h, d_h, rng);
    if (d_kv_cross >= 0) {
        register_layer_norm(store, prefix + ".lnc", d_h);
        register_attention(store, prefix + ".cross", d_h, d_kv_cross, d_h, rng);
    }
    register_layer_norm(store, prefix + ".ln2", d_h);
    register_linear(store, prefix + ".ffn.w1", d_h, d_ff, rng);
    register_linear(store, prefix + ".ffn.w2", d_ff, d_h, rng);
}

LinearRef bind_linear(Binding& bind, const std::string& prefix) {
    LinearRef lin;
    lin.w = bind(prefix + ".w");
    lin.b = bind(prefix + ".b");
    return lin;
}

LayerNormRef bind_layer_norm(Binding& bind, const std::string& prefix) {
    return LayerNormRef{bind(prefix + ".gamma"), bind(prefix + ".beta")};
}

AttnParams bind_attention(Binding& bind, const std::string& prefix) {
    AttnParams p;
    p.q = bind_linear(bind, prefix + ".q");
    p.k = bind_linear(bind, prefix + ".k");
    p.v = bind_linear(bind, prefix + ".v");
    p.o = bind_linear(bind, prefix + ".o");
    return p;
}

TransformerLayerParams bind_transformer_layer(Binding& bind, const std::string& prefix,
                                              bool has_cross) {
    TransformerLayerParams p;
    p.ln1 = bind_layer_norm(bind, prefix + ".ln1");
    p.self_attn = bind_attention(bind, prefix + ".self");
    p.has_cross = has_cross;
    if (has_cross) {
        p.lnc = bind_layer_norm(bind, prefix + ".lnc");
        p.cross_attn = bind_attention(bind, prefix + ".cross");
    }
    p.ln2 = bind_layer_norm(bind, prefix + ".ln2");
    p.ffn.w1 = bind_linear(bind, prefix + ".ffn.w1");
    p.ffn.w2 = bind_linear(bind, prefix + ".ffn.w2");
    return p;
}

} // namespace mef
