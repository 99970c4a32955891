#pragma once

#include <optional>
#include <string>
#include <vector>

#include "param_store.h"
#include "tensor.h"

namespace mef {

struct AttentionConfig {
    int d_h = 64;
    int heads = 4;

    int head_dim() const { return d_h / heads; }
    void validate() const {
        if (d_h <= 0 || heads <= 0 || d_h % heads != 0)
            throw_config("attention config: d_h (" + std::to_string(d_h) +
                         ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
    }
};

// Boolean [query x key] mask; disallowed entries get exactly zero attention.
struct AttentionMask {
    int tq = 0;
    int tk = 0;
    std::vector<uint8_t> allowed; // row-major tq x tk

    bool at(int q, int k) const { return allowed[static_cast<size_t>(q) * tk + k] != 0; }
};

AttentionMask full_attention_mask(int tq, int tk);
AttentionMask causal_self_attention_mask(int t);

// Detached per-layer attention weights, [heads][tq][tk] flattened.
struct AttnWeights {
    int heads = 0;
    int tq = 0;
    int tk = 0;
    std::vector<double> w;

    double at(int h, int q, int k) const {
        return w[(static_cast<size_t>(h) * tq + q) * tk + k];
    }
};

// Linear map with optional low-rank additive adaptation:
//   y = x*W + b (+ scale * (x*A)*B)
struct LinearRef {
    Tensor w;
    Tensor b;
    bool has_lora = false;
    Tensor lora_a;
    Tensor lora_b;
    double lora_scale = 0.0;
};

Tensor apply_linear(const Tensor& x, const LinearRef& lin);

struct AttnParams {
    LinearRef q, k, v, o;
};

struct AttentionOut {
    Tensor out;
    std::optional<AttnWeights> weights;
};

// Scaled dot-product multi-head attention. q_in is [Tq x d_h]; kv_in may have
// a different feature width. Masked keys receive exactly zero weight; a
// fully-masked query row raises a numeric error.
AttentionOut multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                                  const AttnParams& p, const AttentionConfig& cfg,
                                  const AttentionMask* mask, bool record_weights);

struct LayerNormRef {
    Tensor gamma;
    Tensor beta;
};

struct FfnParams {
    LinearRef w1;
    LinearRef w2;
};

struct TransformerLayerParams {
    LayerNormRef ln1;
    AttnParams self_attn;
    bool has_cross = false;
    LayerNormRef lnc;
    AttnParams cross_attn;
    LayerNormRef ln2;
    FfnParams ffn;
};

struct TransformerLayerOut {
    Tensor out;
    std::optional<AttnWeights> cross_weights;
};

// Pre-norm residual block: self-attention, optional cross-attention, FFN.
// When cross_rows >= 0 only the first cross_rows positions cross-attend; the
// rest pass through the sublayer untouched.
TransformerLayerOut transformer_layer(const Tensor& x, const Tensor* kv,
                                      const TransformerLayerParams& p,
                                      const AttentionConfig& cfg,
                                      const AttentionMask* self_mask,
                                      const AttentionMask* cross_mask,
                                      int cross_rows, bool record_cross);

// ---- parameter registration / binding ----

constexpr double kLayerNormEps = 1e-5;

void register_linear(ParamStore& store, const std::string& prefix, int d_in, int d_out,
                     RngState& rng);
void register_layer_norm(ParamStore& store, const std::string& prefix, int d);
void register_attention(ParamStore& store, const std::string& prefix, int d_q, int d_kv, int d_h,
                        RngState& rng);
void register_transformer_layer(ParamStore& store, const std::string& prefix, int d_h, int d_ff,
                                int d_kv_cross, RngState& rng); // d_kv_cross < 0: no cross block

LinearRef bind_linear(Binding& bind, const std::string& prefix);
LayerNormRef bind_layer_norm(Binding& bind, const std::string& prefix);
AttnParams bind_attention(Binding& bind, const std::string& prefix);
TransformerLayerParams bind_transformer_layer(Binding& bind, const std::string& prefix,
                                              bool has_cross);

} // namespace mef
