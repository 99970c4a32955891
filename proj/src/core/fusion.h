#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nn.h"
#include "synth.h"

namespace mef {

enum class CrossAttnCadence { every_layer, alternating };

// Every architecture knob of the fusion bridge in one place. Q (the total
// query count) is always queries_per_encoder * K, so capacity scales with the
// number of encoders.
struct FusionConfig {
    int num_encoders = 0;         // K
    std::vector<int> feat_dims;   // d_k per encoder
    std::vector<int> seq_lens;    // L_k per encoder
    int d_proj = 64;              // common width after linear projection
    int queries_per_encoder = 8;
    int d_h = 64;                 // resampler hidden width
    int n_layers = 2;
    int heads = 4;
    int ffn_mult = 2;
    double dropout_p = 0.2;       // per-encoder drop probability during training
    bool per_token_dropout = false;
    CrossAttnCadence cadence = CrossAttnCadence::every_layer;
    bool text_cross_attends = true;
    int lm_proj_layers = 1;       // affine maps from d_h into the LM embedding space
    int d_lm = 64;                // LM embedding width the soft prompt lands in
    int vocab = 48;               // resampler text-embedding vocabulary

    int total_queries() const { return queries_per_encoder * num_encoders; }
    int total_kv_rows() const;
    int ffn_dim() const { return d_h * ffn_mult; }
    bool layer_has_cross(int layer) const {
        return cadence == CrossAttnCadence::every_layer || layer % 2 == 0;
    }
    void validate() const;

    static FusionConfig from_encoders(const std::vector<EncoderSpec>& specs);
};

// Full-scale reference geometry (K=5, Table-1-sized inputs); used only for
// size accounting, never trained here.
FusionConfig paper_reference_fusion_config();

// Total KV elements entering cross-attention divided by resampler output
// elements (Q x d_h), with nothing dropped.
double compression_ratio(const FusionConfig& cfg);

struct Segment {
    std::string id;
    int row0 = 0;
    int row1 = 0;
};

// Sequence-wise concatenation of the projected features of the kept encoders.
// Segment ranges partition the rows exactly in configured encoder order;
// dropped encoders contribute no rows and no segment.
struct ConcatenatedKV {
    Tensor matrix; // [(sum of kept L_k) x d_proj]
    std::vector<Segment> segments;
};

// Whole-encoder Bernoulli dropout, i.i.d. per training example. If every
// encoder would drop, the mask resets to keep all of them so the KV matrix
// can never be empty. Eval phase is the identity. The per-token variant zeros
// individual feature rows instead of dropping encoders.
enum class Phase { train, eval };
FeatureBundle encoder_dropout(FeatureBundle bundle, double p, RngState& rng, Phase phase,
                              bool per_token = false);

ConcatenatedKV project_and_concat(Binding& bind, const std::string& prefix,
                                  const FeatureBundle& bundle, const FusionConfig& cfg);

struct SoftPromptOut {
    Tensor soft_prompt;                    // [Q x d_lm]
    std::vector<AttnWeights> cross_records; // one per cross-attending layer
    std::vector<Segment> segments;          // copied from the KV for attribution
};

// The querying resampler: a fixed set of learnable queries plus embedded text
// tokens self-attend jointly and cross-attend to the concatenated features,
// then the first Q positions are projected into the LM embedding space.
// `kv_col_mask`, when given, disallows the marked KV rows in every
// cross-attention layer (used to verify masking == physical row removal).
SoftPromptOut resampler_forward(Binding& bind, const std::string& prefix,
                                const FusionConfig& cfg, const ConcatenatedKV& kv,
                                const std::vector<int>& text_ids, bool record_attention,
                                const std::vector<uint8_t>* kv_col_mask = nullptr);

void register_resampler(ParamStore& store, const std::string& prefix, const FusionConfig& cfg,
                        const std::vector<EncoderSpec>& specs, RngState& rng);

// Ensemble baseline: one single-encoder resampler per encoder, each seeing
// only its own features, prompts concatenated row-wise and passed through a
// shared linear head. Encoder dropout is never applied in this baseline.
struct EnsembleOut {
    Tensor soft_prompt; // [K*queries_per_encoder x d_lm]
    std::vector<SoftPromptOut> members;
};

EnsembleOut ensemble_forward(Binding& bind, const std::string& prefix,
                             const std::vector<FusionConfig>& member_cfgs,
                             const FeatureBundle& bundle, const std::vector<int>& text_ids,
                             bool record_attention);

void register_ensemble(ParamStore& store, const std::string& prefix,
                       const std::vector<FusionConfig>& member_cfgs,
                       const std::vector<EncoderSpec>& specs, RngState& rng);

// Single-encoder config for encoder k of `cfg` (the K=1 specialization).
FusionConfig single_encoder_config(const FusionConfig& cfg, int k);

// ---- parameter accounting ----

struct ParamCountRow {
    std::string group; // top-level name component
    int64_t total = 0;
    int64_t trainable = 0;
};

struct ParamCountTable {
    std::vector<ParamCountRow> rows;
    int64_t total = 0;
    int64_t trainable = 0;
    double trainable_fraction = 0.0;
};

ParamCountTable count_trainable_params(const ParamStore& store);

} // namespace mef
