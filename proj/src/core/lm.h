#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nn.h"
#include "param_store.h"

namespace mef {

// Two fixed capacity tiers stand in for the large/small language-model
// comparison; the tier in use is recorded in every report.
struct LMConfig {
    int vocab = 48;
    int d_lm = 64;
    int layers = 2;
    int heads = 4;
    int max_seq = 64;
    std::string size_tier = "small";

    void validate() const;
    static LMConfig small_tier();
    static LMConfig base_tier();
    static LMConfig from_tier(const std::string& tier);
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    std::vector<std::string> targets = {"q", "k", "v", "o"}; // attention projections

    double scale() const { return alpha / rank; }
};

void register_lm(ParamStore& store, const LMConfig& cfg, RngState& rng);

// Adds zero-initialised low-rank adapters for the configured attention
// projections. Base LM weights are frozen by the caller; only the adapter
// matrices train. With the up-map at zero the adapted model computes exactly
// the base model's outputs.
void lora_wrap(ParamStore& store, const LMConfig& cfg, const LoraConfig& lora, RngState& rng);

// Trainable-flag helpers; freezing is idempotent.
void freeze_lm(ParamStore& store);
void unfreeze_lm(ParamStore& store);

struct LmOut {
    Tensor loss;       // mean NLL over masked positions
    Tensor logits;     // [P x V]; row i predicts token_ids[first_scored + i]
    int first_scored = 0;
};

// Decoder-only forward over [soft prompt ; embedded text]. The soft prompt
// occupies the first rows as non-token embeddings (no positional term); text
// tokens get positional embeddings indexed from 0 so the text layout matches
// text-only pretraining. The causal mask covers the whole sequence.
LmOut lm_forward(Binding& bind, const LMConfig& cfg, const Tensor* soft_prompt,
                 const std::vector<int>& token_ids, const std::vector<uint8_t>& loss_mask,
                 const LoraConfig* lora = nullptr);

// Next-token logits for the assembled sequence (values only, no loss).
std::vector<double> lm_next_logits(const ParamStore& store, const LMConfig& cfg,
                                   const std::vector<double>* soft_prompt, int soft_rows,
                                   const std::vector<int>& token_ids, const LoraConfig* lora);

// Argmax decoding, ties broken by lowest token id, stops at EOS. Returns the
// generated ids (EOS excluded).
std::vector<int> greedy_decode(const ParamStore& store, const LMConfig& cfg,
                               const std::vector<double>* soft_prompt, int soft_rows,
                               std::vector<int> prompt_ids, int max_len,
                               const LoraConfig* lora = nullptr);

} // namespace mef
