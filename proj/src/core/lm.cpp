#include "lm.h"

#include <algorithm>
#include <cmath>

#include "synth.h"

namespace mef {

void LMConfig::validate() const {
    if (vocab < 2) throw_config("lm config: vocab must be >= 2");
    if (d_lm < 1 || layers < 1 || max_seq < 2)
        throw_config("lm config: dimensions must be positive");
    AttentionConfig{d_lm, heads}.validate();
}

LMConfig LMConfig::small_tier() {
    LMConfig c;
    c.d_lm = 64;
    c.layers = 2;
    c.heads = 4;
    c.size_tier = "small";
    return c;
}

LMConfig LMConfig::base_tier() {
    LMConfig c;
    c.d_lm = 128;
    c.layers = 4;
    c.heads = 4;
    c.size_tier = "base";
    return c;
}

LMConfig LMConfig::from_tier(const std::string& tier) {
    if (tier == "small") return small_tier();
    if (tier == "base") return base_tier();
    throw_config("lm config: unknown size tier '" + tier + "' (expected small|base)");
}

void register_lm(ParamStore& store, const LMConfig& cfg, RngState& rng) {
    cfg.validate();
    store.add_randn("lm.tok_emb", {cfg.vocab, cfg.d_lm}, rng, 0.02);
    store.add_randn("lm.pos_emb", {cfg.max_seq, cfg.d_lm}, rng, 0.02);
    for (int i = 0; i < cfg.layers; ++i)
        register_transformer_layer(store, "lm.layers." + std::to_string(i), cfg.d_lm,
                                   2 * cfg.d_lm, /*d_kv_cross=*/-1, rng);
    register_layer_norm(store, "lm.ln_f", cfg.d_lm);
    register_linear(store, "lm.head", cfg.d_lm, cfg.vocab, rng);
}

void lora_wrap(ParamStore& store, const LMConfig& cfg, const LoraConfig& lora, RngState& rng) {
    if (lora.rank < 1) throw_config("lora: rank must be >= 1");
    if (lora.rank > cfg.d_lm)
        throw_config("lora: rank " + std::to_string(lora.rank) + " exceeds matrix dimension " +
                     std::to_string(cfg.d_lm));
    if (lora.targets.empty()) throw_config("lora: target list must be nonempty");
    for (const std::string& t : lora.targets)
        if (t != "q" && t != "k" && t != "v" && t != "o")
            throw_config("lora: unknown target '" + t + "' (expected q|k|v|o)");
    for (int i = 0; i < cfg.layers; ++i) {
        for (const std::string& t : lora.targets) {
            const std::string prefix = "lora.layers." + std::to_string(i) + "." + t;
            store.add_randn(prefix + ".a", {cfg.d_lm, lora.rank}, rng,
                            1.0 / std::sqrt(static_cast<double>(cfg.d_lm)));
            store.add_zeros(prefix + ".b", {lora.rank, cfg.d_lm});
        }
    }
}

void freeze_lm(ParamStore& store) { store.set_trainable("lm.", false); }
void unfreeze_lm(ParamStore& store) { store.set_trainable("lm.", true); }

static void attach_lora(Binding& bind, AttnParams& attn, int layer, const LoraConfig& lora) {
    auto wire = [&](LinearRef& lin, const std::string& t) {
        if (std::find(lora.targets.begin(), lora.targets.end(), t) == lora.targets.end()) return;
        const std::string prefix = "lora.layers." + std::to_string(layer) + "." + t;
        lin.has_lora = true;
        lin.lora_a = bind(prefix + ".a");
        lin.lora_b = bind(prefix + ".b");
        lin.lora_scale = lora.scale();
    };
    wire(attn.q, "q");
    wire(attn.k, "k");
    wire(attn.v, "v");
    wire(attn.o, "o");
}

// Shared trunk: returns final hidden states over the whole sequence.
static Tensor lm_trunk(Binding& bind, const LMConfig& cfg, const Tensor* soft_prompt,
                       const std::vector<int>& token_ids, const LoraConfig* lora) {
    const int q = soft_prompt ? soft_prompt->dim(0) : 0;
    const int t = static_cast<int>(token_ids.size());
    if (t < 1) throw_data("lm_forward: empty token sequence");
    const int total = q + t;
    if (total > cfg.max_seq)
        throw_data("lm_forward: sequence of " + std::to_string(total) + " positions (" +
                   std::to_string(q) + " soft + " + std::to_string(t) +
                   " text) exceeds max sequence length " + std::to_string(cfg.max_seq));

    Tensor tok = embedding_rows(bind("lm.tok_emb"), token_ids);
    Tensor pos = slice_rows(bind("lm.pos_emb"), 0, t);
    Tensor text = add(tok, pos);
    Tensor x = soft_prompt ? concat_rows({*soft_prompt, text}) : text;

    AttentionConfig attn_cfg{cfg.d_lm, cfg.heads};
    AttentionMask causal = causal_self_attention_mask(total);
    for (int i = 0; i < cfg.layers; ++i) {
        TransformerLayerParams p =
            bind_transformer_layer(bind, "lm.layers." + std::to_string(i), /*has_cross=*/false);
        if (lora) attach_lora(bind, p.self_attn, i, *lora);
        x = transformer_layer(x, nullptr, p, attn_cfg, &causal, nullptr, -1, false).out;
    }
    return layer_norm(x, bind("lm.ln_f.gamma"), bind("lm.ln_f.beta"), kLayerNormEps);
}

LmOut lm_forward(Binding& bind, const LMConfig& cfg, const Tensor* soft_prompt,
                 const std::vector<int>& token_ids, const std::vector<uint8_t>& loss_mask,
                 const LoraConfig* lora) {
    cfg.validate();
    const int q = soft_prompt ? soft_prompt->dim(0) : 0;
    const int t = static_cast<int>(token_ids.size());
    if (static_cast<int>(loss_mask.size()) != t)
        throw_data("lm_forward: loss mask length does not match tokens");

    // Token i is predicted from hidden state q+i-1; with no soft prompt the
    // first token has no predictor and must not be scored.
    const int first_scored = (q >= 1) ? 0 : 1;
    if (first_scored == 1 && t >= 1 && loss_mask[0])
        throw_data("lm_forward: position 0 cannot be scored without a soft prompt");

    Tensor h = lm_trunk(bind, cfg, soft_prompt, token_ids, lora);
    const int row0 = q + first_scored - 1;
    Tensor h_pred = slice_rows(h, row0, q + t - 1);
    Tensor logits = apply_linear(h_pred, bind_linear(bind, "lm.head"));

    std::vector<int> targets(token_ids.begin() + first_scored, token_ids.end());
    std::vector<uint8_t> mask(loss_mask.begin() + first_scored, loss_mask.end());

    LmOut out;
    out.logits = logits;
    out.first_scored = first_scored;
    out.loss = cross_entropy(logits, targets, mask);
    return out;
}

std::vector<double> lm_next_logits(const ParamStore& store, const LMConfig& cfg,
                                   const std::vector<double>* soft_prompt, int soft_rows,
                                   const std::vector<int>& token_ids, const LoraConfig* lora) {
    Tape tape;
    Binding bind(tape, store, /*with_grad=*/false);
    Tensor soft;
    if (soft_prompt) {
        soft = tape.constant({soft_rows, cfg.d_lm}, *soft_prompt);
    }
    Tensor h = lm_trunk(bind, cfg, soft_prompt ? &soft : nullptr, token_ids, lora);
    Tensor last = slice_rows(h, h.dim(0) - 1, h.dim(0));
    Tensor logits = apply_linear(last, bind_linear(bind, "lm.head"));
    return logits.values();
}

std::vector<int> greedy_decode(const ParamStore& store, const LMConfig& cfg,
                               const std::vector<double>* soft_prompt, int soft_rows,
                               std::vector<int> prompt_ids, int max_len,
                               const LoraConfig* lora) {
    if (max_len < 1) throw_data("greedy_decode: max_len must be >= 1");
    std::vector<int> generated;
    for (int step = 0; step < max_len; ++step) {
        std::vector<double> logits =
            lm_next_logits(store, cfg, soft_prompt, soft_rows, prompt_ids, lora);
        int best = 0;
        for (int j = 1; j < static_cast<int>(logits.size()); ++j)
            if (logits[static_cast<size_t>(j)] > logits[static_cast<size_t>(best)]) best = j;
        if (best == vocab::EOS) break;
        generated.push_back(best);
        prompt_ids.push_back(best);
    }
    return generated;
}

} // namespace mef
