#include "fusion.h"

#include <cmath>

namespace mef {

int FusionConfig::total_kv_rows() const {
    int n = 0;
    for (int l : seq_lens) n += l;
    return n;
}

void FusionConfig::validate() const {
    if (num_encoders < 1) throw_config("fusion config: K must be >= 1");
    if (static_cast<int>(feat_dims.size()) != num_encoders ||
        static_cast<int>(seq_lens.size()) != num_encoders)
        throw_config("fusion config: feat_dims/seq_lens must have K entries");
    for (int d : feat_dims)
        if (d < 1) throw_config("fusion config: feature dims must be positive");
    for (int l : seq_lens)
        if (l < 1) throw_config("fusion config: sequence lengths must be positive");
    if (d_proj < 1 || d_h < 1 || d_lm < 1 || queries_per_encoder < 1 || n_layers < 1 ||
        ffn_mult < 1)
        throw_config("fusion config: dimensions must be positive");
    if (dropout_p < 0.0 || dropout_p > 1.0)
        throw_config("fusion config: dropout_p must be in [0,1]");
    if (lm_proj_layers != 1 && lm_proj_layers != 2)
        throw_config("fusion config: lm_proj_layers must be 1 or 2");
    AttentionConfig{d_h, heads}.validate();
}

FusionConfig FusionConfig::from_encoders(const std::vector<EncoderSpec>& specs) {
    FusionConfig cfg;
    cfg.num_encoders = static_cast<int>(specs.size());
    for (const EncoderSpec& s : specs) {
        cfg.feat_dims.push_back(s.feat_dim);
        cfg.seq_lens.push_back(s.seq_len);
    }
    return cfg;
}

FusionConfig paper_reference_fusion_config() {
    FusionConfig cfg;
    cfg.num_encoders = 5;
    cfg.seq_lens = {257, 257, 257, 256, 196}; // totals 1223 input tokens
    cfg.feat_dims = {1408, 1024, 1536, 1792, 1024};
    cfg.d_proj = 1408;
    cfg.queries_per_encoder = 32; // 32*5 = 160 queries
    cfg.d_h = 768;
    cfg.n_layers = 12;
    cfg.heads = 12;
    cfg.dropout_p = 0.2;
    return cfg;
}

double compression_ratio(const FusionConfig& cfg) {
    double in_sz = static_cast<double>(cfg.total_kv_rows()) * cfg.d_proj;
    double out_sz = static_cast<double>(cfg.total_queries()) * cfg.d_h;
    return in_sz / out_sz;
}

FeatureBundle encoder_dropout(FeatureBundle bundle, double p, RngState& rng, Phase phase,
                              bool per_token) {
    if (phase == Phase::eval || p <= 0.0) return bundle;
    const size_t k = bundle.features.size();
    if (per_token) {
        // Zero individual feature rows; keep every encoder present.
        bool any_kept = false;
        std::vector<std::vector<int>> dropped_rows(k);
        for (size_t e = 0; e < k; ++e) {
            for (int r = 0; r < bundle.features[e].rows; ++r) {
                if (rng::next_bernoulli(rng, p)) dropped_rows[e].push_back(r);
                else any_kept = true;
            }
        }
        if (!any_kept) return bundle; // fallback: keep everything
        for (size_t e = 0; e < k; ++e) {
            Mat& m = bundle.features[e];
            for (int r : dropped_rows[e])
                for (int c = 0; c < m.cols; ++c)
                    m.v[static_cast<size_t>(r) * m.cols + c] = 0.0;
        }
        return bundle;
    }
    bool all_dropped = true;
    for (size_t e = 0; e < k; ++e) {
        bundle.drop_mask[e] = rng::next_bernoulli(rng, p) ? 1 : 0;
        if (!bundle.drop_mask[e]) all_dropped = false;
    }
    if (all_dropped)
        std::fill(bundle.drop_mask.begin(), bundle.drop_mask.end(), 0); // keep all K
    return bundle;
}

ConcatenatedKV project_and_concat(Binding& bind, const std::string& prefix,
                                  const FeatureBundle& bundle, const FusionConfig& cfg) {
    if (static_cast<int>(bundle.features.size()) != cfg.num_encoders)
        throw_config("project_and_concat: bundle has " + std::to_string(bundle.features.size()) +
                     " encoders but config expects " + std::to_string(cfg.num_encoders));
    ConcatenatedKV kv;
    std::vector<Tensor> parts;
    int row = 0;
    for (int k = 0; k < cfg.num_encoders; ++k) {
        if (bundle.drop_mask[static_cast<size_t>(k)]) continue;
        const Mat& m = bundle.features[static_cast<size_t>(k)];
        if (m.cols != cfg.feat_dims[static_cast<size_t>(k)])
            throw_config("project_and_concat: encoder '" + bundle.encoder_ids[static_cast<size_t>(k)] +
                         "' feature dim " + std::to_string(m.cols) + " does not match config " +
                         std::to_string(cfg.feat_dims[static_cast<size_t>(k)]));
        LinearRef proj = bind_linear(bind, prefix + ".proj." + bundle.encoder_ids[static_cast<size_t>(k)]);
        Tensor raw = bind.tape().constant({m.rows, m.cols}, m.v);
        Tensor projected = apply_linear(raw, proj);
        parts.push_back(projected);
        kv.segments.push_back({bundle.encoder_ids[static_cast<size_t>(k)], row, row + m.rows});
        row += m.rows;
    }
    kv.matrix = parts.size() == 1 ? parts[0] : concat_rows(parts);
    return kv;
}

SoftPromptOut resampler_forward(Binding& bind, const std::string& prefix,
                                const FusionConfig& cfg, const ConcatenatedKV& kv,
                                const std::vector<int>& text_ids, bool record_attention,
                                const std::vector<uint8_t>* kv_col_mask) {
    cfg.validate();
    const int q = cfg.total_queries();
    Tensor queries = bind(prefix + ".queries");
    Tensor x;
    int total_rows = q;
    if (!text_ids.empty()) {
        Tensor text = embedding_rows(bind(prefix + ".text_emb"), text_ids);
        x = concat_rows({queries, text});
        total_rows += static_cast<int>(text_ids.size());
    } else {
        x = queries;
    }

    const int kv_rows = kv.matrix.dim(0);
    AttentionConfig attn_cfg{cfg.d_h, cfg.heads};
    const int cross_rows = cfg.text_cross_attends ? -1 : q;
    const int attending_rows = cfg.text_cross_attends ? total_rows : q;

    std::optional<AttentionMask> cross_mask;
    if (kv_col_mask) {
        if (static_cast<int>(kv_col_mask->size()) != kv_rows)
            throw_config("resampler_forward: kv column mask size mismatch");
        cross_mask = AttentionMask{attending_rows, kv_rows, {}};
        cross_mask->allowed.resize(static_cast<size_t>(attending_rows) * kv_rows);
        for (int i = 0; i < attending_rows; ++i)
            for (int j = 0; j < kv_rows; ++j)
                cross_mask->allowed[static_cast<size_t>(i) * kv_rows + j] =
                    (*kv_col_mask)[static_cast<size_t>(j)] ? 0 : 1;
    }

    SoftPromptOut out;
    out.segments = kv.segments;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        bool has_cross = cfg.layer_has_cross(layer);
        TransformerLayerParams p = bind_transformer_layer(
            bind, prefix + ".layers." + std::to_string(layer), has_cross);
        TransformerLayerOut lo = transformer_layer(
            x, has_cross ? &kv.matrix : nullptr, p, attn_cfg,
            /*self_mask=*/nullptr, cross_mask ? &*cross_mask : nullptr, cross_rows,
            record_attention && has_cross);
        x = lo.out;
        if (lo.cross_weights) out.cross_records.push_back(std::move(*lo.cross_weights));
    }

    Tensor pooled = slice_rows(x, 0, q);
    pooled = layer_norm(pooled, bind(prefix + ".ln_f.gamma"), bind(prefix + ".ln_f.beta"),
                        kLayerNormEps);
    Tensor prompt = apply_linear(pooled, bind_linear(bind, prefix + ".lm_proj.0"));
    if (cfg.lm_proj_layers == 2)
        prompt = apply_linear(gelu(prompt), bind_linear(bind, prefix + ".lm_proj.1"));
    out.soft_prompt = prompt;
    return out;
}

void register_resampler(ParamStore& store, const std::string& prefix, const FusionConfig& cfg,
                        const std::vector<EncoderSpec>& specs, RngState& rng) {
    cfg.validate();
    if (static_cast<int>(specs.size()) != cfg.num_encoders)
        throw_config("register_resampler: encoder spec count does not match config K");
    store.add_randn(prefix + ".queries", {cfg.total_queries(), cfg.d_h}, rng, 0.02);
    store.add_randn(prefix + ".text_emb", {cfg.vocab, cfg.d_h}, rng, 0.02);
    for (const EncoderSpec& s : specs)
        register_linear(store, prefix + ".proj." + s.id, s.feat_dim, cfg.d_proj, rng);
    for (int layer = 0; layer < cfg.n_layers; ++layer)
        register_transformer_layer(store, prefix + ".layers." + std::to_string(layer), cfg.d_h,
                                   cfg.ffn_dim(), cfg.layer_has_cross(layer) ? cfg.d_proj : -1,
                                   rng);
    register_layer_norm(store, prefix + ".ln_f", cfg.d_h);
    if (cfg.lm_proj_layers == 2) {
        register_linear(store, prefix + ".lm_proj.0", cfg.d_h, cfg.d_h, rng);
        register_linear(store, prefix + ".lm_proj.1", cfg.d_h, cfg.d_lm, rng);
    } else {
        register_linear(store, prefix + ".lm_proj.0", cfg.d_h, cfg.d_lm, rng);
    }
}

FusionConfig single_encoder_config(const FusionConfig& cfg, int k) {
    if (k < 0 || k >= cfg.num_encoders)
        throw_config("single_encoder_config: index out of range");
    FusionConfig one = cfg;
    one.num_encoders = 1;
    one.feat_dims = {cfg.feat_dims[static_cast<size_t>(k)]};
    one.seq_lens = {cfg.seq_lens[static_cast<size_t>(k)]};
    return one;
}

EnsembleOut ensemble_forward(Binding& bind, const std::string& prefix,
                             const std::vector<FusionConfig>& member_cfgs,
                             const FeatureBundle& bundle, const std::vector<int>& text_ids,
                             bool record_attention) {
    if (member_cfgs.size() != bundle.features.size())
        throw_config("ensemble_forward: member count does not match bundle");
    EnsembleOut out;
    std::vector<Tensor> prompts;
    for (size_t k = 0; k < member_cfgs.size(); ++k) {
        FeatureBundle solo;
        solo.encoder_ids = {bundle.encoder_ids[k]};
        solo.features = {bundle.features[k]};
        solo.drop_mask = {0};
        const std::string member = prefix + "." + bundle.encoder_ids[k];
        ConcatenatedKV kv = project_and_concat(bind, member, solo, member_cfgs[k]);
        SoftPromptOut member_out =
            resampler_forward(bind, member, member_cfgs[k], kv, text_ids, record_attention);
        prompts.push_back(member_out.soft_prompt);
        out.members.push_back(std::move(member_out));
    }
    Tensor stacked = prompts.size() == 1 ? prompts[0] : concat_rows(prompts);
    out.soft_prompt = apply_linear(stacked, bind_linear(bind, prefix + ".head"));
    return out;
}

void register_ensemble(ParamStore& store, const std::string& prefix,
                       const std::vector<FusionConfig>& member_cfgs,
                       const std::vector<EncoderSpec>& specs, RngState& rng) {
    if (member_cfgs.size() != specs.size())
        throw_config("register_ensemble: member count does not match specs");
    for (size_t k = 0; k < specs.size(); ++k)
        register_resampler(store, prefix + "." + specs[k].id, member_cfgs[k], {specs[k]}, rng);
    const int d_lm = member_cfgs.empty() ? 0 : member_cfgs[0].d_lm;
    register_linear(store, prefix + ".head", d_lm, d_lm, rng);
}

ParamCountTable count_trainable_params(const ParamStore& store) {
    ParamCountTable table;
    for (const auto& [name, p] : store.params()) {
        std::string group = name.substr(0, name.find('.'));
        ParamCountRow* row = nullptr;
        for (auto& r : table.rows)
            if (r.group == group) row = &r;
        if (!row) {
            table.rows.push_back({group, 0, 0});
            row = &table.rows.back();
        }
        int64_t n = static_cast<int64_t>(p.value.size());
        row->total += n;
        table.total += n;
        if (p.trainable) {
            row->trainable += n;
            table.trainable += n;
        }
    }
    table.trainable_fraction =
        table.total > 0 ? static_cast<double>(table.trainable) / static_cast<double>(table.total)
                        : 0.0;
    return table;
}

} // namespace mef
