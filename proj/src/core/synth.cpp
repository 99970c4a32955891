#include "synth.h"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mef {

const char* attribute_name(Attribute a) {
    switch (a) {
        case Attribute::color: return "color";
        case Attribute::shape: return "shape";
        case Attribute::count: return "count";
        case Attribute::position: return "position";
    }
    return "?";
}

Attribute attribute_from_name(const std::string& name) {
    for (int i = 0; i < kNumAttributes; ++i)
        if (name == attribute_name(static_cast<Attribute>(i)))
            return static_cast<Attribute>(i);
    throw_data("unknown attribute: '" + name + "' (expected color|shape|count|position)");
}

int Scene::value_index(Attribute a) const {
    switch (a) {
        case Attribute::color: return color;
        case Attribute::shape: return shape;
        case Attribute::count: return count - 1;
        case Attribute::position: return position;
    }
    return 0;
}

std::vector<Scene> generate_scenes(int64_t n, RngState& rng) {
    if (n < 1) throw_data("generate_scenes: n must be >= 1, got " + std::to_string(n));
    std::vector<Scene> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Scene s;
        s.color = static_cast<int>(rng::next_below_pow2(rng, 8));
        s.shape = static_cast<int>(rng::next_below_pow2(rng, 8));
        s.count = 1 + static_cast<int>(rng::next_below_pow2(rng, 8));
        s.position = static_cast<int>(rng::next_below_pow2(rng, 8));
        out.push_back(s);
    }
    return out;
}

void write_scene_file(const std::string& path, const std::vector<Scene>& scenes) {
    std::ofstream f(path);
    if (!f) throw_io("cannot open for writing: " + path);
    for (const Scene& s : scenes)
        f << "color=" << s.color << " shape=" << s.shape << " count=" << s.count
          << " position=" << s.position << "\n";
    if (!f) throw_io("write failed: " + path);
}

std::vector<Scene> read_scene_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw_io("cannot open for reading: " + path);
    std::vector<Scene> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        Scene s;
        std::istringstream ls(line);
        std::string field;
        int seen = 0;
        while (ls >> field) {
            auto eq = field.find('=');
            if (eq == std::string::npos)
                throw_data("scene file " + path + " line " + std::to_string(lineno) +
                           ": malformed field '" + field + "'");
            std::string key = field.substr(0, eq);
            int val = std::stoi(field.substr(eq + 1));
            if (key == "color") s.color = val;
            else if (key == "shape") s.shape = val;
            else if (key == "count") s.count = val;
            else if (key == "position") s.position = val;
            else
                throw_data("scene file " + path + " line " + std::to_string(lineno) +
                           ": unknown field '" + key + "'");
            ++seen;
        }
        if (seen != 4)
            throw_data("scene file " + path + " line " + std::to_string(lineno) +
                       ": expected 4 fields, got " + std::to_string(seen));
        if (s.color < 0 || s.color >= 8 || s.shape < 0 || s.shape >= 8 || s.count < 1 ||
            s.count > 8 || s.position < 0 || s.position >= 8)
            throw_data("scene file " + path + " line " + std::to_string(lineno) +
                       ": attribute out of range");
        out.push_back(s);
    }
    return out;
}

// ---- vocabulary ----

namespace vocab {

int query_token(Attribute a) { return QUERY_BASE + static_cast<int>(a); }

int value_token(Attribute a, int value_index) {
    if (value_index < 0 || value_index >= kValuesPerAttribute)
        throw_data("value_token: index " + std::to_string(value_index) + " out of range");
    return VALUE_BASE + static_cast<int>(a) * kValuesPerAttribute + value_index;
}

std::string token_name(int id) {
    switch (id) {
        case PAD: return "<pad>";
        case BOS: return "<bos>";
        case EOS: return "<eos>";
        case A: return "A";
        case PHOTO: return "photo";
        case OF: return "of";
        default: break;
    }
    if (id >= QUERY_BASE && id < QUERY_BASE + kNumAttributes)
        return std::string("query:") + attribute_name(static_cast<Attribute>(id - QUERY_BASE));
    if (id >= VALUE_BASE && id < VALUE_BASE + kNumAttributes * kValuesPerAttribute) {
        int off = id - VALUE_BASE;
        Attribute a = static_cast<Attribute>(off / kValuesPerAttribute);
        int v = off % kValuesPerAttribute;
        // Count values are 1-based in the surface form.
        int shown = (a == Attribute::count) ? v + 1 : v;
        return std::string(attribute_name(a)) + ":" + std::to_string(shown);
    }
    if (id >= RESERVED_BASE && id < SIZE)
        return "<reserved" + std::to_string(id - RESERVED_BASE) + ">";
    throw_data("token_name: id " + std::to_string(id) + " out of range [0," +
               std::to_string(SIZE) + ")");
}

int token_id(const std::string& name) {
    for (int id = 0; id < SIZE; ++id)
        if (token_name(id) == name) return id;
    throw_data("token_id: unknown token '" + name + "'");
}

} // namespace vocab

TokenSeq caption_tokens(const Scene& scene) {
    TokenSeq t;
    t.ids = {vocab::BOS, vocab::A, vocab::PHOTO, vocab::OF,
             vocab::value_token(Attribute::color, scene.value_index(Attribute::color)),
             vocab::value_token(Attribute::shape, scene.value_index(Attribute::shape)),
             vocab::value_token(Attribute::count, scene.value_index(Attribute::count)),
             vocab::value_token(Attribute::position, scene.value_index(Attribute::position)),
             vocab::EOS};
    t.loss_mask = {0, 0, 0, 0, 1, 1, 1, 1, 1};
    return t;
}

std::vector<int> caption_prompt_ids() {
    return {vocab::BOS, vocab::A, vocab::PHOTO, vocab::OF};
}

Scene scene_from_caption(const std::vector<int>& ids) {
    if (ids.size() != 9 || ids[0] != vocab::BOS || ids[1] != vocab::A || ids[2] != vocab::PHOTO ||
        ids[3] != vocab::OF || ids[8] != vocab::EOS)
        throw_data("scene_from_caption: malformed caption");
    Scene s;
    for (int a = 0; a < kNumAttributes; ++a) {
        int id = ids[static_cast<size_t>(4 + a)];
        int lo = vocab::VALUE_BASE + a * kValuesPerAttribute;
        if (id < lo || id >= lo + kValuesPerAttribute)
            throw_data("scene_from_caption: token " + std::to_string(id) +
                       " is not a value of attribute " +
                       attribute_name(static_cast<Attribute>(a)));
        int v = id - lo;
        switch (static_cast<Attribute>(a)) {
            case Attribute::color: s.color = v; break;
            case Attribute::shape: s.shape = v; break;
            case Attribute::count: s.count = v + 1; break;
            case Attribute::position: s.position = v; break;
        }
    }
    return s;
}

QaExample qa_tokens(const Scene& scene, Attribute attribute) {
    QaExample q;
    q.prompt_ids = {vocab::BOS, vocab::query_token(attribute)};
    q.answer_id = vocab::value_token(attribute, scene.value_index(attribute));
    return q;
}

// ---- mock encoders ----

void EncoderSpec::validate() const {
    if (id.empty()) throw_config("encoder spec: id must be nonempty");
    if (visible.empty()) throw_config("encoder '" + id + "': visible_attributes must be nonempty");
    if (seq_len < 1) throw_config("encoder '" + id + "': seq_len must be >= 1");
    if (feat_dim < 1) throw_config("encoder '" + id + "': feat_dim must be >= 1");
    if (noise_sigma < 0.0) throw_config("encoder '" + id + "': noise_sigma must be >= 0");
}

std::vector<EncoderSpec> desk_encoder_specs() {
    return {
        {"e1", {Attribute::color, Attribute::shape}, 9, 32, 0.0, 101},
        {"e2", {Attribute::count, Attribute::position}, 5, 48, 0.0, 202},
        {"e3",
         {Attribute::color, Attribute::shape, Attribute::count, Attribute::position},
         7, 24, 0.5, 303},
    };
}

static std::vector<double> unit_rows(int rows, int cols, RngState& rng) {
    std::vector<double> m(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        double* row = m.data() + static_cast<size_t>(r) * cols;
        double sq = 0.0;
        for (int c = 0; c < cols; ++c) {
            row[c] = rng::next_normal(rng);
            sq += row[c] * row[c];
        }
        double inv = 1.0 / std::sqrt(sq);
        for (int c = 0; c < cols; ++c) row[c] *= inv;
    }
    return m;
}

void register_mock_encoder(ParamStore& store, const EncoderSpec& spec) {
    spec.validate();
    const std::string cb_name = "enc." + spec.id + ".codebook";
    if (store.has(cb_name)) return;
    RngState rng{rng::mix64(spec.codebook_seed ^ 0x6D0C6B00C0DEB00Cull), 0};
    RngState cb_rng = rng::derive(rng, "codebook");
    RngState pos_rng = rng::derive(rng, "pos");
    store.add(cb_name, {kNumAttributes * kValuesPerAttribute, spec.feat_dim},
              unit_rows(kNumAttributes * kValuesPerAttribute, spec.feat_dim, cb_rng),
              /*trainable=*/false);
    store.add("enc." + spec.id + ".pos", {spec.seq_len, spec.feat_dim},
              unit_rows(spec.seq_len, spec.feat_dim, pos_rng), /*trainable=*/false);
}

MockEncoderBank::MockEncoderBank(std::vector<EncoderSpec> specs, ParamStore& store)
    : specs_(std::move(specs)), store_(&store) {
    if (specs_.empty()) throw_config("encoder bank: need at least one encoder (K >= 1)");
    for (const EncoderSpec& s : specs_) register_mock_encoder(store, s);
}

Mat MockEncoderBank::encode(const Scene& scene, int encoder_index, RngState& rng) const {
    const EncoderSpec& spec = specs_[static_cast<size_t>(encoder_index)];
    const Param& cb = store_->at("enc." + spec.id + ".codebook");
    const Param& pos = store_->at("enc." + spec.id + ".pos");
    Mat m;
    m.rows = spec.seq_len;
    m.cols = spec.feat_dim;
    m.v = pos.value;
    for (Attribute a : spec.visible) {
        int row = static_cast<int>(a) % spec.seq_len; // reserved row for this attribute
        int entry = static_cast<int>(a) * kValuesPerAttribute + scene.value_index(a);
        const double* src = cb.value.data() + static_cast<size_t>(entry) * spec.feat_dim;
        double* dst = m.v.data() + static_cast<size_t>(row) * spec.feat_dim;
        for (int c = 0; c < spec.feat_dim; ++c) dst[c] += src[c];
    }
    if (spec.noise_sigma > 0.0)
        for (double& x : m.v) x += spec.noise_sigma * rng::next_normal(rng);
    return m;
}

FeatureBundle MockEncoderBank::encode_all(const Scene& scene, RngState& item_rng) const {
    FeatureBundle b;
    b.encoder_ids.reserve(specs_.size());
    b.features.reserve(specs_.size());
    b.drop_mask.assign(specs_.size(), 0);
    for (size_t k = 0; k < specs_.size(); ++k) {
        RngState enc_rng = rng::derive(item_rng, "enc", static_cast<uint64_t>(k));
        b.encoder_ids.push_back(specs_[k].id);
        b.features.push_back(encode(scene, static_cast<int>(k), enc_rng));
    }
    return b;
}

Mat mock_encode(const Scene& scene, const EncoderSpec& spec, RngState& rng) {
    ParamStore tmp;
    MockEncoderBank bank({spec}, tmp);
    return bank.encode(scene, 0, rng);
}

} // namespace mef
