#pragma once

#include <array>
#include <string>
#include <vector>

#include "param_store.h"
#include "rng.h"

namespace mef {

// Scenes are 4-attribute compositional descriptions; every attribute has 8
// possible values so chance level is 12.5% per attribute.
enum class Attribute { color = 0, shape = 1, count = 2, position = 3 };
constexpr int kNumAttributes = 4;
constexpr int kValuesPerAttribute = 8;

const char* attribute_name(Attribute a);
Attribute attribute_from_name(const std::string& name); // unknown -> data error

struct Scene {
    int color = 0;    // [0, 8)
    int shape = 0;    // [0, 8)
    int count = 1;    // [1, 8]
    int position = 0; // [0, 8)

    // Canonical 0-based value index of an attribute.
    int value_index(Attribute a) const;
    bool operator==(const Scene&) const = default;
};

std::vector<Scene> generate_scenes(int64_t n, RngState& rng);

// Cache files: one record per line, field names + integers.
void write_scene_file(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scene_file(const std::string& path);

// ---- vocabulary ----
//
// Fixed 48-token vocabulary: specials, the caption prefix words, one query
// token per attribute, 8 value tokens per attribute, and reserved filler ids
// to round the table up to 48.
namespace vocab {
constexpr int PAD = 0;
constexpr int BOS = 1;
constexpr int EOS = 2;
constexpr int A = 3;
constexpr int PHOTO = 4;
constexpr int OF = 5;
constexpr int QUERY_BASE = 6;                       // + attribute index
constexpr int VALUE_BASE = 10;                      // + attribute*8 + value_index
constexpr int RESERVED_BASE = 42;
constexpr int SIZE = 48;

int query_token(Attribute a);
int value_token(Attribute a, int value_index);
std::string token_name(int id);
int token_id(const std::string& name); // unknown -> data error
} // namespace vocab

struct TokenSeq {
    std::vector<int> ids;
    std::vector<uint8_t> loss_mask; // same length; 1 = position contributes to the loss
};

// [BOS A photo of COLOR SHAPE COUNT POS EOS]; loss covers the four attribute
// value tokens and EOS.
TokenSeq caption_tokens(const Scene& scene);
Scene scene_from_caption(const std::vector<int>& ids); // malformed -> data error
// Token ids of the caption prompt prefix [BOS A photo of].
std::vector<int> caption_prompt_ids();

struct QaExample {
    std::vector<int> prompt_ids; // [BOS QUERY_attr]
    int answer_id = 0;
};
QaExample qa_tokens(const Scene& scene, Attribute attribute);

// ---- mock encoders ----

struct EncoderSpec {
    std::string id;
    std::vector<Attribute> visible; // nonempty
    int seq_len = 1;                // L_k
    int feat_dim = 1;               // d_k
    double noise_sigma = 0.0;
    uint64_t codebook_seed = 0;

    void validate() const;
};

// The desk configuration: two complementary noiseless specialists plus one
// noisy generalist, so fusion is required for full-caption accuracy.
std::vector<EncoderSpec> desk_encoder_specs();

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

struct FeatureBundle {
    std::vector<std::string> encoder_ids; // configured order
    std::vector<Mat> features;            // one matrix per encoder
    std::vector<uint8_t> drop_mask;       // 1 = dropped; size K
};

// Mock encoders read their codebooks from frozen parameters:
//   enc.<id>.codebook  [4*8 x d_k]  one unit-norm row per (attribute, value)
//   enc.<id>.pos       [L_k x d_k]  fixed per-position features
// A scene's features are the position features plus, for each visible
// attribute, its value vector added onto a reserved row; invisible attributes
// leave no trace, which makes the blindness exact. Gaussian noise of scale
// noise_sigma is drawn from the caller's stream.
class MockEncoderBank {
public:
    MockEncoderBank(std::vector<EncoderSpec> specs, ParamStore& store);

    const std::vector<EncoderSpec>& specs() const { return specs_; }
    int count() const { return static_cast<int>(specs_.size()); }

    Mat encode(const Scene& scene, int encoder_index, RngState& rng) const;
    FeatureBundle encode_all(const Scene& scene, RngState& item_rng) const;

private:
    std::vector<EncoderSpec> specs_;
    const ParamStore* store_;
};

// Registers the codebook/position parameters for one encoder if absent.
void register_mock_encoder(ParamStore& store, const EncoderSpec& spec);

// One-shot convenience around a transient bank.
Mat mock_encode(const Scene& scene, const EncoderSpec& spec, RngState& rng);

} // namespace mef
