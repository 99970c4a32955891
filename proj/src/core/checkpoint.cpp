#include "checkpoint.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mef {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const ParamStore& store, const std::string& dir,
                     const std::string& config_json, uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw_io("cannot create checkpoint directory: " + dir);

    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["dtype"] = "float64-le";
    manifest["rng_seed"] = seed;
    manifest["blob"] = "params.bin";
    if (!config_json.empty()) {
        manifest["config"] = json::parse(config_json, nullptr, true, /*ignore_comments=*/true);
    } else {
        manifest["config"] = nullptr;
    }

    json params = json::array();
    uint64_t offset = 0;
    for (const auto& [name, p] : store.params()) {
        json e;
        e["name"] = name;
        e["shape"] = p.shape;
        e["trainable"] = p.trainable;
        e["offset"] = offset;
        e["numel"] = p.value.size();
        params.push_back(std::move(e));
        offset += p.value.size() * sizeof(double);
    }
    manifest["params"] = std::move(params);

    {
        std::ofstream f(fs::path(dir) / "manifest.json");
        if (!f) throw_io("cannot write checkpoint manifest in " + dir);
        f << manifest.dump(2) << "\n";
        if (!f) throw_io("write failed: " + dir + "/manifest.json");
    }
    {
        std::ofstream f(fs::path(dir) / "params.bin", std::ios::binary);
        if (!f) throw_io("cannot write checkpoint blob in " + dir);
        for (const auto& [name, p] : store.params())
            f.write(reinterpret_cast<const char*>(p.value.data()),
                    static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!f) throw_io("write failed: " + dir + "/params.bin");
    }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw_io("cannot open checkpoint manifest: " + dir + "/manifest.json");
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw_io("invalid checkpoint manifest in " + dir + ": " + e.what());
    }
    if (manifest.value("format_version", -1) != kCheckpointFormatVersion)
        throw_io("checkpoint " + dir + ": unsupported format version");
    if (manifest.value("dtype", "") != "float64-le")
        throw_io("checkpoint " + dir + ": unsupported dtype");

    const std::string blob_name = manifest.value("blob", "params.bin");
    std::ifstream bf(fs::path(dir) / blob_name, std::ios::binary);
    if (!bf) throw_io("cannot open checkpoint blob: " + dir + "/" + blob_name);
    std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    LoadedCheckpoint out;
    out.seed = manifest.value("rng_seed", 0ull);
    if (manifest.contains("config") && !manifest["config"].is_null())
        out.config_json = manifest["config"].dump();

    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        const uint64_t offset = e.at("offset").get<uint64_t>();
        const uint64_t count = e.at("numel").get<uint64_t>();
        if (static_cast<int64_t>(count) != numel(shape))
            throw_io("checkpoint " + dir + ": parameter " + name + " numel " +
                     std::to_string(count) + " does not match shape " + shape_str(shape));
        if (offset + count * sizeof(double) > blob.size())
            throw_io("checkpoint " + dir + ": blob too short for parameter " + name);
        std::vector<double> value(count);
        std::memcpy(value.data(), blob.data() + offset, count * sizeof(double));
        Param& p = out.store.add(name, shape, std::move(value));
        p.trainable = e.value("trainable", true);
    }
    return out;
}

void copy_params(const ParamStore& src, ParamStore& dst, const std::string& prefix) {
    int copied = 0;
    for (const auto& [name, p] : src.params()) {
        if (name.rfind(prefix, 0) != 0) continue;
        if (!dst.has(name))
            throw_config("checkpoint/config mismatch: parameter '" + name +
                         "' is absent from the target model");
        Param& d = dst.at(name);
        if (d.shape != p.shape)
            throw_config("checkpoint/config mismatch for '" + name + "': checkpoint shape " +
                         shape_str(p.shape) + " vs model shape " + shape_str(d.shape));
        d.value = p.value;
        ++copied;
    }
    if (copied == 0)
        throw_config("checkpoint/config mismatch: no parameters with prefix '" + prefix + "'");
}

} // namespace mef
