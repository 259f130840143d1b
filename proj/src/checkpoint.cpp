#include "diffcal/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "diffcal/sha256.hpp"

namespace diffcal {

using nlohmann::ordered_json;

static const char* kFormat = "diffcal-ckpt-v1";

void save_checkpoint(const std::string& path,
                     const std::vector<NamedParam>& params,
                     std::uint64_t seed, const std::string& config_hash,
                     const ordered_json& extra_meta) {
    ordered_json header;
    header["format"] = kFormat;
    header["dtype"] = "f64";
    header["seed"] = seed;
    header["config_hash"] = config_hash;
    header["meta"] = extra_meta;
    ordered_json plist = ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        ordered_json e;
        e["name"] = p.name;
        e["shape"] = p.tensor.shape();
        e["offset"] = offset;
        e["count"] = p.tensor.size();
        plist.push_back(std::move(e));
        offset += p.tensor.size() * sizeof(double);
    }
    header["params"] = std::move(plist);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write checkpoint: " + tmp);
        f << header.dump() << '\n';
        for (const auto& p : params) {
            const auto& v = p.tensor.value();
            // Host is little-endian on every supported target; memcpy of the
            // double array is the declared byte layout.
            f.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
        if (!f) throw ConfigError("short write on checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::uint64_t Checkpoint::seed() const {
    return header.at("seed").get<std::uint64_t>();
}

std::string Checkpoint::config_hash() const {
    return header.at("config_hash").get<std::string>();
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ConfigError("checkpoint has no header: " + path);

    Checkpoint ck;
    try {
        ck.header = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw ConfigError("checkpoint header is not JSON: " + path + ": " +
                          e.what());
    }
    if (!ck.header.contains("format") || ck.header["format"] != kFormat)
        throw ConfigError("not a checkpoint file: " + path);
    if (ck.header.at("dtype") != "f64")
        throw ConfigError("unsupported checkpoint dtype in " + path);

    for (const auto& e : ck.header.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        const std::uint64_t count = e.at("count").get<std::uint64_t>();
        if (shape_size(shape) != count)
            throw ConfigError("checkpoint shape/count mismatch for " + name);
        std::vector<double> vals(count);
        f.read(reinterpret_cast<char*>(vals.data()),
               static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<std::uint64_t>(f.gcount()) != count * sizeof(double))
            throw ConfigError("checkpoint payload truncated at " + name +
                              " in " + path);
        ck.order.push_back(name);
        ck.entries[name] = {std::move(shape), std::move(vals)};
    }
    // trailing garbage would mean the header lies about the payload
    char extra;
    if (f.read(&extra, 1))
        throw ConfigError("checkpoint has bytes past declared payload: " + path);
    return ck;
}

void apply_checkpoint(const Checkpoint& ck,
                      const std::vector<NamedParam>& params) {
    if (ck.entries.size() != params.size())
        throw ConfigError("checkpoint holds " +
                          std::to_string(ck.entries.size()) +
                          " tensors, model has " +
                          std::to_string(params.size()));
    for (const auto& p : params) {
        auto it = ck.entries.find(p.name);
        if (it == ck.entries.end())
            throw ConfigError("checkpoint missing tensor: " + p.name);
        if (it->second.first != p.tensor.shape())
            throw ConfigError("checkpoint shape mismatch for " + p.name +
                              ": file " + shape_str(it->second.first) +
                              " vs model " + shape_str(p.tensor.shape()));
        Tensor t = p.tensor;
        t.value() = it->second.second;
    }
}

std::string checkpoint_payload_sha(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ConfigError("checkpoint has no header: " + path);
    Sha256 h;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        if (f.gcount() > 0) h.update(buf, static_cast<std::size_t>(f.gcount()));
    }
    return h.hex_digest();
}

std::string params_sha(const std::vector<NamedParam>& params) {
    Sha256 h;
    for (const auto& p : params) {
        const auto& v = p.tensor.value();
        if (!v.empty()) h.update(v.data(), v.size() * sizeof(double));
    }
    return h.hex_digest();
}

} // namespace diffcal
