#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "diffcal/tensor.hpp"

namespace diffcal {

// On-disk weight format: one compact JSON header line, '\n', then the raw
// payload of IEEE-754 binary64 values in little-endian byte order, written in
// header order. Header records name/shape/offset/count per parameter plus the
// seed and config hash the weights were produced under. Files are written to
// "<path>.tmp" and renamed, so a killed run never leaves a plausible-looking
// half checkpoint behind.

struct NamedParam {
    std::string name;
    Tensor tensor;
};

void save_checkpoint(const std::string& path,
                     const std::vector<NamedParam>& params,
                     std::uint64_t seed, const std::string& config_hash,
                     const nlohmann::ordered_json& extra_meta = nlohmann::ordered_json::object());

struct Checkpoint {
    nlohmann::ordered_json header;
    std::vector<std::string> order;
    std::map<std::string, std::pair<Shape, std::vector<double>>> entries;

    std::uint64_t seed() const;
    std::string config_hash() const;
};

Checkpoint load_checkpoint(const std::string& path);

// Copies stored values into live parameters; every name must match and every
// shape must agree.
void apply_checkpoint(const Checkpoint& ck,
                      const std::vector<NamedParam>& params);

// SHA-256 over the payload bytes only (weights, not metadata).
std::string checkpoint_payload_sha(const std::string& path);

// SHA-256 over the current values of a parameter list, in order.
std::string params_sha(const std::vector<NamedParam>& params);

} // namespace diffcal
