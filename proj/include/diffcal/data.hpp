#pragma once

#include <string>
#include <vector>

#include "diffcal/backbone.hpp"
#include "diffcal/rng.hpp"

namespace diffcal {

struct Sample {
    std::vector<double> features; // vision grid or tabular row
    std::vector<int> tokens;      // toy-text
    int label = 0;
};

struct Dataset {
    TaskKind kind = TaskKind::toy_vision;
    int n_classes = 0;
    int feature_dim = 0; // per-sample feature count (vision: grid*grid)
    int seq_len = 0;
    int vocab = 0;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

// Planar generators. For toy-vision each point is rasterized onto a grid x
// grid intensity image as a Gaussian bump; for tabular the raw coordinates
// are the features.
Dataset gen_blobs(int n, int classes, double spread, int grid, Rng& rng,
                  bool rasterize = true);
Dataset gen_moons(int n, double noise, int grid, Rng& rng,
                  bool rasterize = true);
Dataset gen_spiral(int n, int classes, double noise, int grid, Rng& rng,
                   bool rasterize = true);
// Sequences over {0..vocab-1}; label = parity of occurrences of token 1.
Dataset gen_token_parity(int n, int seq_len, int vocab, Rng& rng);

// Out-of-distribution partners for a given in-distribution set.
// "noise": uniform intensities / uniform tokens / uniform far box.
// "shift": the same generator pushed away from the training support.
Dataset gen_ood(const Dataset& id_like, const std::string& ood_kind, Rng& rng);

void split_dataset(const Dataset& all, double test_frac, Rng& rng,
                   Dataset& train, Dataset& test);

// CSV: one sample per line, feature columns then integer label; token columns
// for text datasets. JSONL: {"features":[...]|"tokens":[...], "label": int}.
void write_dataset_csv(const Dataset& ds, const std::string& path);
Dataset read_dataset_csv(const std::string& path, TaskKind kind);
Dataset read_dataset_jsonl(const std::string& path, TaskKind kind);

} // namespace diffcal
