#include "diffcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace diffcal {

namespace {

// Gaussian bump centered at (x, y) in [0,1]^2 painted onto a grid of cell
// centers; intensities stay in [0,1].
std::vector<double> rasterize_point(double x, double y, int grid) {
    std::vector<double> img(static_cast<std::size_t>(grid) * grid);
    const double sigma = 1.2 / grid;
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c) {
            const double cy = (r + 0.5) / grid;
            const double cx = (c + 0.5) / grid;
            const double d2 = (cx - x) * (cx - x) + (cy - y) * (cy - y);
            img[static_cast<std::size_t>(r) * grid + c] =
                std::exp(-d2 / (2.0 * sigma * sigma));
        }
    return img;
}

Dataset planar_dataset(const std::vector<std::pair<double, double>>& pts,
                       const std::vector<int>& labels, int classes, int grid,
                       bool rasterize) {
    Dataset ds;
    ds.kind = rasterize ? TaskKind::toy_vision : TaskKind::tabular;
    ds.n_classes = classes;
    ds.feature_dim = rasterize ? grid * grid : 2;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Sample s;
        s.label = labels[i];
        if (rasterize)
            s.features = rasterize_point(pts[i].first, pts[i].second, grid);
        else
            s.features = {pts[i].first, pts[i].second};
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace

Dataset gen_blobs(int n, int classes, double spread, int grid, Rng& rng,
                  bool rasterize) {
    if (n < 1 || classes < 2) throw ConfigError("gen_blobs: bad n/classes");
    // cluster centers on a circle inside the unit square
    std::vector<std::pair<double, double>> centers;
    for (int k = 0; k < classes; ++k) {
        const double a = 6.283185307179586 * k / classes;
        centers.emplace_back(0.5 + 0.27 * std::cos(a), 0.5 + 0.27 * std::sin(a));
    }
    std::vector<std::pair<double, double>> pts;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.uniform_int(0, classes - 1));
        pts.emplace_back(centers[k].first + spread * rng.normal(),
                         centers[k].second + spread * rng.normal());
        labels.push_back(k);
    }
    return planar_dataset(pts, labels, classes, grid, rasterize);
}

Dataset gen_moons(int n, double noise, int grid, Rng& rng, bool rasterize) {
    if (n < 1) throw ConfigError("gen_moons: bad n");
    std::vector<std::pair<double, double>> pts;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.uniform_int(0, 1));
        const double a = 3.141592653589793 * rng.uniform();
        double x, y;
        if (k == 0) {
            x = 0.5 + 0.25 * std::cos(a);
            y = 0.45 + 0.25 * std::sin(a);
        } else {
            x = 0.5 - 0.25 * std::cos(a) + 0.125;
            y = 0.55 - 0.25 * std::sin(a);
        }
        pts.emplace_back(x + noise * rng.normal(), y + noise * rng.normal());
        labels.push_back(k);
    }
    return planar_dataset(pts, labels, 2, grid, rasterize);
}

Dataset gen_spiral(int n, int classes, double noise, int grid, Rng& rng,
                   bool rasterize) {
    if (n < 1 || classes < 2) throw ConfigError("gen_spiral: bad n/classes");
    std::vector<std::pair<double, double>> pts;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.uniform_int(0, classes - 1));
        const double u = rng.uniform();
        const double r = 0.08 + 0.34 * u;
        const double a =
            6.283185307179586 * (u * 1.25 + static_cast<double>(k) / classes);
        pts.emplace_back(0.5 + r * std::cos(a) + noise * rng.normal(),
                         0.5 + r * std::sin(a) + noise * rng.normal());
        labels.push_back(k);
    }
    return planar_dataset(pts, labels, classes, grid, rasterize);
}

Dataset gen_token_parity(int n, int seq_len, int vocab, Rng& rng) {
    if (n < 1 || seq_len < 1 || vocab < 2)
        throw ConfigError("gen_token_parity: bad parameters");
    Dataset ds;
    ds.kind = TaskKind::toy_text;
    ds.n_classes = 2;
    ds.seq_len = seq_len;
    ds.vocab = vocab;
    for (int i = 0; i < n; ++i) {
        Sample s;
        int ones = 0;
        for (int j = 0; j < seq_len; ++j) {
            const int tok = static_cast<int>(rng.uniform_int(0, vocab - 1));
            if (tok == 1) ++ones;
            s.tokens.push_back(tok);
        }
        s.label = ones % 2;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset gen_ood(const Dataset& id_like, const std::string& ood_kind,
                Rng& rng) {
    Dataset ds;
    ds.kind = id_like.kind;
    ds.n_classes = id_like.n_classes;
    ds.feature_dim = id_like.feature_dim;
    ds.seq_len = id_like.seq_len;
    ds.vocab = id_like.vocab;
    const std::size_t n = id_like.size();
    if (ood_kind == "noise") {
        for (std::size_t i = 0; i < n; ++i) {
            Sample s;
            s.label = 0; // unused downstream
            if (ds.kind == TaskKind::toy_text) {
                for (int j = 0; j < ds.seq_len; ++j)
                    s.tokens.push_back(
                        static_cast<int>(rng.uniform_int(0, ds.vocab - 1)));
            } else {
                for (int j = 0; j < ds.feature_dim; ++j)
                    s.features.push_back(rng.uniform());
            }
            ds.samples.push_back(std::move(s));
        }
        return ds;
    }
    if (ood_kind == "shift") {
        if (ds.kind == TaskKind::toy_text) {
            // constant runs never occur under the uniform generator
            for (std::size_t i = 0; i < n; ++i) {
                Sample s;
                const int tok = static_cast<int>(rng.uniform_int(0, ds.vocab - 1));
                s.tokens.assign(static_cast<std::size_t>(ds.seq_len), tok);
                s.label = 0;
                ds.samples.push_back(std::move(s));
            }
            return ds;
        }
        const bool raster = ds.kind == TaskKind::toy_vision;
        const int grid = raster
                             ? static_cast<int>(std::lround(
                                   std::sqrt(static_cast<double>(ds.feature_dim))))
                             : 0;
        for (std::size_t i = 0; i < n; ++i) {
            // a ring hugging the border of the unit square, far from the
            // centered generators
            const double a = 6.283185307179586 * rng.uniform();
            const double x = 0.5 + 0.48 * std::cos(a);
            const double y = 0.5 + 0.48 * std::sin(a);
            Sample s;
            s.label = 0;
            if (raster)
                s.features = rasterize_point(x, y, grid);
            else
                s.features = {x * 3.0 - 1.0, y * 3.0 - 1.0};
            ds.samples.push_back(std::move(s));
        }
        return ds;
    }
    throw ConfigError("unknown ood kind: " + ood_kind);
}

void split_dataset(const Dataset& all, double test_frac, Rng& rng,
                   Dataset& train, Dataset& test) {
    if (test_frac <= 0.0 || test_frac >= 1.0)
        throw RangeError("split_dataset: test fraction must be in (0,1)");
    std::vector<std::size_t> idx(all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1],
                  idx[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    train = all;
    test = all;
    train.samples.clear();
    test.samples.clear();
    const std::size_t n_test =
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::floor(all.size() * test_frac)));
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_test ? test : train).samples.push_back(all.samples[idx[i]]);
    if (train.samples.empty())
        throw RangeError("split_dataset: train side came out empty");
}

void write_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write dataset: " + path);
    f.precision(17);
    if (ds.kind == TaskKind::toy_text) {
        for (int j = 0; j < ds.seq_len; ++j) f << "tok_" << j << ",";
        f << "label\n";
        for (const auto& s : ds.samples) {
            for (int tok : s.tokens) f << tok << ",";
            f << s.label << "\n";
        }
        return;
    }
    for (int j = 0; j < ds.feature_dim; ++j) f << "f_" << j << ",";
    f << "label\n";
    for (const auto& s : ds.samples) {
        for (double v : s.features) f << v << ",";
        f << s.label << "\n";
    }
}

static void finish_dataset(Dataset& ds, TaskKind kind) {
    ds.kind = kind;
    int max_label = 0;
    for (const auto& s : ds.samples) max_label = std::max(max_label, s.label);
    ds.n_classes = std::max(2, max_label + 1);
    if (ds.samples.empty()) throw ConfigError("dataset file has no samples");
    if (kind == TaskKind::toy_text) {
        ds.seq_len = static_cast<int>(ds.samples[0].tokens.size());
        int vmax = 1;
        for (const auto& s : ds.samples) {
            if (static_cast<int>(s.tokens.size()) != ds.seq_len)
                throw ConfigError("dataset: ragged token rows");
            for (int t : s.tokens) vmax = std::max(vmax, t);
        }
        ds.vocab = vmax + 1;
    } else {
        ds.feature_dim = static_cast<int>(ds.samples[0].features.size());
        for (const auto& s : ds.samples)
            if (static_cast<int>(s.features.size()) != ds.feature_dim)
                throw ConfigError("dataset: ragged feature rows");
    }
}

Dataset read_dataset_csv(const std::string& path, TaskKind kind) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read dataset: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("empty dataset: " + path);
    Dataset ds;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("bad number '" + cell + "' in " + path);
            }
        }
        if (row.size() < 2) throw ConfigError("short row in " + path);
        Sample s;
        s.label = static_cast<int>(std::lround(row.back()));
        if (s.label < 0) throw ConfigError("negative label in " + path);
        row.pop_back();
        if (kind == TaskKind::toy_text)
            for (double v : row)
                s.tokens.push_back(static_cast<int>(std::lround(v)));
        else
            s.features = std::move(row);
        ds.samples.push_back(std::move(s));
    }
    finish_dataset(ds, kind);
    return ds;
}

Dataset read_dataset_jsonl(const std::string& path, TaskKind kind) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read dataset: " + path);
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ConfigError("bad JSON at " + path + ":" +
                              std::to_string(lineno) + ": " + e.what());
        }
        Sample s;
        if (!j.contains("label"))
            throw ConfigError("missing label at " + path + ":" +
                              std::to_string(lineno));
        s.label = j["label"].get<int>();
        if (kind == TaskKind::toy_text) {
            if (!j.contains("tokens"))
                throw ConfigError("missing tokens at " + path + ":" +
                                  std::to_string(lineno));
            s.tokens = j["tokens"].get<std::vector<int>>();
        } else {
            if (!j.contains("features"))
                throw ConfigError("missing features at " + path + ":" +
                                  std::to_string(lineno));
            s.features = j["features"].get<std::vector<double>>();
        }
        ds.samples.push_back(std::move(s));
    }
    finish_dataset(ds, kind);
    return ds;
}

} // namespace diffcal
