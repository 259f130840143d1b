#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"

#include "diffcal/config.hpp"
#include "diffcal/data.hpp"

using namespace diffcal;
namespace fs = std::filesystem;

TEST_CASE("planar generators cover every class with bounded features") {
    Rng rng(90);
    for (int raster = 0; raster < 2; ++raster) {
        Rng r = rng.stream("b", static_cast<std::uint64_t>(raster));
        const Dataset ds = gen_blobs(120, 3, 0.06, 8, r, raster == 1);
        CHECK(ds.size() == 120);
        CHECK(ds.n_classes == 3);
        std::set<int> seen;
        for (const auto& s : ds.samples) {
            seen.insert(s.label);
            REQUIRE(s.features.size() ==
                    static_cast<std::size_t>(ds.feature_dim));
            for (double f : s.features) CHECK(std::isfinite(f));
        }
        CHECK(seen.size() == 3);
        CHECK(ds.feature_dim == (raster == 1 ? 64 : 2));
    }
    Rng r2 = rng.stream("m");
    const Dataset moons = gen_moons(80, 0.05, 8, r2, false);
    CHECK(moons.n_classes == 2);
    Rng r3 = rng.stream("s");
    const Dataset spiral = gen_spiral(90, 3, 0.04, 8, r3, false);
    CHECK(spiral.n_classes == 3);
}

TEST_CASE("rasterized images hold one bright bump") {
    Rng rng(91);
    const Dataset ds = gen_blobs(10, 3, 0.06, 8, rng, true);
    for (const auto& s : ds.samples) {
        double mx = 0.0, total = 0.0;
        for (double f : s.features) {
            CHECK(f >= 0.0);
            CHECK(f <= 1.0 + 1e-12);
            mx = std::max(mx, f);
            total += f;
        }
        // the cell nearest the point is close to full intensity and the
        // bump has limited support
        CHECK(mx > 0.8);
        CHECK(total < 64.0 * 0.5);
    }
}

TEST_CASE("token sequences carry their own parity label") {
    Rng rng(92);
    const Dataset ds = gen_token_parity(100, 12, 6, rng);
    CHECK(ds.n_classes == 2);
    CHECK(ds.seq_len == 12);
    CHECK(ds.vocab == 6);
    for (const auto& s : ds.samples) {
        REQUIRE(s.tokens.size() == 12);
        int ones = 0;
        for (int t : s.tokens) {
            CHECK(t >= 0);
            CHECK(t < 6);
            if (t == 1) ++ones;
        }
        CHECK(s.label == ones % 2);
    }
}

TEST_CASE("splitting is disjoint, exhaustive and seed-stable") {
    Rng rng(93);
    const Dataset all = gen_blobs(100, 3, 0.06, 8, rng, false);
    Dataset tr1, te1, tr2, te2;
    Rng s1(5), s2(5);
    split_dataset(all, 0.25, s1, tr1, te1);
    split_dataset(all, 0.25, s2, tr2, te2);
    CHECK(te1.size() == 25);
    CHECK(tr1.size() == 75);
    CHECK(tr1.n_classes == 3);
    // stable under the same stream
    for (std::size_t i = 0; i < te1.size(); ++i)
        CHECK(te1.samples[i].features == te2.samples[i].features);
    // multiset of features is preserved
    auto key = [](const Sample& s) {
        return std::make_pair(s.features.empty() ? 0.0 : s.features[0],
                              s.label);
    };
    std::multiset<std::pair<double, int>> orig, split;
    for (const auto& s : all.samples) orig.insert(key(s));
    for (const auto& s : tr1.samples) split.insert(key(s));
    for (const auto& s : te1.samples) split.insert(key(s));
    CHECK(orig == split);
}

TEST_CASE("ood partners mirror the shape of their reference set") {
    Rng rng(94);
    const Dataset id = gen_blobs(40, 3, 0.06, 8, rng, true);
    for (const char* kind : {"noise", "shift"}) {
        Rng r = rng.stream(kind);
        const Dataset ood = gen_ood(id, kind, r);
        CHECK(ood.size() == id.size());
        CHECK(ood.feature_dim == id.feature_dim);
        for (const auto& s : ood.samples)
            REQUIRE(s.features.size() ==
                    static_cast<std::size_t>(id.feature_dim));
    }
    Rng bad = rng.stream("bad");
    CHECK_THROWS_AS(gen_ood(id, "wat", bad), ConfigError);
}

TEST_CASE("datasets round trip through csv and jsonl") {
    Rng rng(95);
    const std::string base =
        (fs::temp_directory_path() / "diffcal_ds").string();
    {
        const Dataset ds = gen_blobs(20, 3, 0.06, 8, rng, false);
        write_dataset_csv(ds, base + ".csv");
        const Dataset rt = read_dataset_csv(base + ".csv", TaskKind::tabular);
        REQUIRE(rt.size() == ds.size());
        CHECK(rt.n_classes == ds.n_classes);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            CHECK(rt.samples[i].label == ds.samples[i].label);
            REQUIRE(rt.samples[i].features.size() ==
                    ds.samples[i].features.size());
            for (std::size_t j = 0; j < ds.samples[i].features.size(); ++j)
                CHECK(rt.samples[i].features[j] ==
                      doctest::Approx(ds.samples[i].features[j])
                          .epsilon(1e-15));
        }
        fs::remove(base + ".csv");
    }
    {
        Rng r = rng.stream("t");
        const Dataset ds = gen_token_parity(15, 8, 5, r);
        write_dataset_csv(ds, base + "_tok.csv");
        const Dataset rt =
            read_dataset_csv(base + "_tok.csv", TaskKind::toy_text);
        REQUIRE(rt.size() == 15);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            CHECK(rt.samples[i].tokens == ds.samples[i].tokens);
            CHECK(rt.samples[i].label == ds.samples[i].label);
        }
        fs::remove(base + "_tok.csv");
    }
}

TEST_CASE("config text is a fixpoint of parse and render") {
    RunConfig cfg;
    cfg.seed = 17;
    cfg.attention = "kep";
    cfg.lambda_nll = 0.25;
    const std::string text = canonical_text(cfg);
    const RunConfig back = parse_config_text(text);
    CHECK(canonical_text(back) == text);
    CHECK(back.seed == 17);
    CHECK(back.attention == "kep");
    CHECK(back.lambda_nll == 0.25);
}

TEST_CASE("config parsing accepts comments and rejects unknown keys") {
    const RunConfig cfg = parse_config_text(
        "# a comment\n"
        "seed = 9\n"
        "\n"
        "backbone.depth = 6   # trailing comment\n"
        "data.kind = moons\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.depth == 6);
    CHECK(cfg.data_kind == "moons");
    CHECK_THROWS_AS(parse_config_text("nope = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("seed 9\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("backbone.depth = soon\n"), ConfigError);
}

TEST_CASE("overrides hit the same registry as files") {
    RunConfig cfg;
    apply_config_override(cfg, "eval.draws", "25");
    CHECK(cfg.eval_draws == 25);
    apply_config_override(cfg, "distill.lambda_mean", "0.9");
    CHECK(cfg.lambda_mean == 0.9);
    CHECK_THROWS_AS(apply_config_override(cfg, "wat", "1"), ConfigError);
}

TEST_CASE("config hash tracks semantics but not the run directory") {
    RunConfig a, b;
    a.out = "runs/x";
    b.out = "runs/y";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = a.seed + 1;
    CHECK(config_hash(a) != config_hash(b));
    RunConfig c;
    c.out = a.out;
    c.distill_lr = a.distill_lr * 2;
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("validation is strict about enums and ranges") {
    RunConfig cfg;
    cfg.attention = "quantum";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.data_n = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.test_frac = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.d_head = 7; // heads no longer tile d_model
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("loss weights fall back per chain type") {
    RunConfig cfg;
    cfg.attention = "sgpa";
    const LossWeights sw = resolve_lambdas(cfg);
    CHECK(sw.mean == 0.5);
    CHECK(sw.chol == 0.2);
    CHECK(sw.nll == 0.3);
    cfg.attention = "standard";
    const LossWeights dw = resolve_lambdas(cfg);
    CHECK(dw.mean == 0.8);
    CHECK(dw.chol == 0.0);
    CHECK(dw.nll == 0.2);
    cfg.lambda_chol = 0.15;
    CHECK(resolve_lambdas(cfg).chol == 0.15);
    cfg.attention = "kep";
    cfg.lambda_chol = -1.0;
    cfg.lambda_mean = 0.7;
    const LossWeights mixed = resolve_lambdas(cfg);
    CHECK(mixed.mean == 0.7);
    CHECK(mixed.chol == 0.2);
}
