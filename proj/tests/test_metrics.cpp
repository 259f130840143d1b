#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"

#include "diffcal/errors.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;
namespace fs = std::filesystem;

namespace {

PredictionSet random_set(Rng& rng, std::size_t n, std::size_t classes) {
    std::vector<std::vector<double>> probs(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        probs[i].resize(classes);
        double z = 0.0;
        for (auto& p : probs[i]) {
            p = -std::log(1.0 - rng.uniform());
            z += p;
        }
        for (auto& p : probs[i]) p /= z;
        labels[i] = static_cast<int>(
            rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
    }
    return PredictionSet::from(std::move(probs), std::move(labels));
}

// definitional ece written independently with bare loops
double naive_ece(const PredictionSet& ps, int n_bins) {
    const std::size_t n = ps.size();
    std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = ps.confidence(i);
        // bins are (lo, hi]: smallest bin whose upper edge reaches c
        int b = static_cast<int>(std::ceil(c * n_bins)) - 1;
        if (b < 0) b = 0;
        if (b >= n_bins) b = n_bins - 1;
        conf_sum[static_cast<std::size_t>(b)] += c;
        acc_sum[static_cast<std::size_t>(b)] += ps.correct(i) ? 1.0 : 0.0;
        ++count[static_cast<std::size_t>(b)];
    }
    double e = 0.0;
    for (int b = 0; b < n_bins; ++b) {
        const auto k = count[static_cast<std::size_t>(b)];
        if (k == 0) continue;
        const double kd = static_cast<double>(k);
        e += kd / static_cast<double>(n) *
             std::fabs(conf_sum[static_cast<std::size_t>(b)] / kd -
                       acc_sum[static_cast<std::size_t>(b)] / kd);
    }
    return e;
}

// rank-based auroc oracle with midranks for ties
double naive_auroc(const std::vector<double>& pos,
                   const std::vector<double>& neg) {
    double u = 0.0;
    for (double p : pos)
        for (double q : neg) {
            if (p > q)
                u += 1.0;
            else if (p == q)
                u += 0.5;
        }
    return u / (static_cast<double>(pos.size()) *
                static_cast<double>(neg.size()));
}

} // namespace

TEST_CASE("prediction set validation") {
    using Probs = std::vector<std::vector<double>>;
    using Labels = std::vector<int>;
    const Probs bad_sum = {{0.7, 0.2}};
    const Probs ok = {{0.7, 0.3}};
    const Probs one_class = {{1.0}};
    const Probs neg_prob = {{-0.1, 1.1}};
    const Labels zero = {0};
    const Labels two = {2};
    const Labels pair = {0, 1};
    CHECK_THROWS_AS(PredictionSet::from(bad_sum, zero), NumericError);
    CHECK_THROWS_AS(PredictionSet::from(ok, two), RangeError);
    CHECK_THROWS_AS(PredictionSet::from(ok, pair), ShapeError);
    CHECK_THROWS_AS(PredictionSet::from(one_class, zero), ContractError);
    CHECK_THROWS_AS(PredictionSet::from(neg_prob, zero), NumericError);
    const auto ps = PredictionSet::from({{0.5, 0.5}}, {1});
    CHECK(ps.predicted(0) == 0); // ties go to the lowest index
    CHECK(ps.confidence(0) == 0.5);
    CHECK_FALSE(ps.correct(0));
}

TEST_CASE("calibration error matches a bare-loop rewrite") {
    Rng rng(80);
    for (int rep = 0; rep < 40; ++rep) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 25));
        const auto c = static_cast<std::size_t>(rng.uniform_int(2, 4));
        const PredictionSet ps = random_set(rng, n, c);
        for (int bins : {1, 2, 10, 15})
            CHECK(ece(ps, bins) ==
                  doctest::Approx(naive_ece(ps, bins)).epsilon(1e-12).scale(
                      1e-12));
    }
}

TEST_CASE("reliability bins partition the samples") {
    Rng rng(81);
    const PredictionSet ps = random_set(rng, 50, 3);
    const auto bins = reliability_bins(ps, 15);
    REQUIRE(bins.size() == 15);
    std::size_t total = 0;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        total += bins[b].count;
        CHECK(bins[b].lo == doctest::Approx(b / 15.0));
        CHECK(bins[b].hi == doctest::Approx((b + 1) / 15.0));
        if (bins[b].count > 0) {
            CHECK(bins[b].avg_conf > bins[b].lo - 1e-12);
            CHECK(bins[b].avg_conf <= bins[b].hi + 1e-12);
        }
    }
    CHECK(total == 50);
}

TEST_CASE("nll floors vanishing probabilities") {
    const auto ps = PredictionSet::from({{1.0, 0.0}, {0.5, 0.5}}, {1, 0});
    const double want = 0.5 * (-std::log(1e-12) - std::log(0.5));
    CHECK(nll_metric(ps) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("brier is the mean squared gap to the one-hot label") {
    const auto ps =
        PredictionSet::from({{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}}, {0, 2});
    const double r1 = 0.16 + 0.09 + 0.01;
    const double r2 = 0.04 + 0.25 + 0.49;
    CHECK(brier(ps) == doctest::Approx((r1 + r2) / 2).epsilon(1e-12));
}

TEST_CASE("matthews correlation on a binary confusion table") {
    // TP=2 TN=1 FP=1 FN=1 -> (2*1-1*1)/sqrt(3*3*2*2) = 1/6
    const auto ps = PredictionSet::from({{0.1, 0.9},
                                         {0.2, 0.8},
                                         {0.3, 0.7},
                                         {0.8, 0.2},
                                         {0.6, 0.4}},
                                        {1, 1, 0, 0, 1});
    CHECK(mcc(ps) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    // degenerate: everything predicted and labeled class 0
    const auto deg = PredictionSet::from({{0.9, 0.1}, {0.8, 0.2}}, {0, 0});
    CHECK(mcc(deg) == 0.0);

    // perfect multiclass agreement
    const auto perf = PredictionSet::from(
        {{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}}, {0, 1, 2});
    CHECK(mcc(perf) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("risk-coverage walks confidence-sorted prefixes") {
    // confidences 0.9 (correct), 0.8 (wrong), 0.6 (correct)
    const auto ps = PredictionSet::from(
        {{0.9, 0.1}, {0.8, 0.2}, {0.4, 0.6}}, {0, 1, 1});
    const auto rc = risk_coverage(ps);
    REQUIRE(rc.size() == 3);
    CHECK(rc[0].first == doctest::Approx(1.0 / 3.0));
    CHECK(rc[0].second == doctest::Approx(0.0));
    CHECK(rc[1].second == doctest::Approx(0.5));
    CHECK(rc[2].second == doctest::Approx(1.0 / 3.0));
    CHECK(aurc(ps) == doctest::Approx((0.0 + 0.5 + 1.0 / 3.0) / 3.0)
                          .epsilon(1e-12));
}

TEST_CASE("auroc agrees with the pairwise-comparison oracle") {
    Rng rng(82);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> pos, neg;
        const int np = 1 + static_cast<int>(rng.uniform_int(0, 8));
        const int nn = 1 + static_cast<int>(rng.uniform_int(0, 8));
        // coarse grid forces plenty of ties
        for (int i = 0; i < np; ++i)
            pos.push_back(rng.uniform_int(0, 4) / 4.0);
        for (int i = 0; i < nn; ++i)
            neg.push_back(rng.uniform_int(0, 4) / 4.0);
        CHECK(binary_auroc(pos, neg) ==
              doctest::Approx(naive_auroc(pos, neg)).epsilon(1e-12).scale(
                  1e-12));
    }
    CHECK(binary_auroc({1.0, 1.0}, {}) == 0.5);
    CHECK(binary_auroc({}, {0.0}) == 0.5);
    CHECK(binary_auroc({1, 2, 3}, {0, -1, -2}) == 1.0);
}

TEST_CASE("aupr on a hand-worked example") {
    // descending scores: pos(0.9), neg(0.8), pos(0.7)
    // recall 0.5 at precision 1, recall 1 at precision 2/3
    const double got = binary_aupr({0.9, 0.7}, {0.8});
    CHECK(got == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0))
                     .epsilon(1e-12));
    CHECK(binary_aupr({2.0, 3.0}, {0.0, 1.0}) == doctest::Approx(1.0));
}

TEST_CASE("failure scoring treats correct predictions as positives") {
    // confident-and-right, hesitant-and-wrong: perfect separation
    const auto good = PredictionSet::from(
        {{0.95, 0.05}, {0.9, 0.1}, {0.55, 0.45}, {0.6, 0.4}}, {0, 0, 1, 1});
    CHECK(failure_auroc(good) == doctest::Approx(1.0));
    // everything correct: one empty side
    const auto all_ok = PredictionSet::from({{0.9, 0.1}, {0.2, 0.8}}, {0, 1});
    CHECK(failure_auroc(all_ok) == 0.5);
}

TEST_CASE("fpr at high recall on a hand-worked example") {
    // correct at 0.9, 0.8, 0.7, 0.6; wrong at 0.85 and 0.55
    const auto ps = PredictionSet::from({{0.9, 0.1},
                                         {0.8, 0.2},
                                         {0.7, 0.3},
                                         {0.6, 0.4},
                                         {0.15, 0.85},
                                         {0.45, 0.55}},
                                        {0, 0, 0, 0, 0, 0});
    // any threshold catching all four correct ones also admits 0.85;
    // at tau = 0.6: tpr 1, fpr 1/2
    CHECK(fpr_at_95_tpr(ps) == doctest::Approx(0.5).epsilon(1e-12));
    // all predictions correct: threshold above everything gives fpr 0
    const auto clean = PredictionSet::from({{0.9, 0.1}, {0.8, 0.2}}, {0, 0});
    CHECK(fpr_at_95_tpr(clean) == doctest::Approx(0.0));
}

TEST_CASE("full report is consistent with its parts") {
    Rng rng(83);
    const PredictionSet ps = random_set(rng, 60, 3);
    const CalibrationReport r = calibration_report(ps, 15);
    CHECK(r.ece == doctest::Approx(ece(ps, 15)).epsilon(1e-12));
    CHECK(r.nll == doctest::Approx(nll_metric(ps)).epsilon(1e-12));
    CHECK(r.brier == doctest::Approx(brier(ps)).epsilon(1e-12));
    CHECK(r.acc == doctest::Approx(accuracy(ps)).epsilon(1e-12));
    CHECK(r.mcc == doctest::Approx(mcc(ps)).epsilon(1e-12));
    CHECK(r.aurc == doctest::Approx(aurc(ps)).epsilon(1e-12));
    CHECK(r.failure_auroc ==
          doctest::Approx(failure_auroc(ps)).epsilon(1e-12));
    CHECK(r.fpr95 == doctest::Approx(fpr_at_95_tpr(ps)).epsilon(1e-12));
    CHECK(r.bins.size() == 15);
    CHECK(r.risk_cov.size() == ps.size());
}

TEST_CASE("ood separation prefers the in-distribution side") {
    std::vector<std::vector<double>> id{{0.97, 0.03}, {0.9, 0.1}, {0.88, 0.12}};
    std::vector<std::vector<double>> ood{{0.55, 0.45}, {0.6, 0.4}};
    const OodReport r = ood_report(id, ood);
    CHECK(r.auroc_msp == doctest::Approx(1.0));
    CHECK(r.auroc_entropy == doctest::Approx(1.0));
    CHECK(r.aupr_msp == doctest::Approx(1.0));
    CHECK(r.n_id == 3);
    CHECK(r.n_ood == 2);
    CHECK(msp_score({0.2, 0.5, 0.3}) == 0.5);
    CHECK(neg_entropy_score({1.0, 0.0}) ==
          doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(neg_entropy_score({0.5, 0.5}) ==
          doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("prediction csv round trips") {
    Rng rng(84);
    const PredictionSet ps = random_set(rng, 12, 3);
    const std::string tmp =
        (fs::temp_directory_path() / "diffcal_pred_rt.csv").string();
    write_predictions_csv(ps, tmp);
    const PredictionSet rt = read_predictions_csv(tmp);
    REQUIRE(rt.size() == ps.size());
    CHECK(rt.labels == ps.labels);
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(rt.probs[i][c] == ps.probs[i][c]);
    fs::remove(tmp);
}
