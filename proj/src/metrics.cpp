#include "diffcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "diffcal/errors.hpp"

namespace diffcal {

PredictionSet PredictionSet::from(std::vector<std::vector<double>> probs,
                                  std::vector<int> labels) {
    if (probs.size() != labels.size())
        throw ShapeError("prediction set: probs/labels length mismatch");
    if (probs.empty()) throw ContractError("prediction set: empty");
    PredictionSet ps;
    ps.n_classes = probs[0].size();
    if (ps.n_classes < 2)
        throw ContractError("prediction set: need at least 2 classes");
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].size() != ps.n_classes)
            throw ShapeError("prediction set: ragged probability rows");
        double s = 0.0;
        for (double p : probs[i]) {
            if (!(p >= 0.0) || !std::isfinite(p))
                throw NumericError("prediction set: bad probability");
            s += p;
        }
        if (std::fabs(s - 1.0) > 1e-9)
            throw NumericError("prediction set: row " + std::to_string(i) +
                               " sums to " + std::to_string(s));
        if (labels[i] < 0 ||
            static_cast<std::size_t>(labels[i]) >= ps.n_classes)
            throw RangeError("prediction set: label out of range");
    }
    ps.probs = std::move(probs);
    ps.labels = std::move(labels);
    return ps;
}

int PredictionSet::predicted(std::size_t i) const {
    const auto& p = probs[i];
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double PredictionSet::confidence(std::size_t i) const {
    const auto& p = probs[i];
    return *std::max_element(p.begin(), p.end());
}

bool PredictionSet::correct(std::size_t i) const {
    return predicted(i) == labels[i];
}

std::vector<ReliabilityBin> reliability_bins(const PredictionSet& ps,
                                             int n_bins) {
    if (n_bins < 1) throw RangeError("reliability_bins: n_bins < 1");
    std::vector<ReliabilityBin> bins(static_cast<std::size_t>(n_bins));
    const double width = 1.0 / n_bins;
    for (int b = 0; b < n_bins; ++b) {
        bins[b].lo = b * width;
        bins[b].hi = (b + 1) * width;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double c = ps.confidence(i);
        // intervals are (lo, hi], so conf exactly on an edge falls left
        int b = static_cast<int>(std::ceil(c * n_bins)) - 1;
        b = std::clamp(b, 0, n_bins - 1);
        bins[b].avg_conf += c;
        bins[b].avg_acc += ps.correct(i) ? 1.0 : 0.0;
        bins[b].count += 1;
    }
    for (auto& bin : bins)
        if (bin.count > 0) {
            bin.avg_conf /= static_cast<double>(bin.count);
            bin.avg_acc /= static_cast<double>(bin.count);
        }
    return bins;
}

double ece(const PredictionSet& ps, int n_bins) {
    const auto bins = reliability_bins(ps, n_bins);
    double acc = 0.0;
    for (const auto& b : bins)
        acc += static_cast<double>(b.count) / static_cast<double>(ps.size()) *
               std::fabs(b.avg_acc - b.avg_conf);
    return acc;
}

double nll_metric(const PredictionSet& ps) {
    double s = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        s += -std::log(std::max(ps.probs[i][static_cast<std::size_t>(ps.labels[i])], 1e-12));
    return s / static_cast<double>(ps.size());
}

double brier(const PredictionSet& ps) {
    double s = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t c = 0; c < ps.n_classes; ++c) {
            const double y = (static_cast<int>(c) == ps.labels[i]) ? 1.0 : 0.0;
            const double d = ps.probs[i][c] - y;
            s += d * d;
        }
    return s / static_cast<double>(ps.size());
}

double accuracy(const PredictionSet& ps) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps.correct(i)) ++c;
    return static_cast<double>(c) / static_cast<double>(ps.size());
}

double mcc(const PredictionSet& ps) {
    const std::size_t K = ps.n_classes, n = ps.size();
    std::vector<double> t(K, 0.0), p(K, 0.0);
    double correct = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t[static_cast<std::size_t>(ps.labels[i])] += 1.0;
        p[static_cast<std::size_t>(ps.predicted(i))] += 1.0;
        if (ps.correct(i)) correct += 1.0;
    }
    const double s = static_cast<double>(n);
    double tp_dot = 0.0, t2 = 0.0, p2 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        tp_dot += t[k] * p[k];
        t2 += t[k] * t[k];
        p2 += p[k] * p[k];
    }
    const double cov = correct * s - tp_dot;
    const double den = std::sqrt((s * s - p2) * (s * s - t2));
    if (den == 0.0) return 0.0; // a degenerate marginal carries no signal
    return cov / den;
}

// indices ordered by confidence descending; equal confidences keep their
// original order so the ranking is reproducible
static std::vector<std::size_t> conf_order(const PredictionSet& ps) {
    std::vector<std::size_t> ord(ps.size());
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(),
                     [&ps](std::size_t a, std::size_t b) {
                         return ps.confidence(a) > ps.confidence(b);
                     });
    return ord;
}

std::vector<std::pair<double, double>> risk_coverage(const PredictionSet& ps) {
    const auto ord = conf_order(ps);
    std::vector<std::pair<double, double>> out;
    out.reserve(ps.size());
    double errors = 0.0;
    for (std::size_t k = 0; k < ord.size(); ++k) {
        if (!ps.correct(ord[k])) errors += 1.0;
        out.emplace_back(static_cast<double>(k + 1) /
                             static_cast<double>(ord.size()),
                         errors / static_cast<double>(k + 1));
    }
    return out;
}

double aurc(const PredictionSet& ps) {
    const auto rc = risk_coverage(ps);
    double s = 0.0;
    for (const auto& [cov, risk] : rc) s += risk;
    return s / static_cast<double>(rc.size());
}

double binary_auroc(const std::vector<double>& pos_scores,
                    const std::vector<double>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty()) return 0.5;
    // average-rank formulation; midranks give ties half weight
    struct Item { double s; bool pos; };
    std::vector<Item> all;
    all.reserve(pos_scores.size() + neg_scores.size());
    for (double s : pos_scores) all.push_back({s, true});
    for (double s : neg_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Item& a, const Item& b) { return a.s < b.s; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].s == all[i].s) ++j;
        const double midrank =
            0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (all[k].pos) rank_sum_pos += midrank;
        i = j;
    }
    const double np = static_cast<double>(pos_scores.size());
    const double nn = static_cast<double>(neg_scores.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double binary_aupr(const std::vector<double>& pos_scores,
                   const std::vector<double>& neg_scores) {
    if (pos_scores.empty()) throw ContractError("aupr: no positives");
    struct Item { double s; bool pos; };
    std::vector<Item> all;
    all.reserve(pos_scores.size() + neg_scores.size());
    for (double s : pos_scores) all.push_back({s, true});
    for (double s : neg_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Item& a, const Item& b) { return a.s > b.s; });
    // walk thresholds at distinct scores; step contribution is
    // (recall gain) * precision at the threshold
    const double np = static_cast<double>(pos_scores.size());
    double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].s == all[i].s) ++j;
        for (std::size_t k = i; k < j; ++k)
            (all[k].pos ? tp : fp) += 1.0;
        const double recall = tp / np;
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double failure_auroc(const PredictionSet& ps) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < ps.size(); ++i)
        (ps.correct(i) ? pos : neg).push_back(ps.confidence(i));
    return binary_auroc(pos, neg);
}

double fpr_at_95_tpr(const PredictionSet& ps) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < ps.size(); ++i)
        (ps.correct(i) ? pos : neg).push_back(ps.confidence(i));
    if (pos.empty()) return 0.0; // no positives: TPR vacuously satisfied
    if (neg.empty()) return 0.0;
    std::vector<double> thresholds = pos;
    thresholds.insert(thresholds.end(), neg.begin(), neg.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                     thresholds.end());
    double best = 1.0; // threshold below every score always reaches TPR 1
    for (double th : thresholds) {
        std::size_t tp = 0, fpc = 0;
        for (double s : pos)
            if (s >= th) ++tp;
        for (double s : neg)
            if (s >= th) ++fpc;
        const double tpr = static_cast<double>(tp) / static_cast<double>(pos.size());
        const double fpr = static_cast<double>(fpc) / static_cast<double>(neg.size());
        if (tpr >= 0.95) best = std::min(best, fpr);
    }
    return best;
}

CalibrationReport calibration_report(const PredictionSet& ps, int n_bins) {
    CalibrationReport r;
    r.ece = ece(ps, n_bins);
    r.nll = nll_metric(ps);
    r.brier = brier(ps);
    r.acc = accuracy(ps);
    r.mcc = mcc(ps);
    r.aurc = aurc(ps);
    r.failure_auroc = failure_auroc(ps);
    r.fpr95 = fpr_at_95_tpr(ps);
    r.bins = reliability_bins(ps, n_bins);
    r.risk_cov = risk_coverage(ps);
    return r;
}

double msp_score(const std::vector<double>& probs) {
    return *std::max_element(probs.begin(), probs.end());
}

double neg_entropy_score(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return -h;
}

OodReport ood_report(const std::vector<std::vector<double>>& id_probs,
                     const std::vector<std::vector<double>>& ood_probs) {
    if (id_probs.empty() || ood_probs.empty())
        throw ContractError("ood_report: both sets must be non-empty");
    std::vector<double> id_msp, ood_msp, id_ent, ood_ent;
    for (const auto& p : id_probs) {
        id_msp.push_back(msp_score(p));
        id_ent.push_back(neg_entropy_score(p));
    }
    for (const auto& p : ood_probs) {
        ood_msp.push_back(msp_score(p));
        ood_ent.push_back(neg_entropy_score(p));
    }
    OodReport r;
    r.auroc_msp = binary_auroc(id_msp, ood_msp);
    r.aupr_msp = binary_aupr(id_msp, ood_msp);
    r.auroc_entropy = binary_auroc(id_ent, ood_ent);
    r.aupr_entropy = binary_aupr(id_ent, ood_ent);
    r.n_id = id_probs.size();
    r.n_ood = ood_probs.size();
    return r;
}

void write_predictions_csv(const PredictionSet& ps, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write predictions: " + path);
    for (std::size_t c = 0; c < ps.n_classes; ++c) f << "prob_" << c << ",";
    f << "label\n";
    f.precision(17);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t c = 0; c < ps.n_classes; ++c) f << ps.probs[i][c] << ",";
        f << ps.labels[i] << "\n";
    }
}

PredictionSet read_predictions_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read predictions: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ConfigError("empty predictions file: " + path);
    std::vector<std::vector<double>> probs;
    std::vector<int> labels;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() < 2)
            throw ConfigError("bad predictions row in " + path);
        labels.push_back(static_cast<int>(std::lround(row.back())));
        row.pop_back();
        probs.push_back(std::move(row));
    }
    return PredictionSet::from(std::move(probs), std::move(labels));
}

} // namespace diffcal
