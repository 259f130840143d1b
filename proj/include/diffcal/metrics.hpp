#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace diffcal {

// A batch of categorical predictions. Rows must be proper distributions
// (nonnegative, summing to 1 within 1e-9) and labels must be in range; the
// factory enforces both.
struct PredictionSet {
    std::size_t n_classes = 0;
    std::vector<std::vector<double>> probs;
    std::vector<int> labels;

    static PredictionSet from(std::vector<std::vector<double>> probs,
                              std::vector<int> labels);
    std::size_t size() const { return labels.size(); }
    // argmax with lowest index winning ties
    int predicted(std::size_t i) const;
    double confidence(std::size_t i) const; // max prob
    bool correct(std::size_t i) const;
};

struct ReliabilityBin {
    double lo = 0, hi = 0;     // confidence interval (lo, hi]
    double avg_conf = 0;
    double avg_acc = 0;
    std::size_t count = 0;
};

// Equal-width bins over (0, 1]; ECE is the count-weighted mean absolute gap
// between per-bin confidence and accuracy.
double ece(const PredictionSet& ps, int n_bins = 15);
std::vector<ReliabilityBin> reliability_bins(const PredictionSet& ps,
                                             int n_bins = 15);
// Mean negative log of the label probability, floored at 1e-12.
double nll_metric(const PredictionSet& ps);
// Multiclass: mean over samples of the squared distance to the one-hot label.
double brier(const PredictionSet& ps);
double accuracy(const PredictionSet& ps);
// Multiclass correlation coefficient; 0 when any marginal vanishes.
double mcc(const PredictionSet& ps);
// Samples ordered by confidence descending (ties keep input order);
// risk@k = errors in the top k over k; the value is the mean over all k.
double aurc(const PredictionSet& ps);
std::vector<std::pair<double, double>> risk_coverage(const PredictionSet& ps);
// Probability that a correct prediction out-scores an incorrect one, ties at
// half weight; 0.5 when either group is empty (no ordering evidence).
double failure_auroc(const PredictionSet& ps);
// Smallest false-positive rate over thresholds whose true-positive rate
// (correct predictions scored above threshold) reaches 0.95.
double fpr_at_95_tpr(const PredictionSet& ps);

struct CalibrationReport {
    double ece = 0, nll = 0, brier = 0, acc = 0, mcc = 0;
    double aurc = 0, failure_auroc = 0, fpr95 = 0;
    std::vector<ReliabilityBin> bins;
    std::vector<std::pair<double, double>> risk_cov;
};
CalibrationReport calibration_report(const PredictionSet& ps, int n_bins = 15);

// ---- OOD separation; in-distribution is the positive class ----
double msp_score(const std::vector<double>& probs);         // max prob
double neg_entropy_score(const std::vector<double>& probs); // -H(p)
double binary_auroc(const std::vector<double>& pos_scores,
                    const std::vector<double>& neg_scores);
// Step-integrated precision over recall, thresholds descending by score.
double binary_aupr(const std::vector<double>& pos_scores,
                   const std::vector<double>& neg_scores);

struct OodReport {
    double auroc_msp = 0, aupr_msp = 0;
    double auroc_entropy = 0, aupr_entropy = 0;
    std::size_t n_id = 0, n_ood = 0;
};
OodReport ood_report(const std::vector<std::vector<double>>& id_probs,
                     const std::vector<std::vector<double>>& ood_probs);

// prob_0,...,prob_{C-1},label per line, header included.
void write_predictions_csv(const PredictionSet& ps, const std::string& path);
PredictionSet read_predictions_csv(const std::string& path);

} // namespace diffcal
