#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "diffcal/config.hpp"
#include "diffcal/data.hpp"
#include "diffcal/distill.hpp"
#include "diffcal/kernel.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/path.hpp"

namespace diffcal {

// Stage artifacts inside the run directory. A stage is complete when its
// artifact exists and carries the current config hash; on resume such stages
// are skipped wholesale. Every random draw in a stage is derived from
// (config seed, stage label), never from execution history, so skipping or
// re-running stages cannot shift any other stage's stream.
//
//   config.snapshot           canonical config at first run
//   backbone.ckpt             trained weights
//   reconfigure_report.json   chain fidelity + layer correlations
//   kernel.ckpt               distilled transition model
//   distill_report.json       loss curves, bound, parameter counts
//   calibration_report.json   distilled + backbone metric suites
//   ood_report.json           separation scores
//   predictions.csv           optional probability dump
//   log.txt                   append-only progress log
class Pipeline {
public:
    Pipeline(RunConfig cfg, bool resume);
    ~Pipeline();

    // Each stage ensures its prerequisites first.
    void ensure_backbone();
    void ensure_reconfigure();
    void ensure_distill();
    void ensure_eval(bool dump_predictions);
    void ensure_ood();
    void run_all(bool dump_predictions);
    // train.csv / test.csv / ood.csv inside the run directory
    void write_data_csv();

    const std::string& dir() const { return dir_; }
    const RunConfig& cfg() const { return cfg_; }

private:
    void ensure_data();
    Backbone& backbone();
    TransitionKernel& kernel();
    std::vector<std::vector<double>> distilled_probs(const Dataset& ds,
                                                     const std::string& label);
    std::vector<std::vector<double>> backbone_probs(const Dataset& ds,
                                                    const std::string& label);
    bool artifact_fresh(const std::string& file) const;
    void write_json_atomic(const std::string& file,
                           const nlohmann::ordered_json& j) const;

    RunConfig cfg_;
    std::string dir_;
    std::string hash_;
    bool resume_;
    std::ofstream* log_ = nullptr;

    bool data_ready_ = false;
    Dataset train_, test_, ood_;
    Backbone bb_;
    bool bb_ready_ = false;
    TransitionKernel kernel_model_;
    bool kernel_ready_ = false;
};

// Reads a run directory and renders the stored reports: a plain-text metric
// table (scaled the way the numbers are usually quoted: ECE and error rates
// as percentages) plus reliability and risk-coverage SVG charts.
std::string render_report(const std::string& run_dir,
                          bool write_svg = true);

// Fast self-contained invariant checks; prints one line per check, returns
// false if any failed.
bool verify_all(std::ostream& out);

} // namespace diffcal
