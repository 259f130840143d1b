#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "diffcal/pipeline.hpp"

namespace {

using namespace diffcal;

struct CommonOpts {
    std::string config_file;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
    bool resume = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("-c,--config", o.config_file,
                    "config file (key = value lines)");
    sub->add_option("--seed", o.seed, "override config seed")
        ->each([&o](const std::string&) { o.seed_set = true; });
    sub->add_option("-o,--out", o.out, "override run directory")
        ->each([&o](const std::string&) { o.out_set = true; });
    sub->add_flag("--resume", o.resume,
                  "skip stages whose artifacts match the current config");
    sub->add_option("overrides", o.overrides,
                    "extra key=value config overrides");
}

RunConfig build_config(const CommonOpts& o) {
    RunConfig cfg;
    if (!o.config_file.empty()) cfg = parse_config_file(o.config_file);
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must look like key=value: " + kv);
        apply_config_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed_set) cfg.seed = o.seed;
    if (o.out_set) cfg.out = o.out;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "diffcal: train a toy transformer, reconfigure it into a stochastic "
        "chain, distill the chain into one timestep-conditioned transition "
        "model, and score the calibration"};
    app.require_subcommand(1);

    CommonOpts train_o, recon_o, distill_o, eval_o, ood_o, run_o, data_o;
    bool eval_dump = false, run_dump = false;
    std::string report_dir = "run";
    bool report_no_svg = false;

    auto* s_train = app.add_subcommand("train-backbone",
                                       "fit the classifier backbone");
    add_common(s_train, train_o);
    auto* s_recon = app.add_subcommand(
        "reconfigure", "rewrite the backbone as a transition chain and check "
                       "it reproduces the original network");
    add_common(s_recon, recon_o);
    auto* s_distill = app.add_subcommand(
        "distill", "fit the unified transition model against the chain");
    add_common(s_distill, distill_o);
    auto* s_eval = app.add_subcommand("eval", "calibration metric suite");
    add_common(s_eval, eval_o);
    s_eval->add_flag("--dump", eval_dump, "also write predictions.csv");
    auto* s_ood = app.add_subcommand("ood", "out-of-distribution separation");
    add_common(s_ood, ood_o);
    auto* s_run = app.add_subcommand("run", "all stages in order");
    add_common(s_run, run_o);
    s_run->add_flag("--dump", run_dump, "also write predictions.csv");
    auto* s_data =
        app.add_subcommand("gen-data", "write the train/test/ood splits as csv");
    add_common(s_data, data_o);
    auto* s_report = app.add_subcommand(
        "report", "render stored reports as a text table plus charts");
    s_report->add_option("-d,--dir", report_dir, "run directory");
    s_report->add_flag("--no-svg", report_no_svg, "skip chart output");
    auto* s_verify =
        app.add_subcommand("verify", "fast internal consistency checks");
    (void)s_verify;

    CLI11_PARSE(app, argc, argv);

    try {
        if (s_train->parsed()) {
            Pipeline p(build_config(train_o), train_o.resume);
            p.ensure_backbone();
            std::cout << "backbone ready in " << p.dir() << "\n";
        } else if (s_recon->parsed()) {
            Pipeline p(build_config(recon_o), recon_o.resume);
            p.ensure_reconfigure();
            std::cout << "reconfigure report in " << p.dir() << "\n";
        } else if (s_distill->parsed()) {
            Pipeline p(build_config(distill_o), distill_o.resume);
            p.ensure_distill();
            std::cout << "distilled model in " << p.dir() << "\n";
        } else if (s_eval->parsed()) {
            Pipeline p(build_config(eval_o), eval_o.resume);
            p.ensure_eval(eval_dump);
            std::cout << render_report(p.dir(), false);
        } else if (s_ood->parsed()) {
            Pipeline p(build_config(ood_o), ood_o.resume);
            p.ensure_ood();
            std::cout << "ood report in " << p.dir() << "\n";
        } else if (s_run->parsed()) {
            Pipeline p(build_config(run_o), run_o.resume);
            p.run_all(run_dump);
            std::cout << render_report(p.dir(), true);
        } else if (s_data->parsed()) {
            RunConfig cfg = build_config(data_o);
            Pipeline p(cfg, false);
            p.write_data_csv();
            std::cout << "datasets in " << p.dir() << "\n";
        } else if (s_report->parsed()) {
            std::cout << render_report(report_dir, !report_no_svg);
        } else if (s_verify->parsed()) {
            return verify_all(std::cout) ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
