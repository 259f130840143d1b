#include "diffcal/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace diffcal {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::vector<double> softmax_vec(const std::vector<double>& logits) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double s = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

ordered_json json_of_calibration(const CalibrationReport& r) {
    ordered_json j;
    j["ece"] = r.ece;
    j["nll"] = r.nll;
    j["brier"] = r.brier;
    j["acc"] = r.acc;
    j["mcc"] = r.mcc;
    j["aurc"] = r.aurc;
    j["failure_auroc"] = r.failure_auroc;
    j["fpr95"] = r.fpr95;
    ordered_json bins = ordered_json::array();
    for (const auto& b : r.bins) {
        ordered_json e;
        e["lo"] = b.lo;
        e["hi"] = b.hi;
        e["avg_conf"] = b.avg_conf;
        e["avg_acc"] = b.avg_acc;
        e["count"] = b.count;
        bins.push_back(std::move(e));
    }
    j["bins"] = std::move(bins);
    ordered_json rc = ordered_json::array();
    for (const auto& [c, risk] : r.risk_cov) rc.push_back({c, risk});
    j["risk_coverage"] = std::move(rc);
    return j;
}

BackboneConfig backbone_config_of(const RunConfig& cfg, const Dataset& train) {
    BackboneConfig bc;
    bc.task = task_kind_from(cfg.task);
    bc.mode = attention_mode_from(cfg.attention);
    bc.depth = cfg.depth;
    bc.d_model = cfg.d_model;
    bc.n_heads = cfg.n_heads;
    bc.d_head = cfg.d_head;
    bc.n_classes = train.n_classes;
    bc.grid = cfg.data_grid;
    bc.vocab = train.vocab;
    bc.seq_len = train.seq_len;
    bc.input_dim = train.feature_dim;
    bc.s_inducing = cfg.s_inducing;
    bc.fusion = kep_fusion_from(cfg.fusion);
    return bc;
}

KernelConfig kernel_config_of(const RunConfig& cfg) {
    KernelConfig kc;
    kc.d_model = cfg.d_model;
    kc.n_heads = cfg.n_heads;
    kc.d_head = cfg.d_head;
    kc.T = cfg.depth;
    kc.dropout = cfg.kernel_dropout;
    return kc;
}

int resolved_cycle(const RunConfig& cfg, int epochs) {
    if (cfg.cycle_epochs >= 1) return cfg.cycle_epochs;
    return std::max(1, epochs - cfg.warmup_epochs);
}

} // namespace

Pipeline::Pipeline(RunConfig cfg, bool resume)
    : cfg_(std::move(cfg)), resume_(resume) {
    cfg_.validate();
    dir_ = cfg_.out;
    hash_ = config_hash(cfg_);
    fs::create_directories(dir_);
    const std::string snap = dir_ + "/config.snapshot";
    const std::string canon = canonical_text(cfg_);
    if (fs::exists(snap)) {
        std::ifstream f(snap);
        std::stringstream ss;
        ss << f.rdbuf();
        if (ss.str() != canon)
            throw ConfigError(
                "run directory " + dir_ +
                " was created with a different config; use a fresh out dir");
    } else {
        std::ofstream f(snap, std::ios::trunc);
        f << canon;
    }
    log_ = new std::ofstream(dir_ + "/log.txt", std::ios::app);
}

Pipeline::~Pipeline() {
    delete log_;
}

bool Pipeline::artifact_fresh(const std::string& file) const {
    if (!resume_) return false;
    const std::string path = dir_ + "/" + file;
    if (!fs::exists(path)) return false;
    try {
        std::ifstream f(path, std::ios::binary);
        std::string line;
        if (!std::getline(f, line)) return false;
        // both checkpoints and reports open with a JSON object
        ordered_json j;
        if (file.ends_with(".json")) {
            std::stringstream ss;
            ss << line;
            ss << f.rdbuf();
            j = ordered_json::parse(ss.str());
        } else {
            j = ordered_json::parse(line);
        }
        return j.value("config_hash", "") == hash_;
    } catch (const std::exception&) {
        return false;
    }
}

void Pipeline::write_json_atomic(const std::string& file,
                                 const ordered_json& j) const {
    const std::string path = dir_ + "/" + file;
    {
        std::ofstream f(path + ".tmp", std::ios::trunc);
        if (!f) throw ConfigError("cannot write " + path);
        f << j.dump(2) << "\n";
    }
    fs::rename(path + ".tmp", path);
}

void Pipeline::ensure_data() {
    if (data_ready_) return;
    Rng base(cfg_.seed);
    Rng data_rng = base.stream("data");
    const TaskKind task = task_kind_from(cfg_.task);
    Dataset all;
    if (cfg_.data_kind == "token-parity") {
        if (task != TaskKind::toy_text)
            throw ConfigError("token-parity data needs task = toy-text");
        all = gen_token_parity(cfg_.data_n, cfg_.data_seq_len, cfg_.data_vocab,
                               data_rng);
    } else {
        if (task == TaskKind::toy_text)
            throw ConfigError("task toy-text needs data.kind = token-parity");
        const bool raster = task == TaskKind::toy_vision;
        if (cfg_.data_kind == "blobs")
            all = gen_blobs(cfg_.data_n, cfg_.data_classes, cfg_.data_spread,
                            cfg_.data_grid, data_rng, raster);
        else if (cfg_.data_kind == "moons")
            all = gen_moons(cfg_.data_n, cfg_.data_noise, cfg_.data_grid,
                            data_rng, raster);
        else
            all = gen_spiral(cfg_.data_n, cfg_.data_classes, cfg_.data_noise,
                             cfg_.data_grid, data_rng, raster);
    }
    Rng split_rng = base.stream("split");
    split_dataset(all, cfg_.test_frac, split_rng, train_, test_);
    Rng ood_rng = base.stream("ood-data");
    ood_ = gen_ood(test_, cfg_.ood_kind, ood_rng);
    data_ready_ = true;
    (*log_) << "data: " << train_.size() << " train / " << test_.size()
            << " test / " << ood_.size() << " ood\n";
}

Backbone& Pipeline::backbone() {
    if (bb_ready_) return bb_;
    throw ContractError("backbone requested before ensure_backbone");
}

TransitionKernel& Pipeline::kernel() {
    if (kernel_ready_) return kernel_model_;
    throw ContractError("kernel requested before ensure_distill");
}

void Pipeline::ensure_backbone() {
    ensure_data();
    if (bb_ready_) return;
    Rng base(cfg_.seed);
    Rng init_rng = base.stream("backbone-init");
    bb_ = make_backbone(backbone_config_of(cfg_, train_), init_rng);

    if (artifact_fresh("backbone.ckpt")) {
        apply_checkpoint(load_checkpoint(dir_ + "/backbone.ckpt"),
                         bb_.named_params());
        (*log_) << "backbone: restored from checkpoint\n";
        bb_ready_ = true;
        return;
    }
    FitConfig fc;
    fc.epochs = cfg_.backbone_epochs;
    fc.batch_size = cfg_.backbone_batch;
    fc.adam = {cfg_.backbone_lr, cfg_.beta1, cfg_.beta2, 1e-8,
               cfg_.weight_decay};
    fc.sched = {cfg_.backbone_lr, cfg_.min_lr, cfg_.warmup_epochs,
                resolved_cycle(cfg_, cfg_.backbone_epochs)};
    fc.kl_weight = cfg_.kl_weight;
    Rng train_rng = base.stream("backbone-train");
    const FitReport rep = train_backbone(bb_, train_, fc, train_rng, log_);
    (*log_) << "backbone: trained " << fc.epochs << " epochs in "
            << rep.wall_seconds << "s, final acc "
            << (rep.epoch_acc.empty() ? 0.0 : rep.epoch_acc.back()) << "\n";
    ordered_json meta;
    meta["kind"] = "backbone";
    meta["mode"] = cfg_.attention;
    save_checkpoint(dir_ + "/backbone.ckpt", bb_.named_params(), cfg_.seed,
                    hash_, meta);
    bb_ready_ = true;
}

void Pipeline::ensure_reconfigure() {
    ensure_backbone();
    if (artifact_fresh("reconfigure_report.json")) return;
    const ProbabilityPath path = repartition(bb_);
    NoGradGuard ng;
    double max_diff = 0.0;
    const std::size_t n_check = std::min<std::size_t>(64, test_.size());
    for (std::size_t i = 0; i < n_check; ++i) {
        const Tensor a = backbone_logits(bb_, test_.samples[i]);
        const Tensor b = path_logits_zero_noise(path, test_.samples[i]);
        for (std::size_t c = 0; c < a.size(); ++c)
            max_diff = std::max(max_diff, std::fabs(a[c] - b[c]));
    }
    Rng base(cfg_.seed);
    Rng corr_rng = base.stream("reconfigure-corr");
    std::vector<Sample> subset;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, test_.size()); ++i)
        subset.push_back(test_.samples[i]);
    const LayerCorrelation lc =
        correlation_diagnostic(bb_, path, subset, 3, corr_rng);

    ordered_json j;
    j["config_hash"] = hash_;
    j["seed"] = cfg_.seed;
    j["depth"] = cfg_.depth;
    j["n_inputs"] = n_check;
    j["max_abs_logit_diff"] = max_diff;
    j["zero_noise_corr"] = lc.zero_noise;
    j["sampled_corr"] = lc.sampled;
    write_json_atomic("reconfigure_report.json", j);
    (*log_) << "reconfigure: max |logit diff| " << max_diff << "\n";
}

void Pipeline::ensure_distill() {
    ensure_reconfigure();
    if (kernel_ready_) return;
    Rng base(cfg_.seed);
    Rng kinit = base.stream("kernel-init");
    kernel_model_ = make_kernel(kernel_config_of(cfg_), kinit);

    if (artifact_fresh("distill_report.json") &&
        artifact_fresh("kernel.ckpt")) {
        apply_checkpoint(load_checkpoint(dir_ + "/kernel.ckpt"),
                         kernel_model_.named_params());
        (*log_) << "distill: restored kernel from checkpoint\n";
        kernel_ready_ = true;
        return;
    }

    const ProbabilityPath path = repartition(bb_);
    const LossWeights lw = resolve_lambdas(cfg_);
    DistillConfig dc;
    dc.epochs = cfg_.distill_epochs;
    dc.batch_size = cfg_.distill_batch;
    dc.adam = {cfg_.distill_lr, cfg_.beta1, cfg_.beta2, 1e-8,
               cfg_.weight_decay};
    dc.sched = {cfg_.distill_lr, cfg_.min_lr, cfg_.warmup_epochs,
                resolved_cycle(cfg_, cfg_.distill_epochs)};
    dc.lambda_mean = lw.mean;
    dc.lambda_chol = lw.chol;
    dc.lambda_nll = lw.nll;
    Rng train_rng = base.stream("distill-train");
    const DistillReport rep =
        distill_train(path, kernel_model_, train_, dc, train_rng, log_);

    ordered_json meta;
    meta["kind"] = "kernel";
    save_checkpoint(dir_ + "/kernel.ckpt", kernel_model_.named_params(),
                    cfg_.seed, hash_, meta);

    ordered_json j;
    j["config_hash"] = hash_;
    j["seed"] = cfg_.seed;
    j["lambda_mean"] = lw.mean;
    j["lambda_chol"] = rep.lambda_chol_forced_zero ? 0.0 : lw.chol;
    j["lambda_nll"] = lw.nll;
    j["lambda_chol_forced_zero"] = rep.lambda_chol_forced_zero;
    j["epochs"] = dc.epochs;
    j["epoch_mean"] = rep.epoch_mean;
    j["epoch_chol"] = rep.epoch_chol;
    j["epoch_nll"] = rep.epoch_nll;
    j["epoch_total"] = rep.epoch_total;
    j["final_bound"] = rep.final_bound;
    j["final_bound_se"] = rep.final_bound_se;
    j["bound_kl_exact"] = rep.bound_kl_exact;
    j["kernel_params"] = rep.kernel_params;
    j["backbone_params"] = rep.backbone_params;
    j["wall_seconds"] = rep.wall_seconds;
    write_json_atomic("distill_report.json", j);
    (*log_) << "distill: kernel " << rep.kernel_params << " params vs backbone "
            << rep.backbone_params << ", final total "
            << (rep.epoch_total.empty() ? 0.0 : rep.epoch_total.back())
            << "\n";
    kernel_ready_ = true;
}

std::vector<std::vector<double>> Pipeline::distilled_probs(
    const Dataset& ds, const std::string& label) {
    NoGradGuard ng;
    const ProbabilityPath path = repartition(bb_);
    Rng base(cfg_.seed);
    std::vector<std::vector<double>> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Tensor x_top = path_embed(path, ds.samples[i]);
        std::vector<double> acc(static_cast<std::size_t>(bb_.cfg.n_classes),
                                0.0);
        for (int d = 0; d < cfg_.eval_draws; ++d) {
            Rng draw = base.stream("eval-" + label,
                                   i * 1000003ULL + static_cast<std::uint64_t>(d));
            const KernelChain ch =
                kernel_generate(kernel_model_, x_top, true, &draw, nullptr);
            const Tensor logits = path_head_logits(path, ch.states.back());
            const auto p = softmax_vec(logits.value());
            for (std::size_t c = 0; c < p.size(); ++c) acc[c] += p[c];
        }
        for (auto& v : acc) v /= static_cast<double>(cfg_.eval_draws);
        check_finite(acc, "distilled probabilities");
        out.push_back(std::move(acc));
    }
    return out;
}

std::vector<std::vector<double>> Pipeline::backbone_probs(
    const Dataset& ds, const std::string& label) {
    NoGradGuard ng;
    Rng base(cfg_.seed);
    const bool stochastic = bb_.cfg.stochastic();
    const int draws = stochastic ? cfg_.eval_draws : 1;
    std::vector<std::vector<double>> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Tensor x_top = embed_input(bb_, ds.samples[i]);
        std::vector<double> acc(static_cast<std::size_t>(bb_.cfg.n_classes),
                                0.0);
        for (int d = 0; d < draws; ++d) {
            Rng draw = base.stream("eval-bb-" + label,
                                   i * 1000003ULL + static_cast<std::uint64_t>(d));
            const BackboneTrace tr =
                backbone_forward(bb_, x_top, stochastic, &draw);
            const auto p = softmax_vec(tr.logits.value());
            for (std::size_t c = 0; c < p.size(); ++c) acc[c] += p[c];
        }
        for (auto& v : acc) v /= static_cast<double>(draws);
        out.push_back(std::move(acc));
    }
    return out;
}

void Pipeline::ensure_eval(bool dump_predictions) {
    ensure_distill();
    const bool csv_ok =
        !dump_predictions || fs::exists(dir_ + "/predictions.csv");
    if (artifact_fresh("calibration_report.json") && csv_ok) return;

    const auto dist_probs = distilled_probs(test_, "id");
    const auto bb_probs = backbone_probs(test_, "id");
    const auto dist_set = PredictionSet::from(dist_probs, [this] {
        std::vector<int> l;
        for (const auto& s : test_.samples) l.push_back(s.label);
        return l;
    }());
    const auto bb_set = PredictionSet::from(bb_probs, dist_set.labels);

    const CalibrationReport dist_rep =
        calibration_report(dist_set, cfg_.eval_bins);
    const CalibrationReport bb_rep = calibration_report(bb_set, cfg_.eval_bins);

    // single-draw diagnostic: how much the probability averaging buys
    std::vector<std::vector<double>> one_draw;
    {
        const int saved = cfg_.eval_draws;
        cfg_.eval_draws = 1;
        one_draw = distilled_probs(test_, "id");
        cfg_.eval_draws = saved;
    }
    const double ece_1 =
        ece(PredictionSet::from(one_draw, dist_set.labels), cfg_.eval_bins);

    if (dump_predictions)
        write_predictions_csv(dist_set, dir_ + "/predictions.csv");

    ordered_json j;
    j["config_hash"] = hash_;
    j["seed"] = cfg_.seed;
    j["n_test"] = test_.size();
    j["n_draws"] = cfg_.eval_draws;
    j["distilled"] = json_of_calibration(dist_rep);
    j["backbone"] = json_of_calibration(bb_rep);
    j["diagnostics"]["distilled_ece_1draw"] = ece_1;
    write_json_atomic("calibration_report.json", j);
    (*log_) << "eval: distilled acc " << dist_rep.acc << " ece " << dist_rep.ece
            << " | backbone acc " << bb_rep.acc << " ece " << bb_rep.ece
            << "\n";
}

void Pipeline::ensure_ood() {
    ensure_distill();
    if (artifact_fresh("ood_report.json")) return;
    const auto id_dist = distilled_probs(test_, "id");
    const auto ood_dist = distilled_probs(ood_, "ood");
    const auto id_bb = backbone_probs(test_, "id");
    const auto ood_bb = backbone_probs(ood_, "ood");
    const OodReport d = ood_report(id_dist, ood_dist);
    const OodReport b = ood_report(id_bb, ood_bb);

    ordered_json j;
    j["config_hash"] = hash_;
    j["seed"] = cfg_.seed;
    j["ood_kind"] = cfg_.ood_kind;
    j["n_id"] = d.n_id;
    j["n_ood"] = d.n_ood;
    j["distilled"]["msp"] = {{"auroc", d.auroc_msp}, {"aupr", d.aupr_msp}};
    j["distilled"]["entropy"] = {{"auroc", d.auroc_entropy},
                                 {"aupr", d.aupr_entropy}};
    j["backbone"]["msp"] = {{"auroc", b.auroc_msp}, {"aupr", b.aupr_msp}};
    j["backbone"]["entropy"] = {{"auroc", b.auroc_entropy},
                                {"aupr", b.aupr_entropy}};
    write_json_atomic("ood_report.json", j);
    (*log_) << "ood: distilled msp auroc " << d.auroc_msp << " entropy auroc "
            << d.auroc_entropy << "\n";
}

void Pipeline::write_data_csv() {
    ensure_data();
    write_dataset_csv(train_, dir_ + "/train.csv");
    write_dataset_csv(test_, dir_ + "/test.csv");
    write_dataset_csv(ood_, dir_ + "/ood.csv");
}

void Pipeline::run_all(bool dump_predictions) {
    const auto t0 = std::chrono::steady_clock::now();
    ensure_backbone();
    ensure_reconfigure();
    ensure_distill();
    ensure_eval(dump_predictions);
    ensure_ood();
    const auto t1 = std::chrono::steady_clock::now();
    (*log_) << "pipeline: complete in "
            << std::chrono::duration<double>(t1 - t0).count() << "s\n";
}

// ---- reporting ----

namespace {

std::string svg_reliability(const ordered_json& bins) {
    std::ostringstream os;
    const int W = 420, H = 420, M = 50;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
       << "' height='" << H << "'>\n";
    os << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    auto px = [&](double x) { return M + x * (W - 2 * M); };
    auto py = [&](double y) { return H - M - y * (H - 2 * M); };
    os << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(1)
       << "' y2='" << py(1) << "' stroke='#999' stroke-dasharray='4'/>\n";
    for (const auto& b : bins) {
        const double lo = b["lo"].get<double>(), hi = b["hi"].get<double>();
        const std::size_t count = b["count"].get<std::size_t>();
        if (count == 0) continue;
        const double acc = b["avg_acc"].get<double>();
        os << "<rect x='" << px(lo) << "' y='" << py(acc) << "' width='"
           << (px(hi) - px(lo)) - 1.0 << "' height='" << (py(0) - py(acc))
           << "' fill='#4477aa' fill-opacity='0.7'/>\n";
    }
    os << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(1)
       << "' y2='" << py(0) << "' stroke='black'/>\n";
    os << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(0)
       << "' y2='" << py(1) << "' stroke='black'/>\n";
    os << "<text x='" << W / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='13'>confidence</text>\n";
    os << "<text x='14' y='" << H / 2
       << "' text-anchor='middle' font-size='13' transform='rotate(-90 14 "
       << H / 2 << ")'>accuracy</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_risk_coverage(const ordered_json& rc_dist,
                              const ordered_json& rc_bb) {
    std::ostringstream os;
    const int W = 420, H = 420, M = 50;
    double max_risk = 1e-9;
    for (const auto& p : rc_dist)
        max_risk = std::max(max_risk, p[1].get<double>());
    for (const auto& p : rc_bb)
        max_risk = std::max(max_risk, p[1].get<double>());
    auto px = [&](double x) { return M + x * (W - 2 * M); };
    auto py = [&](double y) { return H - M - (y / max_risk) * (H - 2 * M); };
    auto polyline = [&](const ordered_json& rc, const char* color) {
        std::ostringstream pl;
        pl << "<polyline fill='none' stroke='" << color
           << "' stroke-width='1.5' points='";
        for (const auto& p : rc)
            pl << px(p[0].get<double>()) << "," << py(p[1].get<double>())
               << " ";
        pl << "'/>\n";
        return pl.str();
    };
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
       << "' height='" << H << "'>\n";
    os << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    os << polyline(rc_dist, "#4477aa") << polyline(rc_bb, "#cc6677");
    os << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(1)
       << "' y2='" << py(0) << "' stroke='black'/>\n";
    os << "<line x1='" << px(0) << "' y1='" << py(0) << "' x2='" << px(0)
       << "' y2='" << py(max_risk) << "' stroke='black'/>\n";
    os << "<text x='" << W / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='13'>coverage</text>\n";
    os << "<text x='14' y='" << H / 2
       << "' text-anchor='middle' font-size='13' transform='rotate(-90 14 "
       << H / 2 << ")'>risk</text>\n";
    os << "<text x='" << W - M << "' y='" << M
       << "' text-anchor='end' font-size='12' fill='#4477aa'>distilled</text>\n";
    os << "<text x='" << W - M << "' y='" << M + 16
       << "' text-anchor='end' font-size='12' fill='#cc6677'>backbone</text>\n";
    os << "</svg>\n";
    return os.str();
}

ordered_json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("missing report: " + path);
    ordered_json j;
    f >> j;
    return j;
}

} // namespace

std::string render_report(const std::string& run_dir, bool write_svg) {
    const ordered_json cal = load_json(run_dir + "/calibration_report.json");
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    auto row = [&os](const std::string& name, const ordered_json& m) {
        // percentages for rates, raw for the rest, matching how these
        // numbers are normally quoted
        os << "  " << name << "  acc " << 100.0 * m["acc"].get<double>()
           << "%  ece " << 100.0 * m["ece"].get<double>() << "%  nll "
           << m["nll"].get<double>() << "  brier " << m["brier"].get<double>()
           << "  mcc " << m["mcc"].get<double>() << "  aurc(x100) "
           << 100.0 * m["aurc"].get<double>() << "  f-auroc "
           << 100.0 * m["failure_auroc"].get<double>() << "%  fpr95 "
           << 100.0 * m["fpr95"].get<double>() << "%\n";
    };
    os << "calibration (" << cal["n_test"].get<std::size_t>() << " samples, "
       << cal["n_draws"].get<int>() << " draws)\n";
    row("distilled", cal["distilled"]);
    row("backbone ", cal["backbone"]);
    os << "  single-draw distilled ece "
       << 100.0 * cal["diagnostics"]["distilled_ece_1draw"].get<double>()
       << "%\n";

    const std::string ood_path = run_dir + "/ood_report.json";
    if (fs::exists(ood_path)) {
        const ordered_json ood = load_json(ood_path);
        os << "ood (" << ood["ood_kind"].get<std::string>() << ", "
           << ood["n_ood"].get<std::size_t>() << " samples)\n";
        auto orow = [&os](const std::string& name, const ordered_json& m) {
            os << "  " << name << "  msp auroc "
               << 100.0 * m["msp"]["auroc"].get<double>() << "%  msp aupr "
               << 100.0 * m["msp"]["aupr"].get<double>() << "%  ent auroc "
               << 100.0 * m["entropy"]["auroc"].get<double>()
               << "%  ent aupr " << 100.0 * m["entropy"]["aupr"].get<double>()
               << "%\n";
        };
        orow("distilled", ood["distilled"]);
        orow("backbone ", ood["backbone"]);
    }

    if (write_svg) {
        {
            std::ofstream f(run_dir + "/reliability.svg", std::ios::trunc);
            f << svg_reliability(cal["distilled"]["bins"]);
        }
        {
            std::ofstream f(run_dir + "/risk_coverage.svg", std::ios::trunc);
            f << svg_risk_coverage(cal["distilled"]["risk_coverage"],
                                   cal["backbone"]["risk_coverage"]);
        }
        os << "wrote reliability.svg and risk_coverage.svg\n";
    }
    return os.str();
}

} // namespace diffcal
