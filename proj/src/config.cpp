#include "diffcal/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "diffcal/backbone.hpp"
#include "diffcal/errors.hpp"
#include "diffcal/sha256.hpp"

namespace diffcal {

namespace {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": not an integer: '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": not an unsigned integer: '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": not a number: '" + v + "'");
    }
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

std::string fmt(int x) { return std::to_string(x); }
std::string fmt(std::uint64_t x) { return std::to_string(x); }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v;
        auto str = [&v](const char* key, std::string RunConfig::*m) {
            v.push_back({key,
                         [m](const RunConfig& c) { return c.*m; },
                         [m](RunConfig& c, const std::string& s) { c.*m = s; }});
        };
        auto i32 = [&v](const char* key, int RunConfig::*m) {
            v.push_back({key,
                         [m](const RunConfig& c) { return fmt(c.*m); },
                         [key, m](RunConfig& c, const std::string& s) {
                             c.*m = parse_int(key, s);
                         }});
        };
        auto f64 = [&v](const char* key, double RunConfig::*m) {
            v.push_back({key,
                         [m](const RunConfig& c) { return fmt(c.*m); },
                         [key, m](RunConfig& c, const std::string& s) {
                             c.*m = parse_double(key, s);
                         }});
        };
        auto u64 = [&v](const char* key, std::uint64_t RunConfig::*m) {
            v.push_back({key,
                         [m](const RunConfig& c) { return fmt(c.*m); },
                         [key, m](RunConfig& c, const std::string& s) {
                             c.*m = parse_u64(key, s);
                         }});
        };
        str("task", &RunConfig::task);
        u64("seed", &RunConfig::seed);
        str("out", &RunConfig::out);
        str("data.kind", &RunConfig::data_kind);
        i32("data.n", &RunConfig::data_n);
        i32("data.classes", &RunConfig::data_classes);
        f64("data.spread", &RunConfig::data_spread);
        f64("data.noise", &RunConfig::data_noise);
        i32("data.grid", &RunConfig::data_grid);
        i32("data.seq_len", &RunConfig::data_seq_len);
        i32("data.vocab", &RunConfig::data_vocab);
        f64("data.test_frac", &RunConfig::test_frac);
        str("ood.kind", &RunConfig::ood_kind);
        str("backbone.attention", &RunConfig::attention);
        i32("backbone.depth", &RunConfig::depth);
        i32("backbone.d_model", &RunConfig::d_model);
        i32("backbone.n_heads", &RunConfig::n_heads);
        i32("backbone.d_head", &RunConfig::d_head);
        i32("backbone.s", &RunConfig::s_inducing);
        str("backbone.fusion", &RunConfig::fusion);
        i32("backbone.epochs", &RunConfig::backbone_epochs);
        i32("backbone.batch", &RunConfig::backbone_batch);
        f64("backbone.lr", &RunConfig::backbone_lr);
        f64("backbone.kl_weight", &RunConfig::kl_weight);
        i32("distill.epochs", &RunConfig::distill_epochs);
        i32("distill.batch", &RunConfig::distill_batch);
        f64("distill.lr", &RunConfig::distill_lr);
        f64("distill.lambda_mean", &RunConfig::lambda_mean);
        f64("distill.lambda_chol", &RunConfig::lambda_chol);
        f64("distill.lambda_nll", &RunConfig::lambda_nll);
        f64("kernel.dropout", &RunConfig::kernel_dropout);
        f64("optim.beta1", &RunConfig::beta1);
        f64("optim.beta2", &RunConfig::beta2);
        f64("optim.weight_decay", &RunConfig::weight_decay);
        f64("sched.min_lr", &RunConfig::min_lr);
        i32("sched.warmup", &RunConfig::warmup_epochs);
        i32("sched.cycle", &RunConfig::cycle_epochs);
        i32("eval.bins", &RunConfig::eval_bins);
        i32("eval.draws", &RunConfig::eval_draws);
        std::sort(v.begin(), v.end(),
                  [](const Field& a, const Field& b) { return a.key < b.key; });
        return v;
    }();
    return f;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

void apply_config_override(RunConfig& cfg, const std::string& key,
                           const std::string& value) {
    for (const auto& f : fields())
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) +
                              ": empty key or value");
        apply_config_override(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_text(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : fields()) os << f.key << " = " << f.get(cfg) << "\n";
    return os.str();
}

std::string config_hash(const RunConfig& cfg) {
    // "out" is bookkeeping, not experiment identity: the same config run in
    // two directories must produce byte-identical artifacts, hash included.
    std::ostringstream os;
    for (const auto& f : fields())
        if (f.key != "out") os << f.key << " = " << f.get(cfg) << "\n";
    return sha256_hex(os.str());
}

void RunConfig::validate() const {
    task_kind_from(task);          // throws on unknown
    attention_mode_from(attention);
    kep_fusion_from(fusion);
    if (data_n < 8) throw ConfigError("data.n too small");
    if (depth < 1) throw ConfigError("backbone.depth must be >= 1");
    if (d_model != n_heads * d_head)
        throw ConfigError("backbone.d_model must equal n_heads * d_head");
    if (test_frac <= 0.0 || test_frac >= 1.0)
        throw ConfigError("data.test_frac must be in (0,1)");
    if (eval_bins < 1) throw ConfigError("eval.bins must be >= 1");
    if (eval_draws < 1) throw ConfigError("eval.draws must be >= 1");
    if (backbone_epochs < 1 || distill_epochs < 1)
        throw ConfigError("epochs must be >= 1");
    if (data_kind != "blobs" && data_kind != "moons" && data_kind != "spiral" &&
        data_kind != "token-parity")
        throw ConfigError("unknown data.kind: " + data_kind);
}

LossWeights resolve_lambdas(const RunConfig& cfg) {
    const AttentionMode mode = attention_mode_from(cfg.attention);
    const bool stochastic =
        mode == AttentionMode::sgpa || mode == AttentionMode::kep;
    LossWeights w;
    w.mean = cfg.lambda_mean >= 0.0 ? cfg.lambda_mean : (stochastic ? 0.5 : 0.8);
    w.chol = cfg.lambda_chol >= 0.0 ? cfg.lambda_chol : (stochastic ? 0.2 : 0.0);
    w.nll = cfg.lambda_nll >= 0.0 ? cfg.lambda_nll : (stochastic ? 0.3 : 0.2);
    return w;
}

} // namespace diffcal
