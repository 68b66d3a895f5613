#include "nacforge/cli/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

namespace nac::cli {

namespace {

using nlohmann::json;

// Reads typed fields from one JSON object and rejects keys it never asked for.
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key);
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return obj_.at(key);
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        out = convert<T>(obj_.at(key), at(key));
    }

    template <class T>
    T convert(const json& v, const std::string& where) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where, "must be true or false");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where, "must be a string");
            return v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where, "must be a number");
            const double d = v.get<double>();
            if (!std::isfinite(d)) throw ConfigError(where, "must be finite");
            return d;
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
                throw ConfigError(where, "must be a non-negative integer");
            }
            return v.get<T>();
        } else {
            if (!v.is_number_integer()) throw ConfigError(where, "must be an integer");
            return v.get<T>();
        }
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

TaskKind task_from(const std::string& s, const std::string& where) {
    if (s == "jets") return TaskKind::Jets;
    if (s == "bragg") return TaskKind::Bragg;
    if (s == "toy") return TaskKind::Toy;
    throw ConfigError(where, "unknown task '" + s + "' (expected jets, bragg or toy)");
}

std::vector<std::vector<double>> table(Fields& f, const std::string& key) {
    std::vector<std::vector<double>> out;
    if (!f.has(key)) return out;
    const json& v = f.raw(key);
    if (!v.is_array()) throw ConfigError(f.at(key), "must be an array of arrays");
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string where = f.at(key) + "[" + std::to_string(i) + "]";
        if (!v[i].is_array() || v[i].empty()) throw ConfigError(where, "must be a non-empty array of numbers");
        std::vector<double> row;
        for (const auto& x : v[i]) row.push_back(f.convert<double>(x, where));
        out.push_back(std::move(row));
    }
    return out;
}

void parse_data(Fields& root, RunConfig& cfg, const std::filesystem::path& base) {
    if (!root.has("data")) return;
    Fields f(root.raw("data"), "data");
    f.get("source", cfg.data.source);
    f.get("n", cfg.data.n);
    if (f.has("separation")) cfg.data.separation = f.convert<double>(f.raw("separation"), f.at("separation"));
    f.get("bayes_accuracy", cfg.data.bayes_accuracy);
    f.get("noise_level", cfg.data.noise_level);
    if (f.has("path")) {
        std::filesystem::path p = f.convert<std::string>(f.raw("path"), f.at("path"));
        cfg.data.path = p.is_absolute() ? p : base / p;
    }
    f.finish();
}

void parse_global(Fields& root, RunConfig& cfg) {
    if (!root.has("global")) return;
    Fields f(root.raw("global"), "global");
    auto& g = cfg.global;
    f.get("enabled", g.enabled);
    f.get("strategy", g.strategy);
    f.get("budget", g.budget);
    f.get("pop_size", g.pop_size);
    f.get("crossover_prob", g.crossover_prob);
    f.get("mutation_rate", g.mutation_rate);
    f.get("stall_limit", g.stall_limit);
    f.get("proxy_epochs", g.proxy_epochs);
    f.get("proxy_train_size", g.proxy_train_size);
    f.get("learning_rate", g.learning_rate);
    f.get("batch_size", g.batch_size);
    f.get("select_k", g.select_k);
    f.finish();
}

void parse_hpo(Fields& root, RunConfig& cfg) {
    if (!root.has("hpo")) return;
    Fields f(root.raw("hpo"), "hpo");
    auto& h = cfg.hpo;
    f.get("enabled", h.enabled);
    f.get("budget", h.budget);
    f.get("epochs", h.epochs);
    f.get("gamma", h.settings.gamma);
    f.get("n_startup", h.settings.n_startup);
    f.get("n_candidates", h.settings.n_candidates);
    f.finish();
}

void parse_compress(Fields& root, RunConfig& cfg) {
    if (!root.has("compress")) return;
    Fields f(root.raw("compress"), "compress");
    auto& c = cfg.compress;
    f.get("enabled", c.enabled);
    if (f.has("bit_widths")) {
        const json& v = f.raw("bit_widths");
        if (!v.is_array()) throw ConfigError(f.at("bit_widths"), "must be an array of integers");
        c.plan.bit_widths.clear();
        for (const auto& b : v) c.plan.bit_widths.push_back(f.convert<int>(b, f.at("bit_widths")));
    }
    f.get("prune_fraction", c.plan.prune_fraction);
    f.get("iterations", c.plan.iterations);
    f.get("epochs_per_iter", c.plan.epochs_per_iter);
    if (f.has("scope")) {
        const auto s = f.convert<std::string>(f.raw("scope"), f.at("scope"));
        try {
            c.plan.scope = prune_scope_from_string(s);
        } catch (const SchemaError&) {
            throw ConfigError(f.at("scope"), "must be 'global' or 'per_layer'");
        }
    }
    f.get("tolerance", c.tolerance);
    f.finish();
}

void check(bool ok, const std::string& field, const std::string& reason) {
    if (!ok) throw ConfigError(field, reason);
}

void validate(const RunConfig& cfg) {
    const auto& d = cfg.data;
    check(d.source == "synthetic" || d.source == "file", "data.source", "must be 'synthetic' or 'file'");
    if (cfg.task != TaskKind::Toy) {
        if (d.source == "synthetic") {
            check(d.n >= 10, "data.n", "must be >= 10");
            if (d.separation) check(*d.separation >= 0.0, "data.separation", "must be >= 0");
            check(d.bayes_accuracy > 0.2 && d.bayes_accuracy < 1.0, "data.bayes_accuracy", "must lie in (0.2, 1)");
            check(d.noise_level >= 0.0, "data.noise_level", "must be >= 0");
        } else {
            check(!d.path.empty(), "data.path", "is required when data.source is 'file'");
            check(std::filesystem::is_regular_file(d.path), "data.path", "file '" + d.path.string() + "' does not exist");
        }
    }
    check(cfg.workers >= 1, "workers", "must be >= 1");

    const auto& g = cfg.global;
    check(g.strategy == "nsga2" || g.strategy == "random", "global.strategy", "must be 'nsga2' or 'random'");
    check(g.pop_size >= 2, "global.pop_size", "must be >= 2");
    check(g.budget >= g.pop_size, "global.budget", "must be >= global.pop_size");
    check(g.crossover_prob >= 0.0 && g.crossover_prob <= 1.0, "global.crossover_prob", "must lie in [0, 1]");
    check(g.mutation_rate >= 0.0 && g.mutation_rate <= 1.0, "global.mutation_rate", "must lie in [0, 1]");
    check(g.stall_limit >= 1, "global.stall_limit", "must be >= 1");
    check(g.proxy_epochs >= 1, "global.proxy_epochs", "must be >= 1");
    check(g.proxy_train_size >= 1, "global.proxy_train_size", "must be >= 1");
    check(g.learning_rate > 0.0, "global.learning_rate", "must be > 0");
    check(g.batch_size >= 1, "global.batch_size", "must be >= 1");
    check(g.select_k >= 1, "global.select_k", "must be >= 1");

    const auto& h = cfg.hpo;
    check(h.budget >= 1, "hpo.budget", "must be >= 1");
    check(h.epochs >= 1, "hpo.epochs", "must be >= 1");
    check(h.settings.gamma > 0.0 && h.settings.gamma < 1.0, "hpo.gamma", "must lie in (0, 1)");
    check(h.settings.n_candidates >= 1, "hpo.n_candidates", "must be >= 1");

    const auto& p = cfg.compress.plan;
    check(!p.bit_widths.empty(), "compress.bit_widths", "must not be empty");
    for (int b : p.bit_widths) check(is_supported_bit_width(b), "compress.bit_widths", "entries must be 4, 8, 16 or 32");
    check(p.prune_fraction > 0.0 && p.prune_fraction < 1.0, "compress.prune_fraction", "must lie in (0, 1)");
    check(p.iterations >= 1, "compress.iterations", "must be >= 1");
    check(p.epochs_per_iter >= 1, "compress.epochs_per_iter", "must be >= 1");
    check(cfg.compress.tolerance >= 0.0, "compress.tolerance", "must be >= 0");

    if (cfg.task == TaskKind::Toy) {
        check(!cfg.toy.error.empty(), "toy.error", "is required for the toy task");
        check(cfg.toy.error.size() == cfg.toy.bops.size(), "toy.bops", "must have one row per gene, like toy.error");
        for (std::size_t i = 0; i < cfg.toy.error.size(); ++i) {
            check(cfg.toy.error[i].size() == cfg.toy.bops[i].size(), "toy.bops[" + std::to_string(i) + "]",
                  "must have as many choices as toy.error[" + std::to_string(i) + "]");
            for (double b : cfg.toy.bops[i]) check(b >= 0.0, "toy.bops[" + std::to_string(i) + "]", "must be >= 0");
        }
    }
}

}  // namespace

std::string_view to_string(TaskKind t) {
    switch (t) {
        case TaskKind::Jets: return "jets";
        case TaskKind::Bragg: return "bragg";
        case TaskKind::Toy: return "toy";
    }
    return "jets";
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    Fields root(j, "");
    if (!root.has("version")) throw ConfigError("version", "is required");
    cfg.version = root.convert<int>(root.raw("version"), "version");
    if (cfg.version != kConfigVersion) {
        throw ConfigError("version", "unsupported version " + std::to_string(cfg.version) + " (expected " +
                                         std::to_string(kConfigVersion) + ")");
    }
    if (!root.has("task")) throw ConfigError("task", "is required");
    cfg.task = task_from(root.convert<std::string>(root.raw("task"), "task"), "task");
    if (!root.has("seed")) throw ConfigError("seed", "is required (seeds are never taken from the clock)");
    cfg.seed = root.convert<std::uint64_t>(root.raw("seed"), "seed");
    if (root.has("output_dir")) {
        std::filesystem::path p = root.convert<std::string>(root.raw("output_dir"), "output_dir");
        cfg.output_dir = p.is_absolute() ? p : base_dir / p;
    } else {
        cfg.output_dir = base_dir / cfg.output_dir;
    }
    root.get("workers", cfg.workers);
    parse_data(root, cfg, base_dir);
    parse_global(root, cfg);
    parse_hpo(root, cfg);
    parse_compress(root, cfg);
    if (root.has("toy")) {
        Fields f(root.raw("toy"), "toy");
        cfg.toy.error = table(f, "error");
        cfg.toy.bops = table(f, "bops");
        f.finish();
    }
    root.finish();
    validate(cfg);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

json run_config_to_json(const RunConfig& cfg) {
    json data{{"source", cfg.data.source},
              {"n", cfg.data.n},
              {"bayes_accuracy", cfg.data.bayes_accuracy},
              {"noise_level", cfg.data.noise_level}};
    if (cfg.data.separation) data["separation"] = *cfg.data.separation;
    if (!cfg.data.path.empty()) data["path"] = cfg.data.path.string();
    const auto& g = cfg.global;
    const auto& h = cfg.hpo;
    const auto& c = cfg.compress;
    json out{{"version", cfg.version},
             {"task", to_string(cfg.task)},
             {"seed", cfg.seed},
             {"output_dir", cfg.output_dir.string()},
             {"workers", cfg.workers},
             {"data", data},
             {"global",
              {{"enabled", g.enabled},
               {"strategy", g.strategy},
               {"budget", g.budget},
               {"pop_size", g.pop_size},
               {"crossover_prob", g.crossover_prob},
               {"mutation_rate", g.mutation_rate},
               {"stall_limit", g.stall_limit},
               {"proxy_epochs", g.proxy_epochs},
               {"proxy_train_size", g.proxy_train_size},
               {"learning_rate", g.learning_rate},
               {"batch_size", g.batch_size},
               {"select_k", g.select_k}}},
             {"hpo",
              {{"enabled", h.enabled},
               {"budget", h.budget},
               {"epochs", h.epochs},
               {"gamma", h.settings.gamma},
               {"n_startup", h.settings.n_startup},
               {"n_candidates", h.settings.n_candidates}}},
             {"compress",
              {{"enabled", c.enabled},
               {"bit_widths", c.plan.bit_widths},
               {"prune_fraction", c.plan.prune_fraction},
               {"iterations", c.plan.iterations},
               {"epochs_per_iter", c.plan.epochs_per_iter},
               {"scope", to_string(c.plan.scope)},
               {"tolerance", c.tolerance}}}};
    if (cfg.task == TaskKind::Toy) out["toy"] = {{"error", cfg.toy.error}, {"bops", cfg.toy.bops}};
    return out;
}

void apply_seed_override(RunConfig& cfg) {
    const char* env = std::getenv("NACFORGE_SEED");
    if (!env || !*env) return;
    const std::string text(env);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.front() == '-') {
        throw ConfigError("NACFORGE_SEED", "must be a non-negative integer, got '" + text + "'");
    }
    cfg.seed = v;
}

}  // namespace nac::cli
