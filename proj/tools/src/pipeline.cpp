#include "nacforge/cli/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nacforge/checkpoint.hpp"
#include "nacforge/cost_model.hpp"
#include "nacforge/csv.hpp"
#include "nacforge/rng.hpp"

namespace nac::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Dataset proxy_subset(const Dataset& d, std::size_t n) {
    if (n >= d.n) return d;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return d.subset(idx);
}

TrainConfig proxy_train_config(const GlobalStage& g) {
    TrainConfig tc;
    tc.learning_rate = g.learning_rate;
    tc.batch_size = g.batch_size;
    tc.epochs = g.proxy_epochs;
    return tc;
}

json train_config_json(const TrainConfig& tc) {
    return {{"learning_rate", tc.learning_rate}, {"weight_decay", tc.weight_decay},
            {"batch_size", tc.batch_size},       {"epochs", tc.epochs},
            {"lr_schedule", to_string(tc.lr_schedule)}, {"seed", tc.seed}};
}

std::string checkpoint_name(int bits, int iteration) {
    return "b" + std::to_string(bits) + "_i" + std::to_string(iteration) + ".nacf";
}

// Shared tail of local and compress: curves, checkpoints, choice, summary.
void finish_compression(const RunConfig& cfg, const PreparedData& data, LocalOutcome& o, const ParamStore& dense,
                        const TrainConfig& base, const fs::path& dir, std::ostream& log) {
    const Task task = o.arch.task;
    const fs::path ckdir = dir / "checkpoints";
    fs::create_directories(ckdir);
    save_checkpoint({o.arch, dense}, (ckdir / "dense.nacf").string());

    const double dense_val = evaluate(o.arch, dense, data.splits.val);
    const double dense_test = evaluate(o.arch, dense, data.splits.test);
    json summary{{"name", o.name},
                 {"task", to_string(task)},
                 {"params", count_params(o.arch)},
                 {"dense",
                  {{"checkpoint", "checkpoints/dense.nacf"},
                   {"val_metric", dense_val},
                   {"test_metric", dense_test},
                   {"bops", bops_model(o.arch).total}}}};

    if (cfg.compress.enabled) {
        CompressionPlan plan = cfg.compress.plan;
        plan.workers = cfg.workers;
        log << "  compress " << o.name << ": " << plan.bit_widths.size() << " widths x " << plan.iterations
            << " iterations\n";
        o.curves = run_compression(o.arch, dense, data.splits.train, data.splits.val, plan, base,
                                   derive_seed(cfg.seed, "compress/" + o.name));
        write_text(dir / "curves.csv", curves_csv(o.curves));
        for (const auto& c : o.curves) {
            for (const auto& p : c.points) {
                save_checkpoint({o.arch, p.params}, (ckdir / checkpoint_name(p.bit_width, p.iteration)).string());
            }
        }
        o.choice = select_compressed(o.curves, cfg.compress.tolerance, metric_sense(task));
        const auto& ch = *o.choice;
        const ParamStore* chosen = nullptr;
        for (const auto& c : o.curves) {
            if (c.bit_width != ch.bit_width) continue;
            chosen = &c.points[static_cast<std::size_t>(ch.iteration)].params;
        }
        summary["chosen"] = {{"bit_width", ch.bit_width},
                             {"iteration", ch.iteration},
                             {"sparsity", ch.sparsity},
                             {"val_metric", ch.metric},
                             {"test_metric", evaluate(o.arch, *chosen, data.splits.test)},
                             {"bops", ch.bops},
                             {"fallback", ch.fallback},
                             {"tolerance", cfg.compress.tolerance},
                             {"checkpoint", "checkpoints/" + checkpoint_name(ch.bit_width, ch.iteration)}};
    }
    o.summary = std::move(summary);
}

}  // namespace

Task task_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::Bragg: return Task::PatchRegression;
        case TaskKind::Jets: return Task::SetClassification;
        case TaskKind::Toy: break;
    }
    throw ConfigError("task", "the toy task has no dataset");
}

PreparedData prepare_data(const RunConfig& cfg) {
    PreparedData out;
    out.task = task_of(cfg.task);
    const auto& d = cfg.data;
    const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
    json params;
    Dataset all;
    if (d.source == "file") {
        all = out.task == Task::SetClassification ? make_dataset(load_sets(d.path.string()))
                                                  : make_dataset(load_patches(d.path.string()));
        params = {{"path", d.path.filename().string()}};
    } else if (out.task == Task::SetClassification) {
        const double sep = d.separation ? *d.separation : separation_for_bayes_accuracy(d.bayes_accuracy);
        all = make_dataset(gen_jets(d.n, data_seed, sep));
        params = {{"separation", sep}};
        if (!d.separation) params["bayes_accuracy_target"] = d.bayes_accuracy;
    } else {
        all = make_dataset(gen_bragg(d.n, data_seed, d.noise_level));
        params = {{"noise_level", d.noise_level}};
    }
    if (all.n < 10) throw EmptyDataset("need at least 10 samples, got " + std::to_string(all.n));
    out.splits = split_dataset(all, derive_seed(cfg.seed, "split"));
    out.standardizer = fit_standardizer(out.splits.train);
    out.standardizer.apply(out.splits.train);
    out.standardizer.apply(out.splits.val);
    out.standardizer.apply(out.splits.test);
    out.manifest = {{"kind", to_string(cfg.task)},
                    {"source", d.source},
                    {"n", all.n},
                    {"seed", cfg.seed},
                    {"params", params},
                    {"splits", {{"train", out.splits.train.n}, {"val", out.splits.val.n}, {"test", out.splits.test.n}}},
                    {"standardization", out.standardizer.to_json()}};
    return out;
}

SpaceDef toy_space_for(const RunConfig& cfg) {
    std::vector<GeneDef> genes;
    for (std::size_t i = 0; i < cfg.toy.error.size(); ++i) {
        std::vector<int> values(cfg.toy.error[i].size());
        std::iota(values.begin(), values.end(), 0);
        genes.push_back(GeneDef::integer("g" + std::to_string(i), values));
    }
    return custom_space(std::move(genes));
}

Evaluator toy_evaluator_for(const RunConfig& cfg) {
    const auto toy = cfg.toy;
    return [toy](const Genome& g, std::uint64_t) {
        EvalOutcome o;
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            o.error += toy.error[i][g.values[i]];
            o.bops += toy.bops[i][g.values[i]];
        }
        return o;
    };
}

GlobalOutcome run_global_stage(const RunConfig& cfg, const PreparedData* data) {
    const auto& g = cfg.global;
    SpaceDef space;
    Evaluator eval;
    if (cfg.task == TaskKind::Toy) {
        space = toy_space_for(cfg);
        eval = toy_evaluator_for(cfg);
    } else {
        if (!data) throw ConfigError("data", "global search needs a dataset");
        space = space_for(data->task);
        NasEvalConfig nc;
        nc.train = proxy_train_config(g);
        nc.train_set = proxy_subset(data->splits.train, g.proxy_train_size);
        nc.val_set = data->splits.val;
        eval = make_nas_evaluator(space, std::move(nc));
    }
    Rng rng(derive_seed(cfg.seed, "global"));
    GlobalOutcome out;
    if (g.strategy == "random") {
        out.result = run_random_search(space, g.budget, cfg.workers, rng, eval);
    } else {
        GlobalSearchConfig sc;
        sc.budget = g.budget;
        sc.pop_size = g.pop_size;
        sc.crossover_prob = g.crossover_prob;
        sc.mutation_rate = g.mutation_rate;
        sc.workers = cfg.workers;
        sc.stall_limit = g.stall_limit;
        out.result = run_global_search(space, sc, rng, eval);
    }
    const std::size_t k = std::min(g.select_k, out.result.archive.size());
    if (k > 0) out.selected = select_by_bops(out.result.archive, k);
    return out;
}

void write_global_outputs(const GlobalOutcome& g, const RunConfig& cfg, const fs::path& out_dir) {
    const fs::path dir = out_dir / "global";
    fs::create_directories(dir / "selected");
    write_text(dir / "trials.csv", trial_log_csv(g.result.trials));
    write_json(dir / "archive.json", archive_to_json(g.result.archive));
    std::optional<SpaceDef> space;
    if (cfg.task != TaskKind::Toy) space = space_for(task_of(cfg.task));
    for (const auto& s : g.selected) {
        json j{{"name", s.name},
               {"genome", genome_to_json(s.candidate.genome)},
               {"error", s.candidate.error},
               {"bops", s.candidate.bops}};
        if (space) j["architecture"] = arch_to_json(decode(*space, s.candidate.genome));
        write_json(dir / "selected" / (s.name + ".json"), j);
    }
}

ArchDescriptor read_arch_file(const std::string& path_or_name) {
    ArchDescriptor arch;
    if (!fs::exists(path_or_name)) {
        const auto names = builtin_model_names();
        if (std::find(names.begin(), names.end(), path_or_name) == names.end()) {
            throw ConfigError("architecture", "'" + path_or_name + "' is neither a file nor a built-in model");
        }
        return builtin_model(path_or_name);
    }
    const json j = read_json(path_or_name);
    try {
        arch = arch_from_json(j.is_object() && j.contains("architecture") ? j.at("architecture") : j);
    } catch (const SchemaError& e) {
        throw ConfigError("architecture", path_or_name + ": " + e.what());
    }
    const auto issues = validate(arch);
    if (!issues.empty()) {
        throw ConfigError("architecture", path_or_name + ": " + issues.front().code + ": " + issues.front().message);
    }
    return arch;
}

std::vector<NamedArch> selected_archs(const fs::path& out_dir) {
    const fs::path dir = out_dir / "global" / "selected";
    if (!fs::is_directory(dir)) {
        throw ConfigError("--arch", "no architectures given and '" + dir.string() + "' does not exist (run 'global' first)");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<NamedArch> out;
    for (const auto& f : files) out.push_back({f.stem().string(), read_arch_file(f.string())});
    // Descending BOPs, the order the selector produced them in.
    std::stable_sort(out.begin(), out.end(), [](const NamedArch& a, const NamedArch& b) {
        return bops_model(a.arch).total > bops_model(b.arch).total;
    });
    return out;
}

LocalOutcome run_local_one(const RunConfig& cfg, const PreparedData& data, const NamedArch& na, const fs::path& dir,
                           std::ostream& log) {
    if (na.arch.task != data.task) {
        throw ConfigError("architecture", na.name + " is a " + std::string(to_string(na.arch.task)) +
                                              " model but the dataset is " + std::string(to_string(data.task)));
    }
    fs::create_directories(dir);
    LocalOutcome o;
    o.name = na.name;
    o.arch = na.arch;
    TrainConfig base;
    ParamStore dense;
    json hpo_json;
    if (cfg.hpo.enabled) {
        LocalHpoConfig hc;
        hc.budget = cfg.hpo.budget;
        hc.epochs = cfg.hpo.epochs;
        hc.settings = cfg.hpo.settings;
        log << "  hpo " << o.name << ": " << hc.budget << " trials x " << hc.epochs << " epochs\n";
        Rng rng(derive_seed(cfg.seed, "hpo/" + o.name));
        o.hpo = run_local_hpo(o.arch, data.splits.train, data.splits.val, hc, rng);
        write_text(dir / "hpo_history.csv", hpo_history_csv(hc.space, o.hpo.history));
        base = o.hpo.best_config;
        dense = o.hpo.best_params;
        hpo_json = {{"best_trial", o.hpo.best_trial}, {"best_score", o.hpo.best_score}};
    } else {
        base = proxy_train_config(cfg.global);
        base.epochs = cfg.hpo.epochs;
        base.seed = derive_seed(cfg.seed, "train/" + o.name);
        dense = train(o.arch, init_params(o.arch, derive_seed(cfg.seed, "init/" + o.name)), data.splits.train, base).params;
        hpo_json = nullptr;
    }
    finish_compression(cfg, data, o, dense, base, dir, log);
    o.summary["hpo"] = hpo_json;
    o.summary["train_config"] = train_config_json(base);
    write_json(dir / "summary.json", o.summary);
    return o;
}

LocalOutcome run_compress_one(const RunConfig& cfg, const PreparedData& data, const std::string& name,
                              const Checkpoint& dense, const fs::path& dir, std::ostream& log) {
    if (dense.arch.task != data.task) {
        throw ConfigError("--checkpoint", "checkpoint task does not match the dataset");
    }
    fs::create_directories(dir);
    LocalOutcome o;
    o.name = name;
    o.arch = dense.arch;
    ParamStore start = dense.params;
    start.quant.reset();
    TrainConfig base = proxy_train_config(cfg.global);
    finish_compression(cfg, data, o, start, base, dir, log);
    o.summary["train_config"] = train_config_json(base);
    write_json(dir / "summary.json", o.summary);
    return o;
}

json collect_report(const fs::path& out_dir) {
    if (!fs::is_directory(out_dir)) throw ConfigError("--dir", "'" + out_dir.string() + "' is not a directory");
    json report{{"archive", nullptr}, {"models", json::array()}};
    if (fs::exists(out_dir / "global" / "archive.json")) report["archive"] = read_json(out_dir / "global" / "archive.json");
    std::vector<fs::path> summaries;
    for (const char* stage : {"local", "compress"}) {
        const fs::path d = out_dir / stage;
        if (!fs::is_directory(d)) continue;
        for (const auto& e : fs::directory_iterator(d)) {
            if (fs::exists(e.path() / "summary.json")) summaries.push_back(e.path() / "summary.json");
        }
    }
    std::sort(summaries.begin(), summaries.end());
    for (const auto& s : summaries) {
        json j = read_json(s);
        j["stage"] = s.parent_path().parent_path().filename().string();
        report["models"].push_back(std::move(j));
    }
    return report;
}

std::string report_csv(const json& report) {
    std::ostringstream os;
    os << "stage,name,task,params,dense_val,dense_test,dense_bops,bit_width,iteration,sparsity,val_metric,test_metric,"
          "bops,fallback\n";
    auto num = [](const json& v) { return v.is_number() ? csv::format_exact(v.get<double>()) : std::string(); };
    for (const auto& m : report.at("models")) {
        os << m.value("stage", "") << ',' << csv::quote(m.value("name", "")) << ',' << m.value("task", "") << ','
           << m.value("params", 0) << ',' << num(m["dense"]["val_metric"]) << ',' << num(m["dense"]["test_metric"])
           << ',' << num(m["dense"]["bops"]);
        if (m.contains("chosen")) {
            const auto& c = m["chosen"];
            os << ',' << c.value("bit_width", 0) << ',' << c.value("iteration", 0) << ',' << num(c["sparsity"]) << ','
               << num(c["val_metric"]) << ',' << num(c["test_metric"]) << ',' << num(c["bops"]) << ','
               << (c.value("fallback", false) ? 1 : 0);
        } else {
            os << ",,,,,,,";
        }
        os << '\n';
    }
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
}

void write_run_meta(const fs::path& out_dir, const RunConfig& cfg, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream stamp;
    stamp << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    json meta{{"command", command},
              {"finished_utc", stamp.str()},
              {"seed", cfg.seed},
              {"workers", cfg.workers},
              {"config", run_config_to_json(cfg)}};
    write_json(out_dir / "run_meta.json", meta);
}

}  // namespace nac::cli
