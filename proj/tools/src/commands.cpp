#include "nacforge/cli/commands.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <ostream>
#include <sstream>

#include "nacforge/checkpoint.hpp"
#include "nacforge/cli/pipeline.hpp"
#include "nacforge/cost_model.hpp"
#include "nacforge/csv.hpp"

namespace nac::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class NullBuf : public std::streambuf {
protected:
    int overflow(int c) override { return c; }
};

struct Globals {
    std::size_t workers = 0;  // 0 keeps the config value
    bool quiet = false;
};

RunConfig load_config(const std::string& path, const Globals& g) {
    if (path.empty()) throw ConfigError("--config", "is required");
    RunConfig cfg = load_run_config(path);
    apply_seed_override(cfg);
    if (g.workers > 0) cfg.workers = g.workers;
    return cfg;
}

struct Row {
    std::size_t index;
    std::string type;
    std::string value;
};

void emit_rows(std::ostream& out, const std::string& format, const std::string& column, const std::vector<Row>& rows,
               const std::string& total, const json& total_json, const std::string& total_label) {
    if (format == "csv") {
        out << "layer_index,layer_type," << column << '\n';
        for (const auto& r : rows) out << r.index << ',' << r.type << ',' << r.value << '\n';
        out << "total,," << total << '\n';
    } else if (format == "json") {
        json j{{"layers", json::array()}, {"total", total_json}};
        for (const auto& r : rows) j["layers"].push_back({{"layer_index", r.index}, {"layer_type", r.type}, {column, json::parse(r.value)}});
        out << j.dump(2) << '\n';
    } else {
        std::size_t w = column.size();
        for (const auto& r : rows) w = std::max(w, r.value.size());
        out << std::left << std::setw(6) << "layer" << std::setw(14) << "type" << std::right << std::setw(static_cast<int>(w))
            << column << '\n';
        for (const auto& r : rows) {
            out << std::left << std::setw(6) << r.index << std::setw(14) << r.type << std::right
                << std::setw(static_cast<int>(w)) << r.value << '\n';
        }
        out << total_label << ' ' << total << '\n';
    }
}

int cmd_bops(const std::string& arch_path, int wbits, int abits, double density, const std::string& format,
             std::ostream& out) {
    const ArchDescriptor arch = read_arch_file(arch_path);
    BopsOptions opt;
    opt.bits = {wbits, abits};
    try {
        check_bit_config(opt.bits);
    } catch (const Error& e) {
        throw ConfigError("--weight-bits/--act-bits", e.what());
    }
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("--density", "must lie in (0, 1]");
    for (std::size_t i = 0; i < arch.layers.size(); ++i) opt.sparsity.density[i] = density;
    const BopsReport rep = bops_model(arch, opt);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        rows.push_back({i, std::string(layer_type_name(arch.layers[i])), csv::format_exact(rep.per_layer[i])});
    }
    emit_rows(out, format, "bops", rows, csv::format_exact(rep.total), rep.total, "bops");
    return kExitOk;
}

int cmd_params(const std::string& arch_path, const std::string& format, std::ostream& out) {
    const ArchDescriptor arch = read_arch_file(arch_path);
    std::vector<Row> rows;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        rows.push_back({i, std::string(layer_type_name(arch.layers[i])), std::to_string(layer_params(arch.layers[i]))});
    }
    const auto total = count_params(arch);
    emit_rows(out, format, "params", rows, std::to_string(total), total, "params");
    return kExitOk;
}

int cmd_export(const std::string& ckpt_path, int reuse_factor, const std::string& out_path, std::ostream& out,
               std::ostream& log) {
    if (reuse_factor < 1) throw ConfigError("--reuse-factor", "must be >= 1");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const json manifest = export_manifest(ck, reuse_factor);
    if (out_path.empty()) {
        out << manifest.dump(2) << '\n';
    } else {
        write_json(out_path, manifest);
        log << "wrote " << out_path << '\n';
    }
    return kExitOk;
}

void run_global_cmd(const RunConfig& cfg, std::ostream& log) {
    std::optional<PreparedData> data;
    if (cfg.task != TaskKind::Toy) {
        data = prepare_data(cfg);
        write_json(cfg.output_dir / "dataset_manifest.json", data->manifest);
    }
    log << "global: " << cfg.global.strategy << ", budget " << cfg.global.budget << '\n';
    const GlobalOutcome g = run_global_stage(cfg, data ? &*data : nullptr);
    write_global_outputs(g, cfg, cfg.output_dir);
    log << "global: " << g.result.trials.size() << " trials, archive of " << g.result.archive.size() << '\n';
    for (const auto& s : g.selected) {
        log << "  " << s.name << ": error " << s.candidate.error << ", bops " << s.candidate.bops << '\n';
    }
}

void run_local_cmd(const RunConfig& cfg, const std::vector<std::string>& arch_files, std::ostream& log) {
    if (cfg.task == TaskKind::Toy) throw ConfigError("task", "the toy task supports only the global stage");
    std::vector<NamedArch> archs;
    if (arch_files.empty()) {
        archs = selected_archs(cfg.output_dir);
    } else {
        for (const auto& f : arch_files) archs.push_back({fs::path(f).stem().string(), read_arch_file(f)});
    }
    if (archs.empty()) throw ConfigError("--arch", "no architectures to optimize");
    const PreparedData data = prepare_data(cfg);
    write_json(cfg.output_dir / "dataset_manifest.json", data.manifest);
    json models = json::array();
    for (const auto& a : archs) {
        log << "local: " << a.name << '\n';
        models.push_back(run_local_one(cfg, data, a, cfg.output_dir / "local" / a.name, log).summary);
    }
    write_json(cfg.output_dir / "summary.json", {{"task", to_string(cfg.task)}, {"seed", cfg.seed}, {"models", models}});
}

int cmd_report(const std::string& dir, const std::string& format, std::ostream& out) {
    const json report = collect_report(dir);
    const std::string csv_text = report_csv(report);
    write_text(fs::path(dir) / "report.csv", csv_text);
    if (format == "json") {
        out << report.dump(2) << '\n';
    } else if (format == "csv") {
        out << csv_text;
    } else {
        if (report["archive"].is_object()) out << "archive: " << report["archive"]["size"] << " members\n";
        out << std::left << std::setw(10) << "stage" << std::setw(12) << "name" << std::right << std::setw(8) << "params"
            << std::setw(12) << "dense" << std::setw(6) << "bits" << std::setw(10) << "sparsity" << std::setw(12)
            << "metric" << std::setw(14) << "bops" << '\n';
        for (const auto& m : report["models"]) {
            out << std::left << std::setw(10) << m.value("stage", "") << std::setw(12) << m.value("name", "") << std::right
                << std::setw(8) << m.value("params", 0) << std::setw(12) << std::setprecision(5)
                << m["dense"].value("val_metric", 0.0);
            if (m.contains("chosen")) {
                const auto& c = m["chosen"];
                out << std::setw(6) << c.value("bit_width", 0) << std::setw(10) << std::setprecision(4)
                    << c.value("sparsity", 0.0) << std::setw(12) << std::setprecision(5) << c.value("val_metric", 0.0)
                    << std::setw(14) << std::setprecision(6) << c.value("bops", 0.0);
            }
            out << '\n';
        }
    }
    return kExitOk;
}

int exit_code_for(const Error& e) {
    const std::string& c = e.code();
    if (c == "ConfigError" || c == "SchemaError" || c == "ParseError" || c == "UnknownModel") return kExitConfig;
    return kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"nacforge: neural architecture codesign toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--workers", g.workers, "Concurrent evaluations (overrides the config; 1 is bit-reproducible)")
        ->check(CLI::PositiveNumber);
    app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");

    std::string config_path;
    auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "Run configuration JSON")->required(); };

    auto* global = app.add_subcommand("global", "Evolutionary architecture search; writes global/");
    add_config(global);

    std::vector<std::string> arch_files;
    auto* local = app.add_subcommand("local", "HPO and compression for selected architectures; writes local/");
    add_config(local);
    local->add_option("--arch", arch_files, "Architecture JSON files (default: global/selected/*.json)");

    std::string ckpt_path, model_name = "model";
    auto* compress = app.add_subcommand("compress", "Iterative pruning and QAT of a trained checkpoint");
    add_config(compress);
    compress->add_option("--checkpoint", ckpt_path, "Dense checkpoint (.nacf)")->required();
    compress->add_option("--name", model_name, "Output name under compress/");

    auto* run = app.add_subcommand("run", "global then local");
    add_config(run);

    std::string arch_path, format = "table";
    int wbits = 32, abits = 32;
    double density = 1.0;
    auto formats = CLI::IsMember({"csv", "json", "table"});
    auto* bops = app.add_subcommand("bops", "Per-layer bit operations");
    bops->add_option("arch", arch_path, "Architecture JSON or built-in model name")->required();
    bops->add_option("--weight-bits", wbits, "Weight bit width");
    bops->add_option("--act-bits", abits, "Activation bit width");
    bops->add_option("--density", density, "Fraction of weights kept, in (0, 1]");
    bops->add_option("--format", format, "csv, json or table")->check(formats);

    auto* params = app.add_subcommand("params", "Per-layer parameter counts");
    params->add_option("arch", arch_path, "Architecture JSON or built-in model name")->required();
    params->add_option("--format", format, "csv, json or table")->check(formats);

    std::string out_path;
    int reuse = 1;
    auto* exp = app.add_subcommand("export", "Deployment manifest from a checkpoint");
    exp->add_option("checkpoint", ckpt_path, "Checkpoint (.nacf)")->required();
    exp->add_option("-o,--output", out_path, "Manifest path (default: stdout)");
    exp->add_option("--reuse-factor", reuse, "Informational reuse factor recorded in the manifest");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Summarize an output directory into report.csv");
    auto* dir_opt = report->add_option("--dir", report_dir, "Output directory");
    report->add_option("-c,--config", config_path, "Use the config's output_dir")->excludes(dir_opt);
    report->add_option("--format", format, "csv, json or table")->check(formats);

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    NullBuf null_buf;
    std::ostream null_stream(&null_buf);
    std::ostream& log = g.quiet ? null_stream : err;

    try {
        if (*bops) return cmd_bops(arch_path, wbits, abits, density, format, out);
        if (*params) return cmd_params(arch_path, format, out);
        if (*exp) return cmd_export(ckpt_path, reuse, out_path, out, log);
        if (*report) {
            std::string dir = report_dir;
            if (dir.empty()) {
                if (config_path.empty()) throw ConfigError("--dir", "give --dir or --config");
                dir = load_config(config_path, g).output_dir.string();
            }
            return cmd_report(dir, format, out);
        }

        const RunConfig cfg = load_config(config_path, g);
        fs::create_directories(cfg.output_dir);
        std::string command;
        if (*global) {
            command = "global";
            run_global_cmd(cfg, log);
        } else if (*local) {
            command = "local";
            run_local_cmd(cfg, arch_files, log);
        } else if (*compress) {
            command = "compress";
            if (cfg.task == TaskKind::Toy) throw ConfigError("task", "the toy task supports only the global stage");
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const PreparedData data = prepare_data(cfg);
            write_json(cfg.output_dir / "dataset_manifest.json", data.manifest);
            run_compress_one(cfg, data, model_name, ck, cfg.output_dir / "compress" / model_name, log);
        } else if (*run) {
            command = "run";
            if (cfg.global.enabled) run_global_cmd(cfg, log);
            if (cfg.task != TaskKind::Toy) run_local_cmd(cfg, {}, log);
        }
        write_run_meta(cfg.output_dir, cfg, command);
        log << "done: " << cfg.output_dir.string() << '\n';
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace nac::cli
