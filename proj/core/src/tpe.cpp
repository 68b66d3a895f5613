#include "nacforge/tpe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include "nacforge/csv.hpp"
#include "nacforge/errors.hpp"

namespace nac {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxRejections = 100;

double to_internal(const HyperParam& p, double v) { return p.kind == ParamKind::LogUniform ? std::log(v) : v; }
double from_internal(const HyperParam& p, double v) { return p.kind == ParamKind::LogUniform ? std::exp(v) : v; }

double lower(const HyperParam& p) { return to_internal(p, p.low); }
double upper(const HyperParam& p) { return to_internal(p, p.high); }

double log_sum_exp(const std::vector<double>& xs) {
    const double m = *std::max_element(xs.begin(), xs.end());
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Mixture of truncated normals on [a, b], one per observation plus a broad
// prior component at the midpoint.
struct Parzen {
    double a = 0.0, b = 1.0;
    std::vector<double> mu, sigma;

    Parzen(const std::vector<double>& obs, double lo, double hi) : a(lo), b(hi) {
        const double range = b - a;
        std::vector<double> sorted = obs;
        std::sort(sorted.begin(), sorted.end());
        const double floor_bw = sorted.empty() ? range : range / static_cast<double>(sorted.size());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            const double left = i == 0 ? a : sorted[i - 1];
            const double right = i + 1 == sorted.size() ? b : sorted[i + 1];
            double bw = std::max({sorted[i] - left, right - sorted[i], floor_bw});
            mu.push_back(sorted[i]);
            sigma.push_back(std::min(bw, range));
        }
        mu.push_back(0.5 * (a + b));
        sigma.push_back(range);
    }

    double log_pdf(double x) const {
        if (x < a || x > b) return kNegInf;
        std::vector<double> terms;
        const double log_w = -std::log(static_cast<double>(mu.size()));
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double z = (x - mu[i]) / sigma[i];
            const double mass = normal_cdf((b - mu[i]) / sigma[i]) - normal_cdf((a - mu[i]) / sigma[i]);
            terms.push_back(log_w - 0.5 * z * z - std::log(sigma[i] * std::sqrt(2.0 * std::numbers::pi) * mass));
        }
        return log_sum_exp(terms);
    }

    double draw(Rng& rng) const {
        const std::size_t k = rng.index(mu.size());
        for (int t = 0; t < kMaxRejections; ++t) {
            const double x = rng.normal(mu[k], sigma[k]);
            if (x >= a && x <= b) return x;
        }
        return std::clamp(mu[k], a, b);
    }
};

struct Categorical {
    std::vector<double> weight;

    Categorical(const std::vector<double>& obs, std::size_t choices) : weight(choices, 1.0) {
        for (double v : obs) weight[static_cast<std::size_t>(v)] += 1.0;
        const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
        for (auto& w : weight) w /= total;
    }

    double log_pdf(double x) const { return std::log(weight[static_cast<std::size_t>(x)]); }

    double draw(Rng& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < weight.size(); ++i) {
            acc += weight[i];
            if (u < acc) return static_cast<double>(i);
        }
        return static_cast<double>(weight.size() - 1);
    }
};

struct DimModel {
    std::optional<Parzen> parzen;
    std::optional<Categorical> cat;

    double log_pdf(double internal) const { return parzen ? parzen->log_pdf(internal) : cat->log_pdf(internal); }
    double draw(Rng& rng) const { return parzen ? parzen->draw(rng) : cat->draw(rng); }
};

DimModel fit_dim(const HyperParam& p, const std::vector<double>& internal_obs) {
    DimModel m;
    if (p.kind == ParamKind::Categorical) {
        m.cat.emplace(internal_obs, p.choices.size());
    } else {
        m.parzen.emplace(internal_obs, lower(p), upper(p));
    }
    return m;
}

struct TpeModel {
    std::vector<DimModel> good, bad;

    double log_ratio(const std::vector<double>& internal) const {
        double acc = 0.0;
        for (std::size_t d = 0; d < good.size(); ++d) acc += good[d].log_pdf(internal[d]) - bad[d].log_pdf(internal[d]);
        return acc;
    }
};

std::vector<const TrialRecord*> complete_sorted(const std::vector<TrialRecord>& history) {
    std::vector<const TrialRecord*> done;
    for (const auto& t : history) {
        if (t.status == TrialStatus::Complete) done.push_back(&t);
    }
    std::stable_sort(done.begin(), done.end(), [](const TrialRecord* a, const TrialRecord* b) { return a->score < b->score; });
    return done;
}

std::vector<double> internal_of(const HyperSpace& space, const Assignment& a) {
    std::vector<double> out(a.size());
    for (std::size_t d = 0; d < a.size(); ++d) out[d] = to_internal(space.params[d], a[d]);
    return out;
}

TpeModel fit(const std::vector<TrialRecord>& history, const HyperSpace& space, const TpeSettings& s) {
    const auto done = complete_sorted(history);
    const std::size_t n_good = good_count(done.size(), s.gamma);
    TpeModel model;
    for (std::size_t d = 0; d < space.params.size(); ++d) {
        std::vector<double> g, b;
        for (std::size_t i = 0; i < done.size(); ++i) {
            (i < n_good ? g : b).push_back(to_internal(space.params[d], done[i]->assignment[d]));
        }
        model.good.push_back(fit_dim(space.params[d], g));
        model.bad.push_back(fit_dim(space.params[d], b));
    }
    return model;
}

Assignment prior_sample(const HyperSpace& space, Rng& rng) {
    Assignment a;
    for (const auto& p : space.params) {
        if (p.kind == ParamKind::Categorical) {
            a.push_back(static_cast<double>(rng.index(p.choices.size())));
        } else {
            a.push_back(from_internal(p, rng.uniform(lower(p), upper(p))));
        }
    }
    return a;
}

std::size_t count_complete(const std::vector<TrialRecord>& history) {
    return static_cast<std::size_t>(std::count_if(history.begin(), history.end(),
                                                  [](const TrialRecord& t) { return t.status == TrialStatus::Complete; }));
}

}  // namespace

HyperParam HyperParam::uniform(std::string name, double low, double high) {
    return {std::move(name), ParamKind::Uniform, low, high, {}};
}

HyperParam HyperParam::log_uniform(std::string name, double low, double high) {
    return {std::move(name), ParamKind::LogUniform, low, high, {}};
}

HyperParam HyperParam::categorical(std::string name, std::vector<std::string> choices) {
    return {std::move(name), ParamKind::Categorical, 0.0, 0.0, std::move(choices)};
}

std::size_t HyperSpace::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name == name) return i;
    }
    throw SchemaError("hyperparameter '" + name + "' not in space");
}

void HyperSpace::validate() const {
    if (params.empty()) throw SchemaError("hyperparameter space is empty");
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = i + 1; j < params.size(); ++j) {
            if (params[i].name == params[j].name) throw SchemaError("duplicate hyperparameter '" + params[i].name + "'");
        }
    }
    for (const auto& p : params) {
        if (p.kind == ParamKind::Categorical) {
            if (p.choices.empty()) throw SchemaError("'" + p.name + "' has no choices");
        } else {
            if (!(p.low < p.high) || !std::isfinite(p.low) || !std::isfinite(p.high)) {
                throw SchemaError("'" + p.name + "' needs finite low < high");
            }
            if (p.kind == ParamKind::LogUniform && !(p.low > 0.0)) {
                throw SchemaError("'" + p.name + "' is log-uniform and needs positive bounds");
            }
        }
    }
}

HyperSpace default_hyper_space() {
    return {{HyperParam::log_uniform("lr", 1e-4, 1e-1), HyperParam::log_uniform("weight_decay", 1e-6, 1e-2),
             HyperParam::categorical("schedule", {"Constant", "CosineDecay"}),
             HyperParam::categorical("batch_size", {"32", "64", "128", "256"})}};
}

std::size_t good_count(std::size_t n_complete, double gamma) {
    if (n_complete == 0) return 0;
    const auto n = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n_complete) - 1e-9));
    return std::clamp<std::size_t>(n, 1, n_complete);
}

bool within_space(const HyperSpace& space, const Assignment& a) {
    if (a.size() != space.params.size()) return false;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const auto& p = space.params[d];
        if (p.kind == ParamKind::Categorical) {
            if (a[d] < 0 || a[d] >= static_cast<double>(p.choices.size()) || a[d] != std::floor(a[d])) return false;
        } else if (!(a[d] >= p.low && a[d] <= p.high)) {
            return false;
        }
    }
    return true;
}

Suggestion suggest_detailed(const std::vector<TrialRecord>& history, const HyperSpace& space, Rng& rng,
                            const TpeSettings& settings) {
    space.validate();
    Suggestion out;
    if (count_complete(history) < std::max<std::size_t>(settings.n_startup, 2)) {
        out.assignment = prior_sample(space, rng);
        return out;
    }
    const TpeModel model = fit(history, space, settings);
    double best = kNegInf;
    for (std::size_t c = 0; c < settings.n_candidates; ++c) {
        std::vector<double> internal;
        Assignment a;
        for (std::size_t d = 0; d < space.params.size(); ++d) {
            const double x = model.good[d].draw(rng);
            internal.push_back(x);
            // Round trip keeps the value inside the original bounds.
            a.push_back(space.params[d].kind == ParamKind::Categorical
                            ? x
                            : std::clamp(from_internal(space.params[d], x), space.params[d].low, space.params[d].high));
        }
        const double r = model.log_ratio(internal_of(space, a));
        out.candidates.push_back(a);
        out.log_ratio.push_back(r);
        if (out.assignment.empty() || r > best) {
            best = r;
            out.assignment = a;
        }
    }
    return out;
}

Assignment suggest(const std::vector<TrialRecord>& history, const HyperSpace& space, Rng& rng,
                   const TpeSettings& settings) {
    return suggest_detailed(history, space, rng, settings).assignment;
}

double log_density_ratio(const std::vector<TrialRecord>& history, const HyperSpace& space, const Assignment& x,
                         const TpeSettings& settings) {
    return fit(history, space, settings).log_ratio(internal_of(space, x));
}

TpeResult run_tpe(const HyperSpace& space, std::size_t budget, Rng& rng, const TpeObjective& objective,
                  const TpeSettings& settings) {
    space.validate();
    if (budget < 1) throw DomainError("budget must be >= 1");
    TpeResult out;
    bool any = false;
    for (std::size_t t = 0; t < budget; ++t) {
        TrialRecord rec;
        rec.assignment = suggest(out.history, space, rng, settings);
        try {
            rec.score = objective(rec.assignment, t);
            rec.status = std::isfinite(rec.score) ? TrialStatus::Complete : TrialStatus::Failed;
        } catch (const std::exception&) {
            rec.status = TrialStatus::Failed;
        }
        if (rec.status == TrialStatus::Failed) {
            rec.score = std::numeric_limits<double>::quiet_NaN();
        } else if (!any || rec.score < out.history[out.best].score) {
            out.best = t;
            any = true;
        }
        out.history.push_back(std::move(rec));
    }
    if (!any) throw AllTrialsFailed("all " + std::to_string(budget) + " trials failed");
    return out;
}

TrainConfig to_train_config(const HyperSpace& space, const Assignment& a, int epochs, std::uint64_t seed) {
    if (!within_space(space, a)) throw DomainError("assignment outside the hyperparameter space");
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    const auto& params = space.params;
    for (std::size_t d = 0; d < params.size(); ++d) {
        const auto& p = params[d];
        if (p.name == "lr") {
            cfg.learning_rate = a[d];
        } else if (p.name == "weight_decay") {
            cfg.weight_decay = a[d];
        } else if (p.name == "schedule") {
            cfg.lr_schedule = lr_schedule_from_string(p.choices[static_cast<std::size_t>(a[d])]);
        } else if (p.name == "batch_size") {
            const auto& label = p.choices[static_cast<std::size_t>(a[d])];
            long long v = 0;
            if (!csv::parse_int(label, v) || v < 1) throw SchemaError("batch_size choice '" + label + "' is not a positive integer");
            cfg.batch_size = static_cast<int>(v);
        } else if (p.name == "momentum") {
            cfg.momentum = a[d];
        } else {
            throw SchemaError("unknown hyperparameter '" + p.name + "'");
        }
    }
    return cfg;
}

HpoResult run_local_hpo(const ArchDescriptor& arch, const Dataset& train_set, const Dataset& val_set,
                        const LocalHpoConfig& cfg, Rng& rng) {
    if (cfg.budget < 1) throw DomainError("HPO budget must be >= 1");
    const auto issues = validate(arch);
    if (!issues.empty()) throw SchemaError("architecture is invalid: " + issues.front().message);
    const std::uint64_t base = rng.next_u64();
    HpoResult out;
    std::vector<ParamStore> trained(cfg.budget);
    std::vector<TrainConfig> configs(cfg.budget);
    auto objective = [&](const Assignment& a, std::size_t t) {
        const std::uint64_t seed = splitmix64(base + t);
        configs[t] = to_train_config(cfg.space, a, cfg.epochs, derive_seed(seed, "train"));
        auto result = train(arch, init_params(arch, derive_seed(seed, "init")), train_set, configs[t]);
        const double score = task_error(arch.task, evaluate(arch, result.params, val_set));
        trained[t] = std::move(result.params);
        return score;
    };
    auto res = run_tpe(cfg.space, cfg.budget, rng, objective, cfg.settings);
    out.best_trial = res.best;
    out.best_config = configs[res.best];
    out.best_score = res.history[res.best].score;
    out.best_params = std::move(trained[res.best]);
    out.history = std::move(res.history);
    return out;
}

std::string hpo_history_csv(const HyperSpace& space, const std::vector<TrialRecord>& history) {
    std::ostringstream out;
    out << "trial_id";
    for (const auto& p : space.params) out << ',' << csv::quote(p.name);
    out << ",score,status\n";
    for (std::size_t t = 0; t < history.size(); ++t) {
        const auto& rec = history[t];
        out << t;
        for (std::size_t d = 0; d < space.params.size(); ++d) {
            const auto& p = space.params[d];
            out << ',';
            if (p.kind == ParamKind::Categorical) {
                out << csv::quote(p.choices[static_cast<std::size_t>(rec.assignment[d])]);
            } else {
                out << csv::format_exact(rec.assignment[d]);
            }
        }
        out << ',' << (rec.status == TrialStatus::Complete ? csv::format_exact(rec.score) : std::string("nan")) << ','
            << (rec.status == TrialStatus::Complete ? "Complete" : "Failed") << '\n';
    }
    return out.str();
}

}  // namespace nac
