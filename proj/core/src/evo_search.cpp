#include "nacforge/evo_search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "nacforge/cost_model.hpp"
#include "nacforge/csv.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/params.hpp"
#include "parallel.hpp"

namespace nac {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPenaltyFactor = 10.0;
constexpr double kPenaltyFloor = 1e12;
constexpr int kDedupAttempts = 10;

// Evaluates genomes (possibly concurrently) and folds the outcomes, in order,
// into the archive and trial log.
class TrialRunner {
public:
    TrialRunner(const Evaluator& evaluator, std::size_t workers, std::uint64_t base_seed, SearchResult& out)
        : evaluator_(evaluator), workers_(workers), base_seed_(base_seed), out_(out) {}

    std::size_t evaluations() const { return out_.trials.size(); }

    bool seen(const Genome& g) const { return cache_.count(g) > 0; }
    const Candidate& cached(const Genome& g) const { return cache_.at(g); }

    std::vector<Candidate> run(const std::vector<Genome>& genomes, std::size_t generation) {
        const std::size_t first_id = out_.trials.size();
        std::vector<EvalOutcome> outcomes(genomes.size());
        std::vector<std::uint8_t> threw(genomes.size(), 0);
        detail::parallel_for(genomes.size(), workers_, [&](std::size_t i) {
            try {
                outcomes[i] = evaluator_(genomes[i], seed_for(first_id + i));
            } catch (const std::exception&) {
                threw[i] = 1;
            }
        });
        std::vector<Candidate> result;
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            Candidate c;
            c.genome = genomes[i];
            c.eval_seed = seed_for(first_id + i);
            const EvalOutcome& o = outcomes[i];
            const bool bops_ok = !threw[i] && std::isfinite(o.bops) && o.bops >= 0.0;
            c.failed = threw[i] || o.failed || !std::isfinite(o.error) || !bops_ok;
            if (c.failed) {
                c.error = worst_error_ > 0.0 ? worst_error_ * kPenaltyFactor : kPenaltyFloor;
                c.bops = bops_ok ? o.bops : (worst_bops_ > 0.0 ? worst_bops_ * kPenaltyFactor : kPenaltyFloor);
            } else {
                c.error = o.error;
                c.bops = o.bops;
                worst_error_ = std::max(worst_error_, c.error);
                worst_bops_ = std::max(worst_bops_, c.bops);
            }
            TrialLogEntry entry{first_id + i, c.genome, c.error, c.bops, c.eval_seed, c.failed, 0, generation};
            // Failed trials are logged and kept for selection pressure but never archived.
            entry.rank_at_insert = c.failed ? out_.archive.dominated_by(c) : out_.archive.insert(c);
            out_.trials.push_back(std::move(entry));
            cache_.emplace(c.genome, c);
            result.push_back(std::move(c));
        }
        return result;
    }

private:
    std::uint64_t seed_for(std::size_t trial_id) const { return splitmix64(base_seed_ + trial_id); }

    const Evaluator& evaluator_;
    std::size_t workers_;
    std::uint64_t base_seed_;
    SearchResult& out_;
    std::map<Genome, Candidate> cache_;
    double worst_error_ = 0.0;
    double worst_bops_ = 0.0;
};

void assign_rank_and_crowding(std::vector<Candidate>& pop) {
    const auto fronts = non_dominated_sort(pop);
    for (std::size_t r = 0; r < fronts.size(); ++r) {
        std::vector<Candidate> members;
        for (auto i : fronts[r]) members.push_back(pop[i]);
        const auto cd = crowding_distance(members);
        for (std::size_t j = 0; j < fronts[r].size(); ++j) {
            pop[fronts[r][j]].rank = static_cast<int>(r);
            pop[fronts[r][j]].crowding = cd[j];
        }
    }
}

// Elitist truncation of the union to `size` by (rank, crowding).
std::vector<Candidate> environmental_selection(std::vector<Candidate> pool, std::size_t size) {
    const auto fronts = non_dominated_sort(pool);
    std::vector<Candidate> next;
    for (const auto& front : fronts) {
        std::vector<Candidate> members;
        for (auto i : front) members.push_back(pool[i]);
        if (next.size() + members.size() <= size) {
            next.insert(next.end(), members.begin(), members.end());
            continue;
        }
        const auto cd = crowding_distance(members);
        std::vector<std::size_t> order(members.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cd[a] > cd[b]; });
        for (std::size_t j = 0; next.size() < size; ++j) next.push_back(members[order[j]]);
        break;
    }
    assign_rank_and_crowding(next);
    return next;
}

const Candidate& tournament(const std::vector<Candidate>& pop, Rng& rng) {
    const Candidate& a = pop[rng.index(pop.size())];
    const Candidate& b = pop[rng.index(pop.size())];
    if (a.rank != b.rank) return a.rank < b.rank ? a : b;
    return b.crowding > a.crowding ? b : a;
}

std::vector<Candidate> dedupe(std::vector<Candidate> pool) {
    std::set<Genome> seen;
    std::vector<Candidate> out;
    for (auto& c : pool) {
        if (seen.insert(c.genome).second) out.push_back(std::move(c));
    }
    return out;
}

}  // namespace

bool dominates(const Candidate& a, const Candidate& b) {
    return a.error <= b.error && a.bops <= b.bops && (a.error < b.error || a.bops < b.bops);
}

std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<Candidate>& pop) {
    const std::size_t n = pop.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> count(n, 0);
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (dominates(pop[i], pop[j])) {
                dominated[i].push_back(j);
            } else if (dominates(pop[j], pop[i])) {
                ++count[i];
            }
        }
        if (count[i] == 0) current.push_back(i);
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (auto i : current) {
            for (auto j : dominated[i]) {
                if (--count[j] == 0) next.push_back(j);
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

std::vector<double> crowding_distance(const std::vector<Candidate>& front) {
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n <= 2) {
        std::fill(dist.begin(), dist.end(), kInf);
        return dist;
    }
    for (int obj = 0; obj < 2; ++obj) {
        auto value = [&](std::size_t i) { return obj == 0 ? front[i].error : front[i].bops; };
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
        const double range = value(order.back()) - value(order.front());
        dist[order.front()] = kInf;
        dist[order.back()] = kInf;
        if (range <= 0.0) continue;
        for (std::size_t k = 1; k + 1 < n; ++k) {
            dist[order[k]] += (value(order[k + 1]) - value(order[k - 1])) / range;
        }
    }
    return dist;
}

double hypervolume_2d(const std::vector<Candidate>& points, double ref_error, double ref_bops) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& c : points) {
        if (c.error < ref_error && c.bops < ref_bops) pts.emplace_back(c.error, c.bops);
    }
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    double floor_bops = ref_bops;
    for (const auto& [e, b] : pts) {
        if (b < floor_bops) {
            area += (ref_error - e) * (floor_bops - b);
            floor_bops = b;
        }
    }
    return area;
}

int ParetoArchive::insert(const Candidate& c) {
    int dominating = 0;
    bool duplicate = false;
    for (const auto& m : members_) {
        if (dominates(m, c)) ++dominating;
        if (m.genome == c.genome) duplicate = true;
    }
    if (dominating > 0 || duplicate) return dominating;
    std::erase_if(members_, [&](const Candidate& m) { return dominates(c, m); });
    members_.push_back(c);
    return 0;
}

int ParetoArchive::dominated_by(const Candidate& c) const {
    return static_cast<int>(std::count_if(members_.begin(), members_.end(), [&](const Candidate& m) { return dominates(m, c); }));
}

bool ParetoArchive::contains(const Genome& g) const {
    return std::any_of(members_.begin(), members_.end(), [&](const Candidate& m) { return m.genome == g; });
}

std::vector<Candidate> ParetoArchive::sorted() const {
    std::vector<Candidate> out = members_;
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.bops != b.bops) return a.bops < b.bops;
        if (a.error != b.error) return a.error < b.error;
        return a.genome < b.genome;
    });
    return out;
}

void GlobalSearchConfig::validate() const {
    if (pop_size < 2) throw DomainError("pop_size must be >= 2");
    if (budget < pop_size) throw DomainError("budget must be >= pop_size");
    if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0)) throw DomainError("crossover_prob must lie in [0, 1]");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw DomainError("mutation_rate must lie in [0, 1]");
    if (workers < 1) throw DomainError("workers must be >= 1");
}

SearchResult run_global_search(const SpaceDef& space, const GlobalSearchConfig& cfg, Rng& rng,
                               const Evaluator& evaluator) {
    cfg.validate();
    check_space(space);
    SearchResult out;
    TrialRunner runner(evaluator, cfg.workers, rng.next_u64(), out);

    std::vector<Genome> initial;
    std::set<Genome> pending;
    for (std::size_t tries = 0; initial.size() < cfg.pop_size && tries < cfg.pop_size * 20; ++tries) {
        Genome g = sample(space, rng);
        if (pending.insert(g).second) initial.push_back(std::move(g));
    }
    std::vector<Candidate> pop = runner.run(initial, 0);
    assign_rank_and_crowding(pop);
    if (cfg.on_generation) cfg.on_generation(0, out.archive);

    std::size_t stalled = 0;
    for (std::size_t generation = 1; runner.evaluations() < cfg.budget && stalled < cfg.stall_limit; ++generation) {
        const std::size_t remaining = cfg.budget - runner.evaluations();
        std::vector<Candidate> offspring;
        std::vector<Genome> fresh;
        pending.clear();
        const std::size_t max_draws = cfg.pop_size * 20;
        for (std::size_t draws = 0; offspring.size() + fresh.size() < cfg.pop_size && draws < max_draws; ++draws) {
            const Candidate& p1 = tournament(pop, rng);
            const Candidate& p2 = tournament(pop, rng);
            std::pair<Genome, Genome> kids{p1.genome, p2.genome};
            if (rng.bernoulli(cfg.crossover_prob)) kids = crossover(p1.genome, p2.genome, rng);
            for (Genome* child : {&kids.first, &kids.second}) {
                if (offspring.size() + fresh.size() >= cfg.pop_size) break;
                Genome g = mutate(space, *child, cfg.mutation_rate, rng);
                for (int a = 0; a < kDedupAttempts && (runner.seen(g) || pending.count(g)); ++a) {
                    g = mutate(space, g, cfg.mutation_rate, rng);
                }
                if (runner.seen(g)) {
                    offspring.push_back(runner.cached(g));
                } else if (!pending.count(g) && fresh.size() < remaining) {
                    pending.insert(g);
                    fresh.push_back(std::move(g));
                }
            }
        }
        stalled = fresh.empty() ? stalled + 1 : 0;
        auto evaluated = runner.run(fresh, generation);
        offspring.insert(offspring.end(), evaluated.begin(), evaluated.end());

        std::vector<Candidate> pool = pop;
        pool.insert(pool.end(), offspring.begin(), offspring.end());
        pop = environmental_selection(dedupe(std::move(pool)), cfg.pop_size);
        if (cfg.on_generation) cfg.on_generation(generation, out.archive);
    }
    out.population = std::move(pop);
    return out;
}

SearchResult run_random_search(const SpaceDef& space, std::size_t budget, std::size_t workers, Rng& rng,
                               const Evaluator& evaluator) {
    check_space(space);
    if (budget < 1) throw DomainError("budget must be >= 1");
    SearchResult out;
    TrialRunner runner(evaluator, std::max<std::size_t>(workers, 1), rng.next_u64(), out);
    std::vector<Genome> genomes;
    std::set<Genome> seen;
    for (std::size_t tries = 0; genomes.size() < budget && tries < budget * 100; ++tries) {
        Genome g = sample(space, rng);
        if (seen.insert(g).second) genomes.push_back(std::move(g));
    }
    out.population = runner.run(genomes, 0);
    return out;
}

std::vector<NamedCandidate> select_by_bops(const ParetoArchive& archive, std::size_t k) {
    if (k < 1) throw DomainError("k must be >= 1");
    if (archive.size() < k) {
        throw InsufficientArchive("archive has " + std::to_string(archive.size()) + " members, need " +
                                  std::to_string(k));
    }
    const auto members = archive.sorted();
    std::vector<double> logb(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) logb[i] = std::log(std::max(members[i].bops, 1e-300));
    const double lo = logb.front();
    const double hi = logb.back();
    const double width = (hi - lo) / static_cast<double>(k);

    auto bin_of = [&](std::size_t i) -> std::size_t {
        if (width <= 0.0) return 0;
        return std::min(k - 1, static_cast<std::size_t>((logb[i] - lo) / width));
    };
    auto better = [&](std::size_t a, std::size_t b) {
        if (members[a].error != members[b].error) return members[a].error < members[b].error;
        return a < b;
    };

    std::vector<std::ptrdiff_t> pick(k, -1);
    for (std::size_t i = 0; i < members.size(); ++i) {
        auto& p = pick[bin_of(i)];
        if (p < 0 || better(i, static_cast<std::size_t>(p))) p = static_cast<std::ptrdiff_t>(i);
    }
    std::vector<std::uint8_t> used(members.size(), 0);
    for (auto p : pick) {
        if (p >= 0) used[static_cast<std::size_t>(p)] = 1;
    }
    // Empty bins take the nearest unused member to the bin centre.
    for (std::size_t b = 0; b < k; ++b) {
        if (pick[b] >= 0) continue;
        const double centre = lo + width * (static_cast<double>(b) + 0.5);
        std::ptrdiff_t best = -1;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (used[i]) continue;
            if (best < 0 || std::abs(logb[i] - centre) < std::abs(logb[static_cast<std::size_t>(best)] - centre)) {
                best = static_cast<std::ptrdiff_t>(i);
            }
        }
        pick[b] = best;
        used[static_cast<std::size_t>(best)] = 1;
    }

    std::vector<std::size_t> chosen;
    for (auto p : pick) chosen.push_back(static_cast<std::size_t>(p));
    std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) { return a > b; });
    static const char* kNames[] = {"large", "medium", "small", "tiny"};
    std::vector<NamedCandidate> out;
    for (std::size_t j = 0; j < chosen.size(); ++j) {
        std::string name = k == 4 ? kNames[j] : "size" + std::to_string(j);
        out.push_back({std::move(name), members[chosen[j]]});
    }
    return out;
}

Evaluator make_nas_evaluator(const SpaceDef& space, NasEvalConfig cfg) {
    if (!space.task) throw SchemaError("search space has no task and cannot be decoded");
    auto shared = std::make_shared<const NasEvalConfig>(std::move(cfg));
    return [space, shared](const Genome& g, std::uint64_t seed) -> EvalOutcome {
        const ArchDescriptor arch = decode(space, g);
        if (!is_valid(arch)) return {0.0, 0.0, true};
        EvalOutcome out;
        out.bops = bops_model(arch).total;
        TrainConfig tc = shared->train;
        tc.seed = derive_seed(seed, "train");
        try {
            const auto trained = train(arch, init_params(arch, derive_seed(seed, "init")), shared->train_set, tc);
            out.error = task_error(arch.task, evaluate(arch, trained.params, shared->val_set));
        } catch (const NumericDivergence&) {
            out.failed = true;
        } catch (const NumericOverflow&) {
            out.failed = true;
        }
        return out;
    };
}

nlohmann::json candidate_to_json(const Candidate& c) {
    return {{"genome", genome_to_json(c.genome)},
            {"error", c.error},
            {"bops", c.bops},
            {"eval_seed", c.eval_seed},
            {"failed", c.failed}};
}

Candidate candidate_from_json(const nlohmann::json& j) {
    try {
        Candidate c;
        c.genome = genome_from_json(j.at("genome"));
        c.error = j.at("error").get<double>();
        c.bops = j.at("bops").get<double>();
        c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
        c.failed = j.at("failed").get<bool>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("candidate: ") + e.what());
    }
}

nlohmann::json archive_to_json(const ParetoArchive& archive) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& c : archive.sorted()) members.push_back(candidate_to_json(c));
    return {{"size", archive.size()}, {"members", std::move(members)}};
}

std::string trial_log_csv(const std::vector<TrialLogEntry>& trials) {
    std::ostringstream out;
    out << "trial_id,genome_json,error,bops,rank_at_insert,failed\n";
    for (const auto& t : trials) {
        out << t.trial_id << ',' << csv::quote(genome_to_string(t.genome)) << ',' << csv::format_exact(t.error) << ','
            << csv::format_exact(t.bops) << ',' << t.rank_at_insert << ',' << (t.failed ? 1 : 0) << '\n';
    }
    return out.str();
}

}  // namespace nac
