#include "nacforge/compress.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nacforge/cost_model.hpp"
#include "nacforge/csv.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/rng.hpp"
#include "parallel.hpp"

namespace nac {

namespace {

struct WeightRef {
    double magnitude;
    std::size_t layer, tensor, flat;

    bool operator<(const WeightRef& o) const {
        if (magnitude != o.magnitude) return magnitude < o.magnitude;
        if (layer != o.layer) return layer < o.layer;
        if (tensor != o.tensor) return tensor < o.tensor;
        return flat < o.flat;
    }
};

void mask_smallest(ParamStore& params, std::vector<WeightRef>& refs, std::size_t count) {
    count = std::min(count, refs.size());
    if (count == 0) return;
    std::nth_element(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(count - 1), refs.end());
    for (std::size_t i = 0; i < count; ++i) {
        ParamTensor& p = params.layers[refs[i].layer].params[refs[i].tensor];
        ensure_mask(p);
        p.mask[refs[i].flat] = 0;
        p.value[refs[i].flat] = 0.0;
    }
}

std::size_t floor_count(double fraction, std::size_t remaining) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(remaining)));
}

SparsityPoint measure(const ArchDescriptor& arch, const ParamStore& params, const Dataset& val, int bits, int iteration) {
    SparsityPoint pt;
    pt.bit_width = bits;
    pt.iteration = iteration;
    pt.sparsity = global_sparsity(params);
    pt.metric = evaluate(arch, params, val);
    BopsOptions opts;
    opts.bits = BitConfig{bits, bits};
    opts.sparsity = density_profile(params);
    pt.bops = bops_model(arch, opts).total;
    pt.params = params;
    return pt;
}

SparsityCurve compress_one(const ArchDescriptor& arch, const ParamStore& dense, const Dataset& train_set,
                           const Dataset& val_set, const CompressionPlan& plan, const TrainConfig& base_cfg,
                           std::uint64_t seed, int bits) {
    SparsityCurve curve;
    curve.bit_width = bits;
    ParamStore params = dense;
    params.quant = BitConfig{bits, bits};
    curve.points.push_back(measure(arch, params, val_set, bits, 0));
    const std::string stream = "bits" + std::to_string(bits);
    for (int k = 1; k <= plan.iterations; ++k) {
        prune_step(params, plan.prune_fraction, plan.scope);
        TrainConfig cfg = base_cfg;
        cfg.epochs = plan.epochs_per_iter;
        cfg.seed = derive_seed(seed, stream + "/iter" + std::to_string(k));
        bool diverged = false;
        try {
            params = train(arch, params, train_set, cfg).params;
        } catch (const NumericDivergence&) {
            diverged = true;
        }
        SparsityPoint pt;
        try {
            pt = measure(arch, params, val_set, bits, k);
        } catch (const NumericOverflow&) {
            pt = SparsityPoint{bits, k, global_sparsity(params), std::numeric_limits<double>::quiet_NaN(), 0.0, true, params};
        }
        pt.diverged = pt.diverged || diverged;
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

bool better_metric(double a, double b, MetricSense sense) {
    return sense == MetricSense::HigherIsBetter ? a > b : a < b;
}

}  // namespace

std::string_view to_string(PruneScope s) { return s == PruneScope::Global ? "global" : "per_layer"; }

PruneScope prune_scope_from_string(std::string_view s) {
    if (s == "global") return PruneScope::Global;
    if (s == "per_layer") return PruneScope::PerLayer;
    throw SchemaError("unknown prune scope '" + std::string(s) + "'");
}

void CompressionPlan::validate() const {
    if (bit_widths.empty()) throw DomainError("bit_widths must not be empty");
    for (int b : bit_widths) {
        if (!is_supported_bit_width(b)) throw DomainError("bit width " + std::to_string(b) + " not in {4, 8, 16, 32}");
    }
    if (!(prune_fraction > 0.0 && prune_fraction < 1.0)) throw DomainError("prune_fraction must lie in (0, 1)");
    if (iterations < 1) throw DomainError("iterations must be >= 1");
    if (epochs_per_iter < 1) throw DomainError("epochs_per_iter must be >= 1");
    if (workers < 1) throw DomainError("workers must be >= 1");
}

std::size_t prune_step(ParamStore& params, double fraction, PruneScope scope) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("prune fraction must lie in (0, 1)");
    std::vector<std::vector<WeightRef>> per_tensor;
    std::size_t remaining = 0;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        for (std::size_t j = 0; j < params.layers[i].params.size(); ++j) {
            const ParamTensor& p = params.layers[i].params[j];
            if (!p.is_weight) continue;
            std::vector<WeightRef> refs;
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                if (p.mask.empty() || p.mask[k]) refs.push_back({std::abs(p.value[k]), i, j, k});
            }
            remaining += refs.size();
            per_tensor.push_back(std::move(refs));
        }
    }
    if (remaining == 0) throw NothingLeftToPrune("every prunable weight is already masked");

    std::size_t pruned = 0;
    if (scope == PruneScope::PerLayer) {
        for (auto& refs : per_tensor) {
            const std::size_t count = floor_count(fraction, refs.size());
            mask_smallest(params, refs, count);
            pruned += count;
        }
        if (pruned > 0) return pruned;
    }
    std::vector<WeightRef> all;
    all.reserve(remaining);
    for (auto& refs : per_tensor) {
        for (const auto& r : refs) {
            const ParamTensor& p = params.layers[r.layer].params[r.tensor];
            if (p.mask.empty() || p.mask[r.flat]) all.push_back(r);
        }
    }
    const std::size_t count = std::max<std::size_t>(1, floor_count(fraction, all.size()));
    mask_smallest(params, all, count);
    return count;
}

std::vector<SparsityCurve> run_compression(const ArchDescriptor& arch, const ParamStore& dense, const Dataset& train_set,
                                           const Dataset& val_set, const CompressionPlan& plan,
                                           const TrainConfig& base_cfg, std::uint64_t seed) {
    plan.validate();
    base_cfg.validate();
    check_params(arch, dense);
    std::vector<SparsityCurve> curves(plan.bit_widths.size());
    detail::parallel_for(plan.bit_widths.size(), plan.workers, [&](std::size_t i) {
        curves[i] = compress_one(arch, dense, train_set, val_set, plan, base_cfg, seed, plan.bit_widths[i]);
    });
    return curves;
}

bool within_tolerance(double metric, double reference, double tolerance, MetricSense sense) {
    if (!std::isfinite(metric)) return false;
    if (sense == MetricSense::HigherIsBetter) return metric >= reference - tolerance * std::abs(reference);
    return metric <= reference + tolerance * std::abs(reference);
}

CompressedChoice select_compressed(const std::vector<SparsityCurve>& curves, double tolerance, MetricSense sense) {
    if (curves.empty()) throw DomainError("no curves to select from");
    if (!(tolerance >= 0.0)) throw DomainError("tolerance must be >= 0");
    const SparsityPoint* dense = nullptr;
    for (const auto& c : curves) {
        if (c.points.empty()) throw DomainError("curve has no points");
        const SparsityPoint& p0 = c.points.front();
        if (!std::isfinite(p0.metric)) continue;
        if (!dense || better_metric(p0.metric, dense->metric, sense) ||
            (p0.metric == dense->metric && p0.bit_width > dense->bit_width)) {
            dense = &p0;
        }
    }
    if (!dense) throw DomainError("no curve has a finite iteration-0 metric");

    const SparsityPoint* best = nullptr;
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            if (!within_tolerance(p.metric, dense->metric, tolerance, sense)) continue;
            if (!best || p.bit_width < best->bit_width ||
                (p.bit_width == best->bit_width &&
                 (p.sparsity > best->sparsity ||
                  (p.sparsity == best->sparsity && better_metric(p.metric, best->metric, sense))))) {
                best = &p;
            }
        }
    }
    const bool fallback = best == nullptr;
    if (fallback) best = dense;
    return {best->bit_width, best->iteration, best->sparsity, best->metric, best->bops, fallback};
}

std::string curves_csv(const std::vector<SparsityCurve>& curves) {
    std::ostringstream out;
    out << "bit_width,iteration,sparsity,metric,bops,diverged\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            out << p.bit_width << ',' << p.iteration << ',' << csv::format_exact(p.sparsity) << ','
                << csv::format_exact(p.metric) << ',' << csv::format_exact(p.bops) << ',' << (p.diverged ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

}  // namespace nac
