#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "nacforge/rng.hpp"
#include "nacforge/tensor.hpp"

namespace nac::testing {

inline Tensor random_tensor(Shape dims, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(dims));
    for (auto& v : t.data) v = rng.normal() * scale;
    return t;
}

struct GradCheckResult {
    bool ok = true;
    double worst_abs = 0.0;
    std::string detail;
};

// Scalar graph builder over a set of leaf parameters.
using GraphFn = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

inline double eval_graph(const GraphFn& f, const std::vector<Tensor>& leaves) {
    Tape tape(false);
    std::vector<Tape::Id> ids;
    for (const auto& l : leaves) ids.push_back(tape.constant(l));
    return tape.value(f(tape, ids))[0];
}

// Central differences on up to `probes` coordinates per leaf, tolerance
// max(abs_tol, rel_tol * |numeric|).
inline GradCheckResult grad_check(const GraphFn& f, std::vector<Tensor> leaves, Rng& rng, std::size_t probes = 20,
                                  double eps = 1e-6, double abs_tol = 1e-4, double rel_tol = 1e-3) {
    Tape tape;
    std::vector<Tape::Id> ids;
    for (const auto& l : leaves) ids.push_back(tape.parameter(l));
    const auto loss = f(tape, ids);
    tape.backward(loss);
    GradCheckResult res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Tensor g = tape.grad(ids[li]);
        const std::size_t n = leaves[li].size();
        std::vector<std::size_t> coords;
        if (n <= probes) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < probes; ++i) coords.push_back(rng.index(n));
        }
        for (auto c : coords) {
            const double orig = leaves[li][c];
            leaves[li][c] = orig + eps;
            const double up = eval_graph(f, leaves);
            leaves[li][c] = orig - eps;
            const double down = eval_graph(f, leaves);
            leaves[li][c] = orig;
            const double numeric = (up - down) / (2 * eps);
            const double diff = std::abs(numeric - g[c]);
            res.worst_abs = std::max(res.worst_abs, diff);
            if (diff > std::max(abs_tol, rel_tol * std::abs(numeric))) {
                res.ok = false;
                res.detail += "leaf " + std::to_string(li) + " coord " + std::to_string(c) + ": analytic " +
                              std::to_string(g[c]) + " numeric " + std::to_string(numeric) + "\n";
            }
        }
    }
    return res;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("nacforge_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace nac::testing
