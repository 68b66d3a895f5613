#include "nacforge/data_forge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "nacforge/csv.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/rng.hpp"

namespace nac {

namespace {

constexpr int kCsvDigits = 9;

}  // namespace

double pseudo_voigt(double r, double fwhm, double eta_mix) {
    const double r2 = r * r;
    const double f2 = fwhm * fwhm;
    const double gauss = 4.0 * std::numbers::ln2 / (std::numbers::pi * f2) * std::exp(-4.0 * std::numbers::ln2 * r2 / f2);
    // Bivariate Cauchy profile with the same FWHM.
    const double gamma = fwhm / (2.0 * std::sqrt(std::cbrt(4.0) - 1.0));
    const double lorentz = gamma / (2.0 * std::numbers::pi * std::pow(r2 + gamma * gamma, 1.5));
    return eta_mix * lorentz + (1.0 - eta_mix) * gauss;
}

std::vector<PatchSample> gen_bragg(std::size_t n, std::uint64_t seed, double noise_level, const BraggOptions& o) {
    if (n < 1) throw DomainError("gen_bragg needs n >= 1");
    if (!(noise_level >= 0.0)) throw DomainError("noise_level must be >= 0");
    if (o.eta_min < 0.0 || o.eta_max > 1.0 || o.eta_min > o.eta_max) throw DomainError("eta range must lie in [0, 1]");
    if (o.fwhm_min <= 0.0 || o.fwhm_min > o.fwhm_max) throw DomainError("FWHM range must be positive");
    if (o.center_min < 0.0 || o.center_max > kPatchSize || o.center_min >= o.center_max) {
        throw DomainError("center range must lie inside the patch");
    }
    Rng rng(seed);
    std::vector<PatchSample> out(n);
    for (auto& s : out) {
        s.cx = rng.uniform(o.center_min, o.center_max);
        s.cy = rng.uniform(o.center_min, o.center_max);
        const double eta = rng.uniform(o.eta_min, o.eta_max);
        const double fwhm = rng.uniform(o.fwhm_min, o.fwhm_max);
        double peak = 0.0;
        for (int y = 0; y < kPatchSize; ++y) {
            for (int x = 0; x < kPatchSize; ++x) {
                const double v = o.intensity * pseudo_voigt(std::hypot(x - s.cx, y - s.cy), fwhm, eta);
                s.patch[static_cast<std::size_t>(y * kPatchSize + x)] = v;
                peak = std::max(peak, v);
            }
        }
        if (noise_level > 0.0) {
            for (auto& v : s.patch) v = std::max(0.0, v + noise_level * peak * rng.normal());
        }
    }
    return out;
}

const std::array<std::array<double, kSetFeatures>, kNumJetClasses>& jet_class_directions() {
    // Triangular bipyramid on the unit sphere.
    static const std::array<std::array<double, kSetFeatures>, kNumJetClasses> dirs = {{
        {0.0, 0.0, 1.0},
        {0.0, 0.0, -1.0},
        {1.0, 0.0, 0.0},
        {-0.5, std::numbers::sqrt3 / 2.0, 0.0},
        {-0.5, -std::numbers::sqrt3 / 2.0, 0.0},
    }};
    return dirs;
}

std::vector<SetSample> gen_jets(std::size_t n, std::uint64_t seed, double separation) {
    if (n < 1) throw DomainError("gen_jets needs n >= 1");
    if (!(separation >= 0.0)) throw DomainError("separation must be >= 0");
    Rng rng(seed);
    const auto& dirs = jet_class_directions();
    std::vector<SetSample> out(n);
    for (auto& s : out) {
        s.label = static_cast<int>(rng.index(kNumJetClasses));
        s.valid_count = 4 + static_cast<int>(rng.index(kSetSize - 4 + 1));
        std::vector<std::array<double, kSetFeatures>> rows(static_cast<std::size_t>(s.valid_count));
        for (auto& row : rows) {
            for (int f = 0; f < kSetFeatures; ++f) {
                row[static_cast<std::size_t>(f)] = separation * dirs[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(f)] + rng.normal();
            }
        }
        rng.shuffle(rows);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy(rows[r].begin(), rows[r].end(), s.particles.begin() + static_cast<std::ptrdiff_t>(r * kSetFeatures));
        }
    }
    return out;
}

int jet_bayes_label(const SetSample& s) {
    std::array<double, kSetFeatures> sum{};
    for (int r = 0; r < s.valid_count; ++r) {
        for (int f = 0; f < kSetFeatures; ++f) sum[static_cast<std::size_t>(f)] += s.particles[static_cast<std::size_t>(r * kSetFeatures + f)];
    }
    const auto& dirs = jet_class_directions();
    int best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kNumJetClasses; ++c) {
        double dot = 0.0;
        for (int f = 0; f < kSetFeatures; ++f) dot += dirs[static_cast<std::size_t>(c)][static_cast<std::size_t>(f)] * sum[static_cast<std::size_t>(f)];
        if (dot > best_dot) {
            best_dot = dot;
            best = c;
        }
    }
    return best;
}

double jet_bayes_accuracy(double separation, std::size_t n, std::uint64_t seed) {
    std::size_t hits = 0;
    for (const auto& s : gen_jets(n, seed, separation)) hits += jet_bayes_label(s) == s.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(n);
}

double separation_for_bayes_accuracy(double target, std::size_t n, std::uint64_t seed) {
    if (!(target > 0.2 && target < 1.0)) throw DomainError("target Bayes accuracy must lie in (0.2, 1)");
    double lo = 0.0;
    double hi = 1.0;
    while (jet_bayes_accuracy(hi, n, seed) < target) {
        hi *= 2.0;
        if (hi > 1e3) throw DomainError("target Bayes accuracy is not reachable at this sample size");
    }
    for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        (jet_bayes_accuracy(mid, n, seed) < target ? lo : hi) = mid;
    }
    return hi;
}

std::size_t Dataset::feature_size() const {
    return task == Task::PatchRegression ? static_cast<std::size_t>(kPatchPixels) : static_cast<std::size_t>(kSetValues);
}

Shape Dataset::sample_shape() const { return default_input_shape(task); }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.task = task;
    d.n = indices.size();
    const std::size_t f = feature_size();
    d.features.reserve(d.n * f);
    for (std::size_t i : indices) {
        if (i >= n) throw DomainError("subset index out of range");
        d.features.insert(d.features.end(), features.begin() + static_cast<std::ptrdiff_t>(i * f),
                          features.begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
        if (task == Task::PatchRegression) {
            d.targets.push_back(targets[2 * i]);
            d.targets.push_back(targets[2 * i + 1]);
        } else {
            d.labels.push_back(labels[i]);
            d.valid_counts.push_back(valid_counts[i]);
        }
    }
    return d;
}

Dataset make_dataset(const std::vector<PatchSample>& samples) {
    Dataset d;
    d.task = Task::PatchRegression;
    d.n = samples.size();
    d.features.reserve(d.n * kPatchPixels);
    for (const auto& s : samples) {
        d.features.insert(d.features.end(), s.patch.begin(), s.patch.end());
        d.targets.push_back(s.cx);
        d.targets.push_back(s.cy);
    }
    return d;
}

Dataset make_dataset(const std::vector<SetSample>& samples) {
    Dataset d;
    d.task = Task::SetClassification;
    d.n = samples.size();
    d.features.reserve(d.n * kSetValues);
    for (const auto& s : samples) {
        d.features.insert(d.features.end(), s.particles.begin(), s.particles.end());
        d.labels.push_back(s.label);
        d.valid_counts.push_back(s.valid_count);
    }
    return d;
}

std::vector<PatchSample> patch_samples(const Dataset& d) {
    if (d.task != Task::PatchRegression) throw SchemaError("dataset does not hold patches");
    std::vector<PatchSample> out(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        std::copy_n(d.features.begin() + static_cast<std::ptrdiff_t>(i * kPatchPixels), kPatchPixels, out[i].patch.begin());
        out[i].cx = d.targets[2 * i];
        out[i].cy = d.targets[2 * i + 1];
    }
    return out;
}

std::vector<SetSample> set_samples(const Dataset& d) {
    if (d.task != Task::SetClassification) throw SchemaError("dataset does not hold sets");
    std::vector<SetSample> out(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
        std::copy_n(d.features.begin() + static_cast<std::ptrdiff_t>(i * kSetValues), kSetValues, out[i].particles.begin());
        out[i].label = d.labels[i];
        out[i].valid_count = d.valid_counts[i];
    }
    return out;
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(seed);
    rng.shuffle(perm);
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    SplitIndices s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    return s;
}

Splits split_dataset(const Dataset& d, std::uint64_t seed) {
    const auto idx = split_indices(d.n, seed);
    return {d.subset(idx.train), d.subset(idx.val), d.subset(idx.test)};
}

Standardizer fit_standardizer(const Dataset& train) {
    if (train.n == 0) throw EmptyDataset("cannot fit standardization on an empty split");
    const bool sets = train.task == Task::SetClassification;
    const std::size_t nf = sets ? kSetFeatures : kPatchPixels;
    std::vector<double> sum(nf, 0.0), sum_sq(nf, 0.0);
    std::vector<double> count(nf, 0.0);
    for (std::size_t i = 0; i < train.n; ++i) {
        const double* row = train.features.data() + i * train.feature_size();
        if (sets) {
            for (int r = 0; r < train.valid_counts[i]; ++r) {
                for (std::size_t f = 0; f < nf; ++f) {
                    const double v = row[static_cast<std::size_t>(r) * nf + f];
                    sum[f] += v;
                    sum_sq[f] += v * v;
                    count[f] += 1.0;
                }
            }
        } else {
            for (std::size_t f = 0; f < nf; ++f) {
                sum[f] += row[f];
                sum_sq[f] += row[f] * row[f];
                count[f] += 1.0;
            }
        }
    }
    Standardizer s;
    s.mean.resize(nf);
    s.stddev.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        s.mean[f] = count[f] > 0 ? sum[f] / count[f] : 0.0;
        const double var = count[f] > 0 ? sum_sq[f] / count[f] - s.mean[f] * s.mean[f] : 0.0;
        const double sd = std::sqrt(std::max(var, 0.0));
        s.stddev[f] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

void Standardizer::apply(Dataset& d) const {
    const bool sets = d.task == Task::SetClassification;
    const std::size_t nf = mean.size();
    for (std::size_t i = 0; i < d.n; ++i) {
        double* row = d.features.data() + i * d.feature_size();
        const std::size_t rows = sets ? static_cast<std::size_t>(d.valid_counts[i]) : 1;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t f = 0; f < nf; ++f) {
                double& v = row[r * nf + f];
                v = (v - mean[f]) / stddev[f];
            }
        }
    }
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean}, {"stddev", stddev}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
    Standardizer s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stddev = j.at("stddev").get<std::vector<double>>();
    if (s.mean.size() != s.stddev.size()) throw SchemaError("standardizer mean/stddev length mismatch");
    return s;
}

void write_patches_csv(const std::string& path, const std::vector<PatchSample>& samples) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write '" + path + "'");
    for (int i = 0; i < kPatchPixels; ++i) out << 'p' << i << ',';
    out << "cx,cy\n";
    for (const auto& s : samples) {
        for (double v : s.patch) out << csv::format_digits(v, kCsvDigits) << ',';
        out << csv::format_digits(s.cx, kCsvDigits) << ',' << csv::format_digits(s.cy, kCsvDigits) << '\n';
    }
}

void write_sets_csv(const std::string& path, const std::vector<SetSample>& samples) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write '" + path + "'");
    for (int i = 0; i < kSetValues; ++i) out << 'f' << i << ',';
    out << "label,valid_count\n";
    for (const auto& s : samples) {
        for (double v : s.particles) out << csv::format_digits(v, kCsvDigits) << ',';
        out << s.label << ',' << s.valid_count << '\n';
    }
}

namespace {

// Calls `row_fn(fields, line_number)` for each data row; skips one header row.
template <class F>
void read_csv_rows(const std::string& path, std::size_t expected_cols, F&& row_fn) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    std::size_t rows = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = csv::split_line(line);
        if (first) {
            first = false;
            double probe = 0.0;
            if (!fields.empty() && !csv::parse_double(fields[0], probe)) {
                if (fields.size() != expected_cols) {
                    throw SchemaError("header has " + std::to_string(fields.size()) + " columns, expected " +
                                      std::to_string(expected_cols));
                }
                continue;
            }
        }
        if (fields.size() != expected_cols) {
            throw ParseError(line_no, "expected " + std::to_string(expected_cols) + " columns, got " +
                                          std::to_string(fields.size()));
        }
        row_fn(fields, line_no);
        ++rows;
    }
    if (rows == 0) throw SchemaError("'" + path + "' contains no data rows");
}

double field_double(const std::string& field, std::size_t line, std::size_t col) {
    double v = 0.0;
    if (!csv::parse_double(field, v) || !std::isfinite(v)) {
        throw ParseError(line, "column " + std::to_string(col + 1) + " is not a finite number: '" + field + "'");
    }
    return v;
}

}  // namespace

std::vector<PatchSample> load_patches(const std::string& path) {
    std::vector<PatchSample> out;
    read_csv_rows(path, kPatchPixels + 2, [&](const std::vector<std::string>& f, std::size_t line) {
        PatchSample s;
        for (std::size_t i = 0; i < static_cast<std::size_t>(kPatchPixels); ++i) {
            s.patch[i] = field_double(f[i], line, i);
            if (s.patch[i] < 0.0) throw ParseError(line, "negative intensity in column " + std::to_string(i + 1));
        }
        s.cx = field_double(f[kPatchPixels], line, kPatchPixels);
        s.cy = field_double(f[kPatchPixels + 1], line, kPatchPixels + 1);
        if (s.cx < 0.0 || s.cx >= kPatchSize || s.cy < 0.0 || s.cy >= kPatchSize) {
            throw ParseError(line, "peak center outside the 11x11 patch");
        }
        out.push_back(s);
    });
    return out;
}

std::vector<SetSample> load_sets(const std::string& path) {
    std::vector<SetSample> out;
    read_csv_rows(path, kSetValues + 2, [&](const std::vector<std::string>& f, std::size_t line) {
        SetSample s;
        for (std::size_t i = 0; i < static_cast<std::size_t>(kSetValues); ++i) s.particles[i] = field_double(f[i], line, i);
        long long label = 0;
        long long count = 0;
        if (!csv::parse_int(f[kSetValues], label) || label < 0 || label >= kNumJetClasses) {
            throw ParseError(line, "label must be an integer in [0, 4], got '" + f[kSetValues] + "'");
        }
        if (!csv::parse_int(f[kSetValues + 1], count) || count < 0 || count > kSetSize) {
            throw ParseError(line, "valid_count must be an integer in [0, 8], got '" + f[kSetValues + 1] + "'");
        }
        s.label = static_cast<int>(label);
        s.valid_count = static_cast<int>(count);
        for (std::size_t i = static_cast<std::size_t>(count) * kSetFeatures; i < static_cast<std::size_t>(kSetValues); ++i) {
            if (s.particles[i] != 0.0) throw ParseError(line, "padding rows beyond valid_count must be zero");
        }
        out.push_back(s);
    });
    return out;
}

}  // namespace nac
