#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nacforge/arch_ir.hpp"

namespace nac {

inline constexpr int kPatchPixels = kPatchSize * kPatchSize;
inline constexpr int kSetValues = kSetSize * kSetFeatures;

struct PatchSample {
    std::array<double, kPatchPixels> patch{};  // row-major, row = y
    double cx = 0.0;
    double cy = 0.0;
    bool operator==(const PatchSample&) const = default;
};

struct SetSample {
    std::array<double, kSetValues> particles{};  // 8 rows of (pT, eta, phi)
    int label = 0;
    int valid_count = 0;
    bool operator==(const SetSample&) const = default;
};

struct BraggOptions {
    double eta_min = 0.3;
    double eta_max = 0.7;
    double fwhm_min = 1.5;
    double fwhm_max = 3.0;
    double center_min = 3.0;
    double center_max = 8.0;
    // Integrated intensity of the (untruncated) profile.
    double intensity = 10.0;
};

// Pseudo-Voigt peak value at distance r from the center; the profile
// integrates to 1 over the plane.
double pseudo_voigt(double r, double fwhm, double eta_mix);

std::vector<PatchSample> gen_bragg(std::size_t n, std::uint64_t seed, double noise_level,
                                   const BraggOptions& options = {});

// Class means for the synthetic jet generator, before scaling by separation.
const std::array<std::array<double, kSetFeatures>, kNumJetClasses>& jet_class_directions();

std::vector<SetSample> gen_jets(std::size_t n, std::uint64_t seed, double separation);

// Bayes-optimal class for gen_jets samples. All class means have unit norm,
// so the posterior argmax is the direction best aligned with the particle sum.
int jet_bayes_label(const SetSample& s);

// Monte-Carlo accuracy (fraction in [0, 1]) of the Bayes rule on n samples.
double jet_bayes_accuracy(double separation, std::size_t n, std::uint64_t seed);

// Separation whose Monte-Carlo Bayes accuracy reaches `target` (bisection
// with common random numbers); target must lie in (0.2, 1).
double separation_for_bayes_accuracy(double target, std::size_t n = 20000, std::uint64_t seed = 0);

// Task-agnostic flat storage consumed by training.
struct Dataset {
    Task task = Task::PatchRegression;
    std::size_t n = 0;
    std::vector<double> features;   // n x feature_size
    std::vector<double> targets;    // n x 2 (patch centers, pixels)
    std::vector<int> labels;        // n (set class)
    std::vector<int> valid_counts;  // n (set sizes)

    std::size_t feature_size() const;
    Shape sample_shape() const;
    Dataset subset(std::span<const std::size_t> indices) const;
    bool operator==(const Dataset&) const = default;
};

Dataset make_dataset(const std::vector<PatchSample>& samples);
Dataset make_dataset(const std::vector<SetSample>& samples);
std::vector<PatchSample> patch_samples(const Dataset& d);
std::vector<SetSample> set_samples(const Dataset& d);

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Deterministic disjoint 0.8 / 0.1 / 0.1 split.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};
SplitIndices split_indices(std::size_t n, std::uint64_t seed);
Splits split_dataset(const Dataset& d, std::uint64_t seed);

// Per-feature zero-mean/unit-variance scaling. For sets only the valid rows
// enter the statistics and only valid rows are rescaled.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    void apply(Dataset& d) const;
    nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& j);
};
Standardizer fit_standardizer(const Dataset& train);

// CSV: patches = 121 intensities, cx, cy; sets = 24 features, label, valid_count.
void write_patches_csv(const std::string& path, const std::vector<PatchSample>& samples);
void write_sets_csv(const std::string& path, const std::vector<SetSample>& samples);
std::vector<PatchSample> load_patches(const std::string& path);
std::vector<SetSample> load_sets(const std::string& path);

}  // namespace nac
