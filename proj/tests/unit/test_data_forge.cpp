#include <doctest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "nacforge/csv.hpp"
#include "nacforge/data_forge.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/train.hpp"
#include "test_util.hpp"

using namespace nac;

namespace {

std::size_t argmax_pixel(const PatchSample& s) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.patch.size(); ++i) {
        if (s.patch[i] > s.patch[best]) best = i;
    }
    return best;
}

// Sum of the profile over the 11x11 pixel grid for a centred peak.
double patch_mass(double fwhm, double eta) {
    double total = 0.0;
    for (int y = 0; y < kPatchSize; ++y) {
        for (int x = 0; x < kPatchSize; ++x) total += pseudo_voigt(std::hypot(x - 5.0, y - 5.0), fwhm, eta);
    }
    return total;
}

// Radial quadrature of the profile over the plane up to radius R.
double radial_integral(double fwhm, double eta, double R, int steps) {
    const double h = R / steps;
    double acc = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double r = (i + 0.5) * h;
        acc += 2.0 * std::numbers::pi * r * pseudo_voigt(r, fwhm, eta) * h;
    }
    return acc;
}

double round9(double v) {
    double out = 0.0;
    csv::parse_double(csv::format_digits(v, 9), out);
    return out;
}

}  // namespace

TEST_CASE("noise-free gaussian peak has its maximum at the nearest pixel") {
    BraggOptions o;
    o.eta_min = 0.0;
    o.eta_max = 0.0;
    const auto samples = gen_bragg(500, 11, 0.0, o);
    for (const auto& s : samples) {
        const auto idx = argmax_pixel(s);
        CHECK(static_cast<long>(idx % kPatchSize) == std::lround(s.cx));
        CHECK(static_cast<long>(idx / kPatchSize) == std::lround(s.cy));
    }
}

TEST_CASE("generated centers lie in [3, 8) and intensities are nonnegative") {
    for (double noise : {0.0, 0.05, 0.5}) {
        for (const auto& s : gen_bragg(400, 3, noise)) {
            CHECK(s.cx >= 3.0);
            CHECK(s.cx < 8.0);
            CHECK(s.cy >= 3.0);
            CHECK(s.cy < 8.0);
            for (double v : s.patch) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("pseudo-voigt profile integrates to one over the plane") {
    for (double eta : {0.0, 0.3, 0.7}) {
        for (double fwhm : {1.5, 2.0, 3.0}) {
            // Cauchy tail beyond R in closed form.
            const double gamma = fwhm / (2.0 * std::sqrt(std::cbrt(4.0) - 1.0));
            const double R = 50.0;
            const double tail = eta * gamma / std::sqrt(R * R + gamma * gamma);
            CHECK(radial_integral(fwhm, eta, R, 200'000) + tail == doctest::Approx(1.0).epsilon(1e-7));
        }
    }
    // Half maximum at r = fwhm / 2 for both components.
    for (double eta : {0.0, 1.0}) {
        CHECK(pseudo_voigt(1.0, 2.0, eta) == doctest::Approx(0.5 * pseudo_voigt(0.0, 2.0, eta)).epsilon(1e-12));
    }
}

TEST_CASE("in-patch intensity decreases as the peak widens") {
    for (double eta : {0.3, 0.5, 0.7}) {
        double prev = patch_mass(1.5, eta);
        for (double fwhm = 1.6; fwhm <= 3.0 + 1e-9; fwhm += 0.1) {
            const double m = patch_mass(fwhm, eta);
            CHECK(m < prev);
            prev = m;
        }
    }
}

TEST_CASE("generators are pure in their inputs") {
    CHECK(gen_bragg(20, 4, 0.1) == gen_bragg(20, 4, 0.1));
    CHECK_FALSE(gen_bragg(20, 4, 0.1) == gen_bragg(20, 5, 0.1));
    CHECK(gen_jets(50, 4, 2.0) == gen_jets(50, 4, 2.0));
    CHECK_FALSE(gen_jets(50, 4, 2.0) == gen_jets(50, 6, 2.0));
}

TEST_CASE("generator domain errors") {
    CHECK_THROWS_AS(gen_bragg(0, 1, 0.0), DomainError);
    CHECK_THROWS_AS(gen_bragg(1, 1, -0.1), DomainError);
    CHECK_THROWS_AS(gen_jets(0, 1, 1.0), DomainError);
    CHECK_THROWS_AS(gen_jets(1, 1, -1.0), DomainError);
    CHECK_THROWS_AS(gen_jets(1, 1, std::nan("")), DomainError);
}

TEST_CASE("jet labels are balanced and set sizes valid") {
    const auto sets = gen_jets(10'000, 21, 2.0);
    std::array<int, kNumJetClasses> counts{};
    std::set<int> sizes;
    for (const auto& s : sets) {
        counts[static_cast<std::size_t>(s.label)]++;
        CHECK(s.valid_count >= 4);
        CHECK(s.valid_count <= 8);
        sizes.insert(s.valid_count);
        for (std::size_t i = static_cast<std::size_t>(s.valid_count) * kSetFeatures; i < s.particles.size(); ++i) {
            CHECK(s.particles[i] == 0.0);
        }
    }
    for (int c : counts) CHECK(std::abs(c / 10'000.0 - 0.2) <= 0.02);
    CHECK(sizes.size() == 5);
}

TEST_CASE("class directions are distinct unit vectors") {
    const auto& d = jet_class_directions();
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(std::hypot(d[i][0], d[i][1], d[i][2]) == doctest::Approx(1.0));
        for (std::size_t j = i + 1; j < d.size(); ++j) {
            CHECK(std::hypot(d[i][0] - d[j][0], d[i][1] - d[j][1], d[i][2] - d[j][2]) > 1.0);
        }
    }
}

TEST_CASE("bayes rule matches an explicit likelihood computation") {
    const auto& dirs = jet_class_directions();
    for (const auto& s : gen_jets(500, 41, 1.0)) {
        // Full Gaussian log-likelihood per class, unit covariance.
        int best = 0;
        double best_ll = -1e300;
        for (int c = 0; c < kNumJetClasses; ++c) {
            double ll = 0.0;
            for (int r = 0; r < s.valid_count; ++r) {
                for (int f = 0; f < kSetFeatures; ++f) {
                    const double diff = s.particles[static_cast<std::size_t>(r * kSetFeatures + f)] -
                                        dirs[static_cast<std::size_t>(c)][static_cast<std::size_t>(f)];
                    ll -= 0.5 * diff * diff;
                }
            }
            if (ll > best_ll) {
                best_ll = ll;
                best = c;
            }
        }
        CHECK(jet_bayes_label(s) == best);
    }
}

TEST_CASE("bayes accuracy spans chance to certainty") {
    CHECK(std::abs(jet_bayes_accuracy(0.0, 20000, 1) - 0.2) < 0.015);
    CHECK(jet_bayes_accuracy(5.0, 20000, 1) > 0.999);
    CHECK(jet_bayes_accuracy(1.0, 20000, 1) < jet_bayes_accuracy(1.2, 20000, 1));
    const double s90 = separation_for_bayes_accuracy(0.9);
    CHECK(s90 > 0.9);
    CHECK(s90 < 1.2);
    CHECK(std::abs(jet_bayes_accuracy(s90, 50000, 99) - 0.9) < 0.01);
    CHECK_THROWS_AS(separation_for_bayes_accuracy(0.1), DomainError);
    CHECK_THROWS_AS(separation_for_bayes_accuracy(1.0), DomainError);
}

TEST_CASE("zero separation leaves nothing to learn") {
    const auto a = builtin_model("deepsets_tiny");
    const Dataset train_set = make_dataset(gen_jets(2000, 31, 0.0));
    const Dataset test_set = make_dataset(gen_jets(10'000, 32, 0.0));
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 64;
    cfg.learning_rate = 0.05;
    const auto r = train(a, init_params(a, 5), train_set, cfg);
    CHECK(evaluate(a, r.params, test_set) <= 25.0);
}

TEST_CASE("patch CSV round trip is exact for 9-digit values") {
    testing::TempDir dir("forge");
    auto samples = gen_bragg(30, 2, 0.1);
    for (auto& s : samples) {
        for (auto& v : s.patch) v = round9(v);
        s.cx = round9(s.cx);
        s.cy = round9(s.cy);
    }
    write_patches_csv(dir.file("p.csv"), samples);
    CHECK(load_patches(dir.file("p.csv")) == samples);
}

TEST_CASE("set CSV round trip is exact for 9-digit values") {
    testing::TempDir dir("forge");
    auto samples = gen_jets(40, 2, 1.5);
    for (auto& s : samples) {
        for (auto& v : s.particles) v = round9(v);
    }
    write_sets_csv(dir.file("s.csv"), samples);
    CHECK(load_sets(dir.file("s.csv")) == samples);
}

TEST_CASE("malformed CSV rows are rejected with their line") {
    testing::TempDir dir("forge");
    const auto path = dir.file("bad.csv");
    write_patches_csv(path, gen_bragg(3, 1, 0.0));
    {
        std::ofstream out(path, std::ios::app);
        for (int i = 0; i < 119; ++i) out << "0,";
        out << "0\n";
    }
    try {
        load_patches(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 5);
        CHECK(std::string(e.what()).find("line 5") != std::string::npos);
    }

    const auto sets = dir.file("bad_sets.csv");
    {
        std::ofstream out(sets);
        for (int i = 0; i < kSetValues; ++i) out << "1,";
        out << "7,8\n";
    }
    CHECK_THROWS_AS(load_sets(sets), ParseError);
    {
        std::ofstream out(sets);
        for (int i = 0; i < kSetValues; ++i) out << (i < 3 ? "1," : "0,");
        out << "2,0\n";
    }
    CHECK_THROWS_AS(load_sets(sets), ParseError);
    {
        std::ofstream out(sets);
        for (int i = 0; i < kSetValues; ++i) out << "0,";
        out << "2,x\n";
    }
    CHECK_THROWS_AS(load_sets(sets), ParseError);
}

TEST_CASE("empty or missing CSV files are schema errors") {
    testing::TempDir dir("forge");
    { std::ofstream out(dir.file("empty.csv")); }
    CHECK_THROWS_AS(load_patches(dir.file("empty.csv")), SchemaError);
    CHECK_THROWS_AS(load_sets(dir.file("empty.csv")), SchemaError);
    CHECK_THROWS_AS(load_sets(dir.file("missing.csv")), SchemaError);
    {
        std::ofstream out(dir.file("header_only.csv"));
        out << "a,b,c\n";
    }
    CHECK_THROWS_AS(load_sets(dir.file("header_only.csv")), SchemaError);
}

TEST_CASE("splits are disjoint, complete and deterministic") {
    for (std::size_t n : {10u, 97u, 1000u}) {
        const auto s = split_indices(n, 9);
        CHECK(s.train.size() == n * 8 / 10);
        CHECK(s.val.size() == n / 10);
        std::set<std::size_t> all(s.train.begin(), s.train.end());
        all.insert(s.val.begin(), s.val.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == n);
        CHECK(s.train.size() + s.val.size() + s.test.size() == n);
        const auto again = split_indices(n, 9);
        CHECK(again.train == s.train);
        CHECK(again.test == s.test);
    }
    CHECK_FALSE(split_indices(100, 1).train == split_indices(100, 2).train);

    const Dataset d = make_dataset(gen_jets(50, 1, 1.0));
    const auto sp = split_dataset(d, 3);
    CHECK(sp.train.n == 40);
    CHECK(sp.val.n == 5);
    CHECK(sp.test.n == 5);
    CHECK(set_samples(sp.train).front() == set_samples(d)[split_indices(50, 3).train.front()]);
}

TEST_CASE("dataset conversion round trips") {
    const auto p = gen_bragg(7, 1, 0.1);
    CHECK(patch_samples(make_dataset(p)) == p);
    const auto s = gen_jets(7, 1, 1.0);
    CHECK(set_samples(make_dataset(s)) == s);
    CHECK_THROWS_AS(set_samples(make_dataset(p)), SchemaError);
    CHECK_THROWS_AS(patch_samples(make_dataset(s)), SchemaError);
}

TEST_CASE("standardizer uses valid rows only") {
    Dataset d = make_dataset(gen_jets(500, 4, 2.0));
    const auto st = fit_standardizer(d);
    REQUIRE(st.mean.size() == static_cast<std::size_t>(kSetFeatures));
    st.apply(d);
    std::array<double, kSetFeatures> sum{}, sq{};
    double count = 0;
    for (std::size_t i = 0; i < d.n; ++i) {
        for (int r = 0; r < kSetSize; ++r) {
            for (int f = 0; f < kSetFeatures; ++f) {
                const double v = d.features[i * kSetValues + static_cast<std::size_t>(r * kSetFeatures + f)];
                if (r >= d.valid_counts[i]) {
                    CHECK(v == 0.0);
                } else {
                    sum[static_cast<std::size_t>(f)] += v;
                    sq[static_cast<std::size_t>(f)] += v * v;
                }
            }
            if (r < d.valid_counts[i]) count += 1;
        }
    }
    for (int f = 0; f < kSetFeatures; ++f) {
        CHECK(sum[static_cast<std::size_t>(f)] / count == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));
        CHECK(sq[static_cast<std::size_t>(f)] / count == doctest::Approx(1.0).epsilon(1e-9));
    }
    const auto back = Standardizer::from_json(st.to_json());
    CHECK(back.mean == st.mean);
    CHECK(back.stddev == st.stddev);
    CHECK_THROWS_AS(fit_standardizer(Dataset{}), EmptyDataset);
}
