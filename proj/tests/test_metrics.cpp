#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "dropnet/metrics.hpp"

using namespace dropnet;

namespace {

// Stats with one FC-style layer per entry of `layout`, E values given per unit.
ActivationStats make_stats(const std::vector<std::vector<double>>& e_per_layer,
                           std::size_t samples = 10) {
    ActivationStats s;
    s.samples = samples;
    for (std::size_t l = 0; l < e_per_layer.size(); ++l)
        for (std::size_t u = 0; u < e_per_layer[l].size(); ++u)
            s.units.push_back(
                {l, u, e_per_layer[l][u] * static_cast<double>(samples), 0, 1});
    return s;
}

Mask make_mask(const std::vector<std::size_t>& widths) {
    Mask m;
    for (auto w : widths) m.points.emplace_back(w, std::uint8_t{1});
    return m;
}

}  // namespace

TEST_CASE("score: table rows for each metric") {
    auto stats = make_stats({{0.1, 0.5}});
    auto mask = make_mask({2});

    auto min_rep = score(stats, mask, Metric::Minimum);
    CHECK(min_rep.units[0].score == doctest::Approx(0.1));
    CHECK(min_rep.units[1].score == doctest::Approx(0.5));

    auto max_rep = score(stats, mask, Metric::Maximum);
    CHECK(max_rep.units[0].score == doctest::Approx(-0.1));
    CHECK(max_rep.units[1].score == doctest::Approx(-0.5));

    auto rnd_rep = score(stats, mask, Metric::Random);
    for (const auto& u : rnd_rep.units) CHECK(u.score == 0.0);
}

TEST_CASE("score: apoz fraction from zero counts") {
    // Activations [0, 0, 3, 5] over 4 samples: zero fraction 0.5, score -0.5.
    ActivationStats s;
    s.samples = 4;
    s.units.push_back({0, 0, 8.0, 2, 1});
    auto mask = make_mask({1});
    // never-empty guard makes a 1-unit layer undroppable, but scoring still works
    auto rep = score(s, mask, Metric::Apoz);
    CHECK(rep.units[0].score == doctest::Approx(-0.5));

    s.samples = 0;
    CHECK_THROWS_AS(score(s, mask, Metric::Apoz), std::invalid_argument);
}

TEST_CASE("score excludes masked units") {
    auto stats = make_stats({{0.1, 0.5, 0.3}});
    auto mask = make_mask({3});
    mask.points[0][1] = 0;
    auto rep = score(stats, mask, Metric::Minimum);
    CHECK(rep.units.size() == 2);
    for (const auto& u : rep.units) CHECK(u.global_id != 1);
}

TEST_CASE("select_drops: two lowest scores globally") {
    auto stats = make_stats({{0.1, 0.5, 0.3, 0.2}});
    auto mask = make_mask({4});
    Rng rng(1);
    auto drops = select_drops(score(stats, mask, Metric::Minimum), 0.5, mask, rng);
    CHECK(drops == std::set<std::size_t>{0, 3});
}

TEST_CASE("select_drops: layer-wise budget formula") {
    auto stats = make_stats({std::vector<double>(10, 1.0), std::vector<double>(10, 1.0)});
    for (std::size_t i = 0; i < 20; ++i) stats.units[i].sum_abs = (double)i;  // distinct
    auto mask = make_mask({10, 10});
    Rng rng(2);
    auto drops = select_drops(score(stats, mask, Metric::MinimumLayer), 0.2, mask, rng);
    std::size_t per_layer[2] = {0, 0};
    for (auto g : drops) per_layer[g / 10]++;
    CHECK(per_layer[0] == 2);
    CHECK(per_layer[1] == 2);
}

TEST_CASE("select_drops: global argmin property") {
    Rng gen(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> e(2);
        for (auto& layer : e)
            for (int i = 0; i < 8; ++i) layer.push_back(gen.uniform());
        auto stats = make_stats(e);
        auto mask = make_mask({8, 8});
        Rng rng(trial);
        auto rep = score(stats, mask, Metric::Minimum);
        auto drops = select_drops(rep, 0.25, mask, rng);
        double max_dropped = -1e18, min_kept = 1e18;
        for (const auto& u : rep.units) {
            if (drops.count(u.global_id)) max_dropped = std::max(max_dropped, u.score);
            else min_kept = std::min(min_kept, u.score);
        }
        CHECK(max_dropped <= min_kept);
    }
}

TEST_CASE("select_drops: minimum and maximum pick disjoint sets") {
    Rng gen(4);
    std::vector<double> e;
    for (int i = 0; i < 12; ++i) e.push_back(0.1 + gen.uniform());
    auto stats = make_stats({e});
    auto mask = make_mask({12});
    Rng r1(7), r2(7);
    auto lo = select_drops(score(stats, mask, Metric::Minimum), 0.25, mask, r1);
    auto hi = select_drops(score(stats, mask, Metric::Maximum), 0.25, mask, r2);
    for (auto g : lo) CHECK(hi.count(g) == 0);
}

TEST_CASE("select_drops: argmin invariant under positive scaling") {
    std::vector<double> e = {0.4, 0.1, 0.9, 0.2, 0.7, 0.3};
    auto mask = make_mask({6});
    Rng r1(5), r2(5);
    auto a = select_drops(score(make_stats({e}), mask, Metric::Minimum), 0.34, mask, r1);
    for (auto& v : e) v *= 17.0;
    auto b = select_drops(score(make_stats({e}), mask, Metric::Minimum), 0.34, mask, r2);
    CHECK(a == b);
}

TEST_CASE("select_drops: never empties a layer") {
    auto stats = make_stats({{0.1, 0.2}, {5.0, 6.0, 7.0}});
    auto mask = make_mask({2, 3});
    Rng rng(6);
    // p = 1.0 would drop everything; the guard leaves one unit per layer.
    auto drops = select_drops(score(stats, mask, Metric::Minimum), 1.0, mask, rng);
    apply_drops(mask, drops);
    CHECK(mask.live_in(0) == 1);
    CHECK(mask.live_in(1) == 1);

    // Layer-wise variant too.
    auto mask2 = make_mask({2, 3});
    Rng rng2(6);
    auto d2 = select_drops(score(stats, mask2, Metric::MinimumLayer), 1.0, mask2, rng2);
    apply_drops(mask2, d2);
    CHECK(mask2.live_in(0) == 1);
    CHECK(mask2.live_in(1) == 1);
}

TEST_CASE("select_drops: tie-break determinism and uniformity") {
    const std::size_t n = 10, k = 2;
    auto stats = make_stats({std::vector<double>(n, 1.0)});
    auto mask = make_mask({n});

    Rng r1(11), r2(11);
    auto a = select_drops(score(stats, mask, Metric::Random), 0.2, mask, r1);
    auto b = select_drops(score(stats, mask, Metric::Random), 0.2, mask, r2);
    CHECK(a == b);

    // Chi-squared uniformity of per-unit drop frequency over 1e4 trials.
    // dof = 9; critical value at p = 0.01 is 21.666.
    std::vector<double> counts(n, 0.0);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        Rng rng(1000 + static_cast<std::uint64_t>(t));
        for (auto g : select_drops(score(stats, mask, Metric::Random), 0.2, mask, rng))
            counts[g] += 1.0;
    }
    const double expected = static_cast<double>(trials * k) / n;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 21.666);
}

TEST_CASE("apply_drops: mask updates and error paths") {
    auto mask = make_mask({4});
    apply_drops(mask, {1});
    CHECK(mask.points[0] == std::vector<std::uint8_t>{1, 0, 1, 1});
    CHECK(mask.live() == 3);

    CHECK_THROWS_AS(apply_drops(mask, {1}), std::invalid_argument);

    std::size_t before = mask.live();
    apply_drops(mask, {0, 2});
    CHECK(mask.live() == before - 2);
}

TEST_CASE("select_drops: argument validation") {
    auto stats = make_stats({{0.1, 0.2}});
    auto mask = make_mask({2});
    Rng rng(1);
    auto rep = score(stats, mask, Metric::Minimum);
    CHECK_THROWS_AS(select_drops(rep, 0.0, mask, rng), std::invalid_argument);
    CHECK_THROWS_AS(select_drops(rep, 1.5, mask, rng), std::invalid_argument);

    ImportanceReport empty;
    empty.metric = Metric::Minimum;
    CHECK_THROWS_AS(select_drops(empty, 0.5, mask, rng), std::runtime_error);
}
