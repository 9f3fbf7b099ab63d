#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "aspectnmt/rng.hpp"

using namespace aspectnmt;

TEST_CASE("rng is deterministic per seed and differs across seeds") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_equal_to_c = false;
    for (int i = 0; i < 64; ++i) {
        auto va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        all_equal = all_equal && va == vb;
        any_equal_to_c = any_equal_to_c || va == vc;
    }
    CHECK(all_equal);
    CHECK_FALSE(any_equal_to_c); // 64 collisions in a row would be absurd
}

TEST_CASE("uniform stays in [0,1) and has a sane mean") {
    Rng r(7);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers the full range without bias") {
    Rng r(9);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[r.uniform_int(10)];
    for (int c : counts) {
        // 3 sigma around n/10 under the binomial
        CHECK(std::abs(c - n / 10) < 3 * std::sqrt(n * 0.1 * 0.9));
    }
}

TEST_CASE("normal has roughly standard moments") {
    Rng r(11);
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("weighted_choice follows the weights") {
    Rng r(13);
    std::vector<double> w = {1.0, 3.0, 6.0};
    std::vector<int> counts(3, 0);
    const int n = 60000;
    for (int i = 0; i < n; ++i) ++counts[r.weighted_choice(w)];
    CHECK(std::abs(counts[0] - n * 0.1) < 3 * std::sqrt(n * 0.1 * 0.9));
    CHECK(std::abs(counts[1] - n * 0.3) < 3 * std::sqrt(n * 0.3 * 0.7));
    CHECK(std::abs(counts[2] - n * 0.6) < 3 * std::sqrt(n * 0.6 * 0.4));
}

TEST_CASE("shuffle permutes deterministically for a fixed seed") {
    std::vector<int> v1 = {1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> v2 = v1;
    Rng a(99), b(99);
    a.shuffle(v1);
    b.shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}
