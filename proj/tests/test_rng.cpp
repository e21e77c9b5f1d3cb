#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rtt/rng.hpp"

using rtt::Rng;

TEST_CASE("same seed reproduces the sequence exactly") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform01 stays in [0,1)") {
    Rng rng(1);
    double mn = 1.0, mx = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform01();
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    CHECK(mn < 0.01);
    CHECK(mx > 0.99);
}

TEST_CASE("normal moments at 1e6 draws") {
    Rng rng(7);
    const int n = 1000000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("uniform_int covers the range without bias artifacts") {
    Rng rng(3);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 100000; ++i) counts[static_cast<std::size_t>(rng.uniform_int(10))]++;
    for (int c : counts) CHECK(std::abs(c - 10000) < 600);
}

TEST_CASE("derived streams are independent of parent consumption") {
    Rng a(99), b(99);
    a.next_u64();  // consume from parent only
    Rng da = a.derive("stream", 5);
    Rng db = b.derive("stream", 5);
    for (int i = 0; i < 100; ++i) CHECK(da.next_u64() == db.next_u64());

    Rng other = b.derive("stream", 6);
    CHECK(other.next_u64() != a.derive("stream", 5).next_u64());
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    Rng rng(5);
    rng.shuffle(v);
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 50);
    std::vector<int> w(50);
    for (int i = 0; i < 50; ++i) w[static_cast<std::size_t>(i)] = i;
    Rng rng2(5);
    rng2.shuffle(w);
    CHECK(v == w);
}
