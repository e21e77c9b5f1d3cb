#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "rtt/adam.hpp"
#include "rtt/datagen.hpp"
#include "rtt/engine.hpp"
#include "rtt/io_util.hpp"
#include "test_util.hpp"

using namespace rtt;

namespace {

bool examples_equal(const Example& a, const Example& b) {
    return a.y == b.y && a.noisy == b.noisy && a.x == b.x;
}

bool datasets_equal(const SplitDataset& a, const SplitDataset& b) {
    auto split_eq = [](const std::vector<Example>& u, const std::vector<Example>& v) {
        if (u.size() != v.size()) return false;
        for (std::size_t i = 0; i < u.size(); ++i)
            if (!examples_equal(u[i], v[i])) return false;
        return true;
    };
    return a.height == b.height && a.width == b.width && a.n_classes == b.n_classes &&
           a.seed == b.seed && split_eq(a.train, b.train) && split_eq(a.val, b.val) &&
           split_eq(a.test, b.test);
}

PhantomSpec small_spec(std::uint64_t seed) {
    PhantomSpec spec;
    spec.train_count = 60;
    spec.val_count = 20;
    spec.test_count = 30;
    spec.seed = seed;
    return spec;
}

// mean of the Rice(nu*sigma, sigma) distribution by Simpson quadrature;
// independent of the sampling construction under test
double rice_mean_quadrature(double nu, double sigma) {
    const double loc = nu * sigma;
    const double hi = loc + 12.0 * sigma;
    const int n = 40000;  // even
    const double h = hi / n;
    auto pdf_t = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double z = t * loc / (sigma * sigma);
        return t * (t / (sigma * sigma)) *
               std::exp(-(t * t + loc * loc) / (2.0 * sigma * sigma)) * std::cyl_bessel_i(0.0, z);
    };
    double s = pdf_t(0.0) + pdf_t(hi);
    for (int i = 1; i < n; ++i) s += pdf_t(i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace

TEST_CASE("generation is deterministic from the seed") {
    SplitDataset a = generate_phantoms(small_spec(5));
    SplitDataset b = generate_phantoms(small_spec(5));
    CHECK(datasets_equal(a, b));
    SplitDataset c = generate_phantoms(small_spec(6));
    CHECK(!datasets_equal(a, c));
}

TEST_CASE("patients never straddle splits and pixels stay in range") {
    SplitDataset ds = generate_phantoms(small_spec(7));
    std::set<int> train_p, val_p, test_p;
    for (const auto& e : ds.train) train_p.insert(e.patient);
    for (const auto& e : ds.val) val_p.insert(e.patient);
    for (const auto& e : ds.test) test_p.insert(e.patient);
    for (int p : val_p) CHECK(train_p.count(p) == 0);
    for (int p : test_p) {
        CHECK(train_p.count(p) == 0);
        CHECK(val_p.count(p) == 0);
    }
    // several slices per patient
    CHECK(train_p.size() < ds.train.size());
    for (const auto& e : ds.train)
        for (double v : e.x.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    CHECK(ds.train.size() == 60);
    CHECK(ds.val.size() == 20);
    CHECK(ds.test.size() == 30);
}

TEST_CASE("a linear probe learns the clean phantoms") {
    PhantomSpec spec;
    spec.train_count = 300;
    spec.val_count = 30;
    spec.test_count = 120;
    spec.seed = 11;
    SplitDataset ds = generate_phantoms(spec);

    Network net = build_network({1, 32, 32}, {LayerSpec::flatten(), LayerSpec::dense(3)});
    init_params(net, 1);
    net.mode = Mode::Train;
    AdamState adam(0.005);
    Rng shuffler(2);
    std::vector<int> order(ds.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < 30; ++epoch) {
        shuffler.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += 32) {
            std::vector<Example> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + 32); ++k)
                batch.push_back(ds.train[static_cast<std::size_t>(order[k])]);
            Trace tr;
            Tensor logits = forward(net, batch, &tr);
            std::vector<int> labels;
            for (const auto& e : batch) labels.push_back(e.y);
            auto d = cross_entropy_dlogits(logits, labels);
            Grads g = backward(net, tr, d, BackwardOpts{true, false});
            adam_step(adam, net.params, g.params);
        }
    }
    const double acc = accuracy(net, ds.test);
    INFO("linear probe test accuracy ", acc);
    CHECK(acc >= 70.0);
}

TEST_CASE("gaussian noise moments at 1e6 draws") {
    Rng rng(21);
    const int n = 1000000;
    const double sigma = 32.0;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = gaussian_noise_sample(0.0, sigma, rng);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) <= 4.0 * sigma / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - sigma * sigma) <= 0.01 * sigma * sigma);
}

TEST_CASE("vanishing sigma leaves the image unchanged") {
    SplitDataset ds = generate_phantoms(small_spec(22));
    Rng rng(220);
    Tensor noisy = add_gaussian_noise(ds.train[0].x, 0.0, 1e-12, rng);
    for (std::size_t i = 0; i < noisy.size(); ++i)
        CHECK(std::abs(noisy.data[i] - ds.train[0].x.data[i]) <= 1e-9);
}

TEST_CASE("noisy outputs stay in [0,1] under heavy noise") {
    SplitDataset ds = generate_phantoms(small_spec(23));
    Rng rng(230);
    Tensor g = add_gaussian_noise(ds.train[0].x, 0.0, 400.0, rng);
    Tensor r = add_rician_noise(ds.train[1].x, 1.0, 300.0, rng);
    for (double v : g.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (double v : r.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("rician with nu=0 reduces to Rayleigh") {
    Rng rng(24);
    const double sigma = 16.0;
    const int n = 1000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rician_noise_sample(0.0, sigma, rng);
    const double mean = sum / n;
    const double want = sigma * std::sqrt(3.14159265358979323846 / 2.0);
    CHECK(std::abs(mean - want) <= 0.01 * want);
}

TEST_CASE("rician mean matches an independent quadrature oracle") {
    Rng rng(25);
    const double nu = 1.0, sigma = 16.0;
    const int n = 1000000;
    double sum = 0.0, mn = 1e300;
    for (int i = 0; i < n; ++i) {
        const double x = rician_noise_sample(nu, sigma, rng);
        sum += x;
        mn = std::min(mn, x);
    }
    const double mean = sum / n;
    const double want = rice_mean_quadrature(nu, sigma);
    INFO("empirical ", mean, " quadrature ", want);
    CHECK(std::abs(mean - want) <= 0.01 * want);
    CHECK(mn >= 0.0);       // magnitude construction
    CHECK(mean > sigma);    // strictly positive, and large for nu=1
}

TEST_CASE("noise protocol flags exactly the prescribed sets") {
    SplitDataset clean = generate_phantoms(small_spec(26));
    NoiseSpec noise = NoiseSpec::gaussian();
    noise.rho_test = 0.5;
    noise.seed = 260;
    SplitDataset noisy = apply_noise_protocol(clean, noise);

    for (const auto& e : noisy.train) CHECK(e.noisy);
    for (std::size_t i = 0; i < noisy.val.size(); ++i) {
        CHECK(!noisy.val[i].noisy);
        CHECK(noisy.val[i].x == clean.val[i].x);  // bit-identical
    }
    int flagged = 0;
    for (const auto& e : noisy.test) flagged += e.noisy ? 1 : 0;
    CHECK(flagged == 15);  // floor(0.5 * 30)

    noise.rho_test = 0.0;
    SplitDataset zero = apply_noise_protocol(clean, noise);
    for (const auto& e : zero.test) CHECK(!e.noisy);

    CHECK_THROWS_WITH_AS(apply_noise_protocol(noisy, noise), doctest::Contains("noise"),
                         std::invalid_argument);
}

TEST_CASE("protocol is deterministic and the noisy test subset is seed-chosen") {
    SplitDataset clean = generate_phantoms(small_spec(27));
    NoiseSpec noise = NoiseSpec::rician();
    noise.rho_test = 0.5;
    noise.seed = 270;
    SplitDataset a = apply_noise_protocol(clean, noise);
    SplitDataset b = apply_noise_protocol(clean, noise);
    CHECK(datasets_equal(a, b));
    noise.seed = 271;
    SplitDataset c = apply_noise_protocol(clean, noise);
    std::vector<int> fa, fc;
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        if (a.test[i].noisy) fa.push_back(static_cast<int>(i));
        if (c.test[i].noisy) fc.push_back(static_cast<int>(i));
    }
    CHECK(fa != fc);  // different seeds pick different subsets
}

TEST_CASE("dataset file round-trips exactly") {
    SplitDataset clean = generate_phantoms(small_spec(28));
    NoiseSpec noise = NoiseSpec::gaussian();
    noise.rho_test = 0.5;
    noise.seed = 280;
    SplitDataset ds = apply_noise_protocol(clean, noise);

    const std::string path = "test_dataset_roundtrip.phtm";
    save_dataset(ds, path);
    SplitDataset back = load_dataset(path);
    CHECK(datasets_equal(ds, back));

    // save -> load -> save gives byte-identical files
    const std::string path2 = "test_dataset_roundtrip2.phtm";
    save_dataset(back, path2);
    CHECK(read_file(path) == read_file(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("loader reports truncation with a byte offset") {
    SplitDataset ds = generate_phantoms(small_spec(29));
    const std::string path = "test_dataset_trunc.phtm";
    save_dataset(ds, path);
    auto bytes = read_file(path);
    bytes.resize(bytes.size() / 2);
    write_file_atomic(path, bytes);
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("byte"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("loader names the expected magic") {
    const std::string path = "test_dataset_magic.phtm";
    write_file_atomic(path, std::string("JUNK!ooo"));
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("PHTM1"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("invalid specs are rejected before any work") {
    PhantomSpec p = small_spec(1);
    p.image_size = 8;
    CHECK_THROWS_AS(generate_phantoms(p), std::invalid_argument);
    NoiseSpec n = NoiseSpec::gaussian();
    n.rho_test = 1.5;
    CHECK_THROWS_AS(validate(n), std::invalid_argument);
    n.rho_test = 0.5;
    n.sigma = 0.0;
    CHECK_THROWS_AS(validate(n), std::invalid_argument);
}
