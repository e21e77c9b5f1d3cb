#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rtt/engine.hpp"
#include "rtt/network.hpp"
#include "test_util.hpp"

using namespace rtt;
using namespace rtt::testutil;

TEST_CASE("zero-weight head gives equal logits") {
    Network net = net_dense(4);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    auto batch = random_batch(net, 3, 1);
    Tensor logits = forward(net, batch);
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < net.n_classes; ++c)
            CHECK(logits.data[static_cast<std::size_t>(b) * 3 + c] == 0.0);
}

TEST_CASE("dense forward matches hand evaluation on a 2x2 image") {
    Network net = build_network({1, 2, 2}, {LayerSpec::flatten(), LayerSpec::dense(2)});
    // W = [[1,0,0,0],[0,1,0,-1]], b = [0.5, -0.25]
    net.params = {1, 0, 0, 0, 0, 1, 0, -1, 0.5, -0.25};
    Example e;
    e.x = Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4});
    e.y = 0;
    Tensor logits = forward(net, {e});
    CHECK(logits.data[0] == doctest::Approx(0.1 + 0.5).epsilon(1e-12));
    CHECK(logits.data[1] == doctest::Approx(0.2 - 0.4 - 0.25).epsilon(1e-12));
}

TEST_CASE("batch order permutation permutes logits bit-identically") {
    Network net = net_two_conv(3);
    auto batch = random_batch(net, 5, 2);
    Tensor l1 = forward(net, batch);
    std::vector<Example> rev(batch.rbegin(), batch.rend());
    Tensor l2 = forward(net, rev);
    const int C = net.n_classes;
    for (int b = 0; b < 5; ++b)
        for (int c = 0; c < C; ++c)
            CHECK(l1.data[static_cast<std::size_t>(b) * C + c] ==
                  l2.data[static_cast<std::size_t>(4 - b) * C + c]);
}

TEST_CASE("shape mismatch names the offending input") {
    Network net = net_dense(4);
    Example e;
    e.x = Tensor({3, 3});
    e.y = 0;
    CHECK_THROWS_WITH_AS(forward(net, {e}), doctest::Contains("input"), std::invalid_argument);
}

TEST_CASE("network requires a dense head") {
    CHECK_THROWS_AS(build_network({1, 4, 4}, {LayerSpec::flatten()}), std::invalid_argument);
    CHECK_THROWS_WITH_AS(build_network({1, 4, 4}, {LayerSpec::conv(2, 3)}),
                         doctest::Contains("dense"), std::invalid_argument);
}

TEST_CASE("conv kernel larger than input is rejected with layer id") {
    CHECK_THROWS_WITH_AS(
        build_network({1, 4, 4}, {LayerSpec::conv(2, 7), LayerSpec::flatten(), LayerSpec::dense(2)}),
        doctest::Contains("layer 0"), std::invalid_argument);
}

TEST_CASE("head span covers the last dense layer exactly") {
    Network net = net_conv_pool(4);
    // conv(3,3): 3*1*9+3 = 30 params; dense: 4*(3*3*3)+4 = 112
    CHECK(net.head_span.offset == 30);
    CHECK(net.head_span.size == 112);
    CHECK(net.head_span.offset + net.head_span.size == net.n_params());
    CHECK(net.feature_dim() == 27);
}

TEST_CASE("cross entropy on uniform logits is ln(n_classes)") {
    Tensor logits({2, 3}, {1.0, 1.0, 1.0, -2.5, -2.5, -2.5});
    auto res = cross_entropy(logits, {0, 2});
    CHECK(res.mean == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(res.per_example[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates toward zero for a dominant true logit") {
    Tensor logits({1, 3}, {50.0, 0.0, 0.0});
    auto res = cross_entropy(logits, {0});
    CHECK(res.mean < 1e-20);
    CHECK(res.mean >= 0.0);
}

TEST_CASE("cross entropy evaluates [1,2,3] with y=2") {
    Tensor logits({1, 3}, {1.0, 2.0, 3.0});
    auto res = cross_entropy(logits, {2});
    // -log softmax_2 = log(e^-2 + e^-1 + 1)
    CHECK(res.mean == doctest::Approx(0.40760596444438079).epsilon(1e-14));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Tensor logits({1, 3}, {0.0, 0.0, 0.0});
    CHECK_THROWS_AS(cross_entropy(logits, {3}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, {-1}), std::invalid_argument);
}

TEST_CASE("duplicated example leaves the mean gradient unchanged") {
    Network net = net_conv_relu(6);
    auto batch = random_batch(net, 1, 3);
    std::vector<Example> doubled = {batch[0], batch[0]};
    auto g1 = grad_params(net, batch);
    auto g2 = grad_params(net, doubled);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
}

TEST_CASE("zero-input image head bias gradient is p - e_y") {
    Network net = net_dense(4);
    Example e;
    e.x = Tensor({4, 4});  // zeros: only the bias feeds the logits
    e.y = 1;
    auto g = grad_params(net, {e});
    Tensor logits = forward(net, {e});
    auto p = softmax_rows(logits);
    const std::size_t bias0 = net.head_span.offset + static_cast<std::size_t>(net.n_classes) * 16;
    for (int c = 0; c < 3; ++c) {
        const double want = p[static_cast<std::size_t>(c)] - (c == 1 ? 1.0 : 0.0);
        CHECK(g[bias0 + static_cast<std::size_t>(c)] == doctest::Approx(want).epsilon(1e-12));
        // weight rows see zero input, so their gradient vanishes
        for (int f = 0; f < 16; ++f)
            CHECK(g[net.head_span.offset + static_cast<std::size_t>(c) * 16 + f] == 0.0);
    }
}

TEST_CASE("grad_params matches finite differences") {
    struct Case {
        Network net;
        double tol;
    };
    std::vector<Case> cases;
    cases.push_back({net_dense(4, 3, 21), 1e-6});
    cases.push_back({net_mlp_smooth(5, 22), 1e-6});
    cases.push_back({net_conv_relu(23), 1e-4});
    cases.push_back({net_conv_pool(24), 1e-4});
    cases.push_back({net_two_conv(25), 1e-4});

    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        auto& c = cases[ci];
        auto batch = random_batch(c.net, 4, 100 + ci);
        auto g = grad_params(c.net, batch);
        Rng rng(200 + ci);
        for (int k = 0; k < 20; ++k) {
            const std::size_t idx = rng.uniform_int(c.net.n_params());
            const double num = numeric_dparam(c.net, batch, idx);
            if (std::abs(num) < 1e-9 && std::abs(g[idx]) < 1e-9) continue;  // dead unit
            INFO("case ", ci, " param ", idx, " analytic ", g[idx], " numeric ", num);
            CHECK(rel_err(g[idx], num) <= c.tol);
        }
    }
}

TEST_CASE("grad_params matches finite differences through train-mode batchnorm") {
    Network net = net_bn(31);
    net.mode = Mode::Train;
    auto batch = random_batch(net, 4, 131);
    auto g = grad_params(net, batch);
    Rng rng(231);
    for (int k = 0; k < 20; ++k) {
        const std::size_t idx = rng.uniform_int(net.n_params());
        const double num = numeric_dparam(net, batch, idx);
        if (std::abs(num) < 1e-9 && std::abs(g[idx]) < 1e-9) continue;
        INFO("param ", idx, " analytic ", g[idx], " numeric ", num);
        CHECK(rel_err(g[idx], num) <= 1e-4);
    }
}

TEST_CASE("grad_input matches finite differences") {
    Network nets[] = {net_mlp_smooth(5, 41), net_two_conv(42)};
    const double tols[] = {1e-6, 1e-4};
    for (int ci = 0; ci < 2; ++ci) {
        const Network& net = nets[ci];
        auto batch = random_batch(net, 1, 300 + ci);
        Tensor g = grad_input(net, batch[0]);
        REQUIRE(g.shape == batch[0].x.shape);
        Rng rng(400 + ci);
        for (int k = 0; k < 20; ++k) {
            const std::size_t idx = rng.uniform_int(g.size());
            const double num = numeric_dpixel(net, batch[0], idx);
            if (std::abs(num) < 1e-9 && std::abs(g.data[idx]) < 1e-9) continue;
            INFO("case ", ci, " pixel ", idx);
            CHECK(rel_err(g.data[idx], num) <= tols[ci]);
        }
    }
}

TEST_CASE("a head on constant features ignores the input") {
    // maxpool over an all-equal image then dense: gradient w.r.t. pixels is
    // spread but the loss is input-independent when weights only see biases
    Network net = net_dense(4);
    // zero the weight block, keep biases
    const std::size_t nw = static_cast<std::size_t>(net.n_classes) * 16;
    for (std::size_t i = 0; i < nw; ++i) net.params[net.head_span.offset + i] = 0.0;
    Example e;
    e.x = Tensor({4, 4});
    for (double& v : e.x.data) v = 0.3;
    e.y = 2;
    Tensor g = grad_input(net, e);
    for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("input gradient is exact under identity weight scaling") {
    Network net = net_conv_relu(44);
    auto batch = random_batch(net, 1, 440);
    Tensor g1 = grad_input(net, batch[0]);
    Network scaled = net;  // c = 1: bitwise identical result expected
    for (double& v : scaled.params) v *= 1.0;
    Tensor g2 = grad_input(scaled, batch[0]);
    CHECK(g1.data == g2.data);
}

TEST_CASE("head_gradient equals the head slice of grad_params") {
    Network net = net_two_conv(51);
    auto batch = random_batch(net, 3, 510);
    auto full = grad_params(net, batch);
    auto head = head_gradient(net, batch);
    REQUIRE(head.size() == net.head_span.size);
    for (std::size_t i = 0; i < head.size(); ++i)
        CHECK(head[i] == doctest::Approx(full[net.head_span.offset + i]).epsilon(1e-12));
}

TEST_CASE("eval-mode forward uses running batchnorm statistics") {
    Network net = net_bn(61);
    net.mode = Mode::Train;
    auto batch = random_batch(net, 8, 610);
    Trace tr;
    forward(net, batch, &tr);
    bn_update_running(net, tr);
    net.mode = Mode::Eval;
    // single-example eval must not depend on batch composition
    Tensor a = forward(net, {batch[0]});
    Tensor b = forward(net, {batch[0], batch[3]});
    for (int c = 0; c < net.n_classes; ++c)
        CHECK(a.data[static_cast<std::size_t>(c)] == b.data[static_cast<std::size_t>(c)]);
}
