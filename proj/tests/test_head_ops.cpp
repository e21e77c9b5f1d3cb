#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rtt/engine.hpp"
#include "test_util.hpp"

using namespace rtt;
using namespace rtt::testutil;

namespace {

// finite difference of the mean head gradient along direction v
std::vector<double> numeric_hvp(const Network& net, const std::vector<Example>& batch,
                                const std::vector<double>& v, double h = 1e-5) {
    Network plus = net, minus = net;
    for (std::size_t i = 0; i < v.size(); ++i) {
        plus.params[net.head_span.offset + i] += h * v[i];
        minus.params[net.head_span.offset + i] -= h * v[i];
    }
    auto gp = head_gradient(plus, batch);
    auto gm = head_gradient(minus, batch);
    std::vector<double> out(gp.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// the scalar whose input gradient mixed_grad computes
double head_grad_dot(const Network& net, const Example& e, const std::vector<double>& u) {
    HeadCache one = build_head_cache(net, {e});
    return dot(head_gradient_of(one, 0), u);
}

}  // namespace

TEST_CASE("hvp_head of the zero vector is zero") {
    Network net = net_conv_pool(70);
    auto batch = random_batch(net, 4, 700);
    std::vector<double> v(net.head_span.size, 0.0);
    auto hv = hvp_head(net, batch, v);
    for (double x : hv) CHECK(x == 0.0);
}

TEST_CASE("hvp_head matches finite differences of the head gradient") {
    Network nets[] = {net_dense(4, 3, 71), net_two_conv(72)};
    for (int ci = 0; ci < 2; ++ci) {
        const Network& net = nets[ci];
        auto batch = random_batch(net, 5, 710 + ci);
        Rng rng(720 + ci);
        std::vector<double> v(net.head_span.size);
        for (double& x : v) x = rng.normal();
        auto hv = hvp_head(net, batch, v, 0.0);
        auto num = numeric_hvp(net, batch, v);
        for (std::size_t i = 0; i < hv.size(); ++i) {
            if (std::abs(hv[i]) < 1e-10 && std::abs(num[i]) < 1e-10) continue;
            INFO("case ", ci, " coord ", i);
            CHECK(rel_err(hv[i], num[i]) <= 1e-5);
        }
    }
}

TEST_CASE("head Hessian is symmetric and PSD without damping") {
    Network net = net_conv_pool(73);
    auto batch = random_batch(net, 6, 730);
    Rng rng(731);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> u(net.head_span.size), v(net.head_span.size);
        for (double& x : u) x = rng.normal();
        for (double& x : v) x = rng.normal();
        auto hu = hvp_head(net, batch, u, 0.0);
        auto hv = hvp_head(net, batch, v, 0.0);
        CHECK(std::abs(dot(u, hv) - dot(v, hu)) <= 1e-10 * std::max(1.0, std::abs(dot(u, hv))));
        CHECK(dot(v, hv) >= -1e-12);
    }
}

TEST_CASE("damping adds lambda v") {
    Network net = net_dense(4, 3, 74);
    auto batch = random_batch(net, 3, 740);
    Rng rng(741);
    std::vector<double> v(net.head_span.size);
    for (double& x : v) x = rng.normal();
    auto h0 = hvp_head(net, batch, v, 0.0);
    auto h1 = hvp_head(net, batch, v, 0.5);
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK(h1[i] == doctest::Approx(h0[i] + 0.5 * v[i]).epsilon(1e-12));
}

TEST_CASE("mixed_grad of u = 0 is the zero map") {
    Network net = net_two_conv(75);
    auto batch = random_batch(net, 1, 750);
    std::vector<double> u(net.head_span.size, 0.0);
    Tensor m = mixed_grad(net, batch[0], u);
    CHECK(m.shape == batch[0].x.shape);
    for (double x : m.data) CHECK(x == 0.0);
}

TEST_CASE("mixed_grad is linear in u") {
    Network net = net_conv_relu(76);
    auto batch = random_batch(net, 1, 760);
    Rng rng(761);
    std::vector<double> u1(net.head_span.size), u2(net.head_span.size), sum(net.head_span.size);
    for (std::size_t i = 0; i < u1.size(); ++i) {
        u1[i] = rng.normal();
        u2[i] = rng.normal();
        sum[i] = u1[i] + u2[i];
    }
    Tensor m1 = mixed_grad(net, batch[0], u1);
    Tensor m2 = mixed_grad(net, batch[0], u2);
    Tensor ms = mixed_grad(net, batch[0], sum);
    for (std::size_t i = 0; i < ms.size(); ++i)
        CHECK(std::abs(ms.data[i] - (m1.data[i] + m2.data[i])) <=
              1e-10 * std::max(1.0, std::abs(ms.data[i])));
}

TEST_CASE("mixed_grad matches pixel finite differences of u . head_grad") {
    Network nets[] = {net_mlp_smooth(5, 77), net_two_conv(78)};
    const double tols[] = {1e-6, 1e-4};
    for (int ci = 0; ci < 2; ++ci) {
        const Network& net = nets[ci];
        auto batch = random_batch(net, 1, 770 + ci);
        Rng rng(780 + ci);
        std::vector<double> u(net.head_span.size);
        for (double& x : u) x = rng.normal();
        Tensor m = mixed_grad(net, batch[0], u);
        for (int k = 0; k < 20; ++k) {
            const std::size_t px = rng.uniform_int(m.size());
            Example plus = batch[0], minus = batch[0];
            plus.x.data[px] += 1e-5;
            minus.x.data[px] -= 1e-5;
            const double num =
                (head_grad_dot(net, plus, u) - head_grad_dot(net, minus, u)) / 2e-5;
            if (std::abs(num) < 1e-9 && std::abs(m.data[px]) < 1e-9) continue;
            INFO("case ", ci, " pixel ", px);
            CHECK(rel_err(m.data[px], num) <= tols[ci]);
        }
    }
}

TEST_CASE("head cache probabilities match forward softmax") {
    Network net = net_conv_pool(79);
    auto batch = random_batch(net, 7, 790);
    HeadCache cache = build_head_cache(net, batch);
    Tensor logits = forward(net, batch);
    auto p = softmax_rows(logits);
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(cache.probs[i] == doctest::Approx(p[i]).epsilon(1e-12));
}
