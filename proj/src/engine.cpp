#include "rtt/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rtt {

namespace {

void check_labels(const std::vector<int>& labels, int n_classes) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " at index " +
                                        std::to_string(i) + " outside [0," +
                                        std::to_string(n_classes) + ")");
}

}  // namespace

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2) throw std::invalid_argument("cross_entropy: logits not 2-D");
    const int B = logits.shape[0], C = logits.shape[1];
    if (static_cast<std::size_t>(B) != labels.size())
        throw std::invalid_argument("cross_entropy: batch/label count mismatch");
    if (!logits.all_finite()) throw std::invalid_argument("cross_entropy: non-finite logits");
    check_labels(labels, C);

    LossResult res;
    res.per_example.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double* row = logits.data.data() + static_cast<std::size_t>(b) * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
        double lse = mx + std::log(sum);
        res.per_example[static_cast<std::size_t>(b)] = lse - row[labels[static_cast<std::size_t>(b)]];
        res.mean += res.per_example[static_cast<std::size_t>(b)];
    }
    res.mean /= static_cast<double>(B);
    return res;
}

std::vector<double> softmax_rows(const Tensor& logits) {
    const int B = logits.shape[0], C = logits.shape[1];
    std::vector<double> p(logits.data.size());
    for (int b = 0; b < B; ++b) {
        const double* row = logits.data.data() + static_cast<std::size_t>(b) * C;
        double* pr = p.data() + static_cast<std::size_t>(b) * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            pr[c] = std::exp(row[c] - mx);
            sum += pr[c];
        }
        for (int c = 0; c < C; ++c) pr[c] /= sum;
    }
    return p;
}

std::vector<double> cross_entropy_dlogits(const Tensor& logits, const std::vector<int>& labels,
                                          const std::vector<double>* weights) {
    const int B = logits.shape[0], C = logits.shape[1];
    check_labels(labels, C);
    std::vector<double> d = softmax_rows(logits);
    const double inv_b = 1.0 / static_cast<double>(B);
    for (int b = 0; b < B; ++b) {
        double* row = d.data() + static_cast<std::size_t>(b) * C;
        row[labels[static_cast<std::size_t>(b)]] -= 1.0;
        const double w = weights ? (*weights)[static_cast<std::size_t>(b)] : 1.0;
        for (int c = 0; c < C; ++c) row[c] *= w * inv_b;
    }
    return d;
}

std::vector<double> grad_params(const Network& net, const std::vector<Example>& batch) {
    Trace trace;
    Tensor logits = forward(net, batch, &trace);
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const Example& e : batch) labels.push_back(e.y);
    std::vector<double> dlogits = cross_entropy_dlogits(logits, labels);
    Grads g = backward(net, trace, dlogits, BackwardOpts{true, false});
    for (std::size_t i = 0; i < g.params.size(); ++i)
        if (!std::isfinite(g.params[i]))
            throw std::runtime_error("grad_params: non-finite gradient at parameter " +
                                     std::to_string(i));
    return std::move(g.params);
}

Tensor grad_input(const Network& net, const Example& example) {
    Trace trace;
    Tensor logits = forward(net, {example}, &trace);
    std::vector<double> dlogits = cross_entropy_dlogits(logits, {example.y});
    Grads g = backward(net, trace, dlogits, BackwardOpts{false, true});
    return Tensor(example.x.shape, std::move(g.input));
}

HeadCache build_head_cache(const Network& net, const std::vector<Example>& data) {
    if (data.empty()) throw std::invalid_argument("head cache: empty dataset");
    HeadCache cache;
    cache.n = static_cast<int>(data.size());
    cache.feat_dim = net.feature_dim();
    cache.n_classes = net.n_classes;
    cache.feats.resize(static_cast<std::size_t>(cache.n) * cache.feat_dim);
    cache.probs.resize(static_cast<std::size_t>(cache.n) * cache.n_classes);
    cache.labels.resize(static_cast<std::size_t>(data.size()));

    Network frozen = net;  // influence quantities are defined in eval mode
    frozen.mode = Mode::Eval;

    const int chunk = 64;
    for (int start = 0; start < cache.n; start += chunk) {
        const int end = std::min(cache.n, start + chunk);
        std::vector<const Tensor*> xs;
        xs.reserve(static_cast<std::size_t>(end - start));
        for (int i = start; i < end; ++i)
            xs.push_back(&data[static_cast<std::size_t>(i)].x);
        Trace trace;
        Tensor logits = forward(frozen, xs, &trace);
        const std::vector<double>& feats =
            frozen.head_layer == 0 ? trace.input
                                   : trace.acts[static_cast<std::size_t>(frozen.head_layer) - 1];
        std::copy(feats.begin(), feats.end(),
                  cache.feats.begin() + static_cast<std::size_t>(start) * cache.feat_dim);
        std::vector<double> p = softmax_rows(logits);
        std::copy(p.begin(), p.end(),
                  cache.probs.begin() + static_cast<std::size_t>(start) * cache.n_classes);
        for (int i = start; i < end; ++i) {
            const Example& e = data[static_cast<std::size_t>(i)];
            if (e.y < 0 || e.y >= cache.n_classes)
                throw std::invalid_argument("head cache: label out of range at " +
                                            std::to_string(i));
            cache.labels[static_cast<std::size_t>(i)] = e.y;
        }
    }
    return cache;
}

std::vector<double> head_gradient_of(const HeadCache& cache, int i) {
    const int F = cache.feat_dim, C = cache.n_classes;
    std::vector<double> g(cache.head_dim(), 0.0);
    const double* phi = cache.feats.data() + static_cast<std::size_t>(i) * F;
    const double* p = cache.probs.data() + static_cast<std::size_t>(i) * C;
    const int y = cache.labels[static_cast<std::size_t>(i)];
    for (int c = 0; c < C; ++c) {
        const double r = p[c] - (c == y ? 1.0 : 0.0);
        double* gw = g.data() + static_cast<std::size_t>(c) * F;
        for (int f = 0; f < F; ++f) gw[f] = r * phi[f];
        g[static_cast<std::size_t>(C) * F + c] = r;  // bias entry
    }
    return g;
}

std::vector<double> head_gradient(const Network& net, const std::vector<Example>& batch) {
    HeadCache cache = build_head_cache(net, batch);
    std::vector<double> g(cache.head_dim(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(cache.n);
    const int F = cache.feat_dim, C = cache.n_classes;
    for (int i = 0; i < cache.n; ++i) {
        const double* phi = cache.feats.data() + static_cast<std::size_t>(i) * F;
        const double* p = cache.probs.data() + static_cast<std::size_t>(i) * C;
        const int y = cache.labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < C; ++c) {
            const double r = (p[c] - (c == y ? 1.0 : 0.0)) * inv_n;
            double* gw = g.data() + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) gw[f] += r * phi[f];
            g[static_cast<std::size_t>(C) * F + c] += r;
        }
    }
    return g;
}

namespace {

void check_head_vec(const HeadCache& cache, const std::vector<double>& v, const char* who) {
    if (v.size() != cache.head_dim())
        throw std::invalid_argument(std::string(who) + ": vector dim " +
                                    std::to_string(v.size()) + " != head dim " +
                                    std::to_string(cache.head_dim()));
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(who) + ": non-finite vector");
}

}  // namespace

std::vector<double> hvp_head(const HeadCache& cache, const std::vector<double>& v,
                             double damping) {
    check_head_vec(cache, v, "hvp_head");
    const int F = cache.feat_dim, C = cache.n_classes;
    std::vector<double> out(v.size(), 0.0);
    std::vector<double> t(static_cast<std::size_t>(C));
    const double inv_n = 1.0 / static_cast<double>(cache.n);
    for (int i = 0; i < cache.n; ++i) {
        const double* phi = cache.feats.data() + static_cast<std::size_t>(i) * F;
        const double* p = cache.probs.data() + static_cast<std::size_t>(i) * C;
        // t = V_w phi + v_b  (contract v with the augmented feature vector)
        for (int c = 0; c < C; ++c) {
            const double* vw = v.data() + static_cast<std::size_t>(c) * F;
            double acc = v[static_cast<std::size_t>(C) * F + c];
            for (int f = 0; f < F; ++f) acc += vw[f] * phi[f];
            t[static_cast<std::size_t>(c)] = acc;
        }
        // u = (diag(p) - p p^T) t
        double pt = 0.0;
        for (int c = 0; c < C; ++c) pt += p[c] * t[static_cast<std::size_t>(c)];
        // accumulate u (x) phi_a
        for (int c = 0; c < C; ++c) {
            const double u = (p[c] * (t[static_cast<std::size_t>(c)] - pt)) * inv_n;
            if (u == 0.0) continue;
            double* ow = out.data() + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) ow[f] += u * phi[f];
            out[static_cast<std::size_t>(C) * F + c] += u;
        }
    }
    if (damping != 0.0)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += damping * v[j];
    return out;
}

std::vector<double> hvp_head(const Network& net, const std::vector<Example>& batch,
                             const std::vector<double>& v, double damping) {
    return hvp_head(build_head_cache(net, batch), v, damping);
}

Tensor mixed_grad(const Network& net, const Example& example, const std::vector<double>& u) {
    Network frozen = net;
    frozen.mode = Mode::Eval;
    Trace trace;
    Tensor logits = forward(frozen, {example}, &trace);
    const int F = frozen.feature_dim(), C = frozen.n_classes;
    if (u.size() != static_cast<std::size_t>(C) * (F + 1))
        throw std::invalid_argument("mixed_grad: vector dim mismatch");
    std::vector<double> p = softmax_rows(logits);
    const int y = example.y;

    // scalar g = sum_c (p_c - [c==y]) q_c with q = U_w phi + u_b;
    // dg/dphi = W_head^T ((diag(p)-pp^T) q) + U_w^T (p - e_y)
    const std::vector<double>& phi =
        frozen.head_layer == 0 ? trace.input
                               : trace.acts[static_cast<std::size_t>(frozen.head_layer) - 1];
    std::vector<double> q(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        const double* uw = u.data() + static_cast<std::size_t>(c) * F;
        double acc = u[static_cast<std::size_t>(C) * F + c];
        for (int f = 0; f < F; ++f) acc += uw[f] * phi[static_cast<std::size_t>(f)];
        q[static_cast<std::size_t>(c)] = acc;
    }
    double pq = 0.0;
    for (int c = 0; c < C; ++c) pq += p[static_cast<std::size_t>(c)] * q[static_cast<std::size_t>(c)];

    std::vector<double> dphi(static_cast<std::size_t>(F), 0.0);
    const double* w_head = frozen.params.data() + frozen.head_span.offset;
    for (int c = 0; c < C; ++c) {
        const double ds = p[static_cast<std::size_t>(c)] * (q[static_cast<std::size_t>(c)] - pq);
        const double r = p[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0);
        const double* wr = w_head + static_cast<std::size_t>(c) * F;
        const double* uw = u.data() + static_cast<std::size_t>(c) * F;
        for (int f = 0; f < F; ++f) dphi[static_cast<std::size_t>(f)] += ds * wr[f] + r * uw[f];
    }

    std::vector<double> dx = backward_to_input(frozen, trace, frozen.head_layer - 1, dphi);
    return Tensor(example.x.shape, std::move(dx));
}

std::vector<double> head_hessian(const HeadCache& cache, double damping) {
    const std::size_t D = cache.head_dim();
    if (D > 2000)
        throw std::invalid_argument("head_hessian: head dim " + std::to_string(D) +
                                    " exceeds dense-solve limit 2000");
    const int F = cache.feat_dim, C = cache.n_classes;
    const int G = F + 1;
    std::vector<double> H(D * D, 0.0);
    const double inv_n = 1.0 / static_cast<double>(cache.n);
    std::vector<double> phia(static_cast<std::size_t>(G));
    // param index for (class c, augmented feature g): g<F -> c*F+g, g==F -> C*F+c
    auto pidx = [&](int c, int g) {
        return g < F ? static_cast<std::size_t>(c) * F + g
                     : static_cast<std::size_t>(C) * F + c;
    };
    for (int i = 0; i < cache.n; ++i) {
        const double* phi = cache.feats.data() + static_cast<std::size_t>(i) * F;
        const double* p = cache.probs.data() + static_cast<std::size_t>(i) * C;
        for (int f = 0; f < F; ++f) phia[static_cast<std::size_t>(f)] = phi[f];
        phia[static_cast<std::size_t>(F)] = 1.0;
        for (int c1 = 0; c1 < C; ++c1) {
            for (int c2 = 0; c2 < C; ++c2) {
                const double a =
                    ((c1 == c2 ? p[c1] : 0.0) - p[c1] * p[c2]) * inv_n;
                if (a == 0.0) continue;
                for (int g1 = 0; g1 < G; ++g1) {
                    const double ap = a * phia[static_cast<std::size_t>(g1)];
                    double* row = H.data() + pidx(c1, g1) * D;
                    for (int g2 = 0; g2 < G; ++g2)
                        row[pidx(c2, g2)] += ap * phia[static_cast<std::size_t>(g2)];
                }
            }
        }
    }
    for (std::size_t j = 0; j < D; ++j) H[j * D + j] += damping;
    return H;
}

double accuracy(const Network& net, const std::vector<Example>& data, int eval_batch) {
    if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
    Network frozen = net;
    frozen.mode = Mode::Eval;
    const int n = static_cast<int>(data.size());
    int correct = 0;
    for (int start = 0; start < n; start += eval_batch) {
        const int end = std::min(n, start + eval_batch);
        std::vector<const Tensor*> xs;
        for (int i = start; i < end; ++i) xs.push_back(&data[static_cast<std::size_t>(i)].x);
        Tensor logits = forward(frozen, xs);
        for (int i = start; i < end; ++i) {
            const double* row =
                logits.data.data() + static_cast<std::size_t>(i - start) * frozen.n_classes;
            int arg = 0;
            for (int c = 1; c < frozen.n_classes; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == data[static_cast<std::size_t>(i)].y) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace rtt
