#include "rtt/influence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rtt/rng.hpp"

namespace rtt {

void validate(const LissaConfig& cfg) {
    if (cfg.depth < 1) throw std::invalid_argument("lissa: depth must be >= 1");
    if (!(cfg.scale > 0.0)) throw std::invalid_argument("lissa: scale must be > 0");
    if (cfg.damping < 0.0) throw std::invalid_argument("lissa: damping must be >= 0");
    if (cfg.repeats < 1) throw std::invalid_argument("lissa: repeats must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("lissa: batch_size must be >= 1");
}

std::vector<double> validation_gradient(const Network& net, const std::vector<Example>& val) {
    if (val.empty()) throw std::invalid_argument("validation_gradient: empty validation set");
    return head_gradient(net, val);
}

namespace {

// Hessian-vector product over a sampled index subset of the cache (undamped).
void hvp_subset(const HeadCache& cache, const std::vector<int>& idx,
                const std::vector<double>& v, std::vector<double>& out) {
    const int F = cache.feat_dim, C = cache.n_classes;
    std::fill(out.begin(), out.end(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    std::vector<double> t(static_cast<std::size_t>(C));
    for (int i : idx) {
        const double* phi = cache.feats.data() + static_cast<std::size_t>(i) * F;
        const double* p = cache.probs.data() + static_cast<std::size_t>(i) * C;
        for (int c = 0; c < C; ++c) {
            const double* vw = v.data() + static_cast<std::size_t>(c) * F;
            double acc = v[static_cast<std::size_t>(C) * F + c];
            for (int f = 0; f < F; ++f) acc += vw[f] * phi[f];
            t[static_cast<std::size_t>(c)] = acc;
        }
        double pt = 0.0;
        for (int c = 0; c < C; ++c) pt += p[c] * t[static_cast<std::size_t>(c)];
        for (int c = 0; c < C; ++c) {
            const double u = (p[c] * (t[static_cast<std::size_t>(c)] - pt)) * inv_n;
            if (u == 0.0) continue;
            double* ow = out.data() + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) ow[f] += u * phi[f];
            out[static_cast<std::size_t>(C) * F + c] += u;
        }
    }
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double lissa_residual(const HeadCache& cache, const std::vector<double>& est,
                      const std::vector<double>& v, double effective_damping) {
    std::vector<double> hv = hvp_head(cache, est, effective_damping);
    double num = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = hv[i] - v[i];
        num += d * d;
    }
    const double den = norm2(v);
    return den > 0.0 ? std::sqrt(num) / den : 0.0;
}

}  // namespace

std::vector<double> lissa_ihvp_op(const HvpSampler& hvp_sample, const std::vector<double>& v,
                                  const LissaConfig& cfg) {
    validate(cfg);
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument("lissa_ihvp: non-finite vector");

    const std::size_t D = v.size();
    std::vector<double> acc(D, 0.0), cur(D), hv(D, 0.0);
    Rng root(cfg.seed);

    for (int rep = 0; rep < cfg.repeats; ++rep) {
        Rng rng = root.derive("lissa-repeat", static_cast<std::uint64_t>(rep));
        cur = v;
        for (int j = 0; j < cfg.depth; ++j) {
            hvp_sample(rng, cur, hv);
            const double keep = 1.0 - cfg.damping;
            for (std::size_t k = 0; k < D; ++k) {
                cur[k] = v[k] + keep * cur[k] - hv[k] / cfg.scale;
                if (!(std::abs(cur[k]) <= 1e8))
                    throw std::runtime_error(
                        "lissa_ihvp: recurrence diverged at depth " + std::to_string(j) +
                        " (|component| > 1e8); increase scale above the Hessian spectral bound");
            }
        }
        for (std::size_t k = 0; k < D; ++k) acc[k] += cur[k] / cfg.scale;
    }
    for (double& x : acc) x /= static_cast<double>(cfg.repeats);
    return acc;
}

std::vector<double> lissa_ihvp(const HeadCache& trn, const std::vector<double>& v,
                               const LissaConfig& cfg, double* residual_out) {
    validate(cfg);
    if (v.size() != trn.head_dim())
        throw std::invalid_argument("lissa_ihvp: vector dim mismatch");
    std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size));
    HvpSampler sampler = [&](Rng& rng, const std::vector<double>& cur, std::vector<double>& out) {
        for (int& b : batch)
            b = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(trn.n)));
        hvp_subset(trn, batch, cur, out);
    };
    std::vector<double> acc = lissa_ihvp_op(sampler, v, cfg);
    if (residual_out) *residual_out = lissa_residual(trn, acc, v, cfg.effective_damping());
    return acc;
}

std::vector<double> lissa_ihvp(const Network& net, const std::vector<Example>& trn,
                               const std::vector<double>& v, const LissaConfig& cfg,
                               double* residual_out) {
    return lissa_ihvp(build_head_cache(net, trn), v, cfg, residual_out);
}

std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    if (a.size() != n * n) throw std::invalid_argument("solve_spd: dimension mismatch");
    // in-place Cholesky a = L L^T
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (!(d > 0.0))
            throw std::runtime_error("solve_spd: matrix not positive definite at pivot " +
                                     std::to_string(j) + " (add damping)");
        const double ljj = std::sqrt(d);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
    // L y = b
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    // L^T x = y
    for (std::size_t ii = n; ii > 0; --ii) {
        const std::size_t i = ii - 1;
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
    return b;
}

std::vector<double> exact_ihvp_oracle(const HeadCache& trn, const std::vector<double>& v,
                                      double damping) {
    if (v.size() != trn.head_dim())
        throw std::invalid_argument("exact_ihvp_oracle: vector dim mismatch");
    return solve_spd(head_hessian(trn, damping), v);
}

std::vector<double> exact_ihvp_oracle(const Network& net, const std::vector<Example>& trn,
                                      const std::vector<double>& v, double damping) {
    return exact_ihvp_oracle(build_head_cache(net, trn), v, damping);
}

double estimate_hessian_bound(const HeadCache& trn, std::uint64_t seed, int iters) {
    Rng rng = Rng(seed).derive("hessian-bound");
    std::vector<double> x(trn.head_dim());
    for (double& v : x) v = rng.normal();
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::vector<double> hx = hvp_head(trn, x, 0.0);
        const double nrm = norm2(hx);
        if (nrm == 0.0) return 0.0;
        double dot = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) dot += x[k] * hx[k];
        lambda = dot;  // x is unit length
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = hx[k] / nrm;
    }
    return lambda;
}

STest compute_s_test(const HeadCache& trn_cache, const std::vector<double>& val_grad,
                     const LissaConfig& cfg, const STestOptions& opts) {
    validate(cfg);
    LissaConfig used = cfg;
    if (opts.auto_scale && opts.method == IhvpMethod::Lissa) {
        const double bound = estimate_hessian_bound(trn_cache, cfg.seed);
        if (1.25 * bound > used.scale) used.scale = 1.25 * bound;
    }
    STest st;
    st.seed = used.seed;
    st.scale_used = used.scale;
    st.effective_damping = used.effective_damping();
    if (opts.method == IhvpMethod::Exact) {
        st.exact = true;
        st.vec = exact_ihvp_oracle(trn_cache, val_grad, st.effective_damping);
        st.residual = lissa_residual(trn_cache, st.vec, val_grad, st.effective_damping);
    } else {
        st.exact = false;
        st.vec = lissa_ihvp(trn_cache, val_grad, used, &st.residual);
    }
    return st;
}

STest compute_s_test(const Network& net, const std::vector<Example>& trn,
                     const std::vector<Example>& val, const LissaConfig& cfg,
                     const STestOptions& opts) {
    HeadCache cache = build_head_cache(net, trn);
    return compute_s_test(cache, validation_gradient(net, val), cfg, opts);
}

double influence_up_loss(const HeadCache& trn_cache, int index, const STest& s_test) {
    const int F = trn_cache.feat_dim, C = trn_cache.n_classes;
    if (s_test.vec.size() != trn_cache.head_dim())
        throw std::invalid_argument("influence_up_loss: s_test dim mismatch");
    const double* phi = trn_cache.feats.data() + static_cast<std::size_t>(index) * F;
    const double* p = trn_cache.probs.data() + static_cast<std::size_t>(index) * C;
    const int y = trn_cache.labels[static_cast<std::size_t>(index)];
    double score = 0.0;
    for (int c = 0; c < C; ++c) {
        const double* sw = s_test.vec.data() + static_cast<std::size_t>(c) * F;
        double q = s_test.vec[static_cast<std::size_t>(C) * F + c];
        for (int f = 0; f < F; ++f) q += sw[f] * phi[f];
        score += (p[c] - (c == y ? 1.0 : 0.0)) * q;
    }
    return -score;
}

double influence_up_loss(const Network& net, const Example& z, const STest& s_test) {
    HeadCache one = build_head_cache(net, {z});
    return influence_up_loss(one, 0, s_test);
}

std::vector<double> score_all(const HeadCache& trn_cache, const STest& s_test) {
    std::vector<double> scores(static_cast<std::size_t>(trn_cache.n));
    for (int i = 0; i < trn_cache.n; ++i)
        scores[static_cast<std::size_t>(i)] = influence_up_loss(trn_cache, i, s_test);
    return scores;
}

Tensor influence_pert_loss(const Network& net, const Example& z, const STest& s_test) {
    Tensor m = mixed_grad(net, z, s_test.vec);
    for (double& v : m.data) v = -v;
    return m;
}

std::vector<double> influence_param(const Network& net, const std::vector<Example>& trn,
                                    const Example& z, ParamInfluenceMode mode,
                                    const Example* z_hat, double damping) {
    HeadCache trn_cache = build_head_cache(net, trn);
    HeadCache zc = build_head_cache(net, {z});
    std::vector<double> g = head_gradient_of(zc, 0);
    if (mode == ParamInfluenceMode::Perturbation) {
        if (!z_hat) throw std::invalid_argument("influence_param: perturbation mode requires z_hat");
        HeadCache hc = build_head_cache(net, {*z_hat});
        std::vector<double> gh = head_gradient_of(hc, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gh[i] - g[i];
    }
    std::vector<double> x = exact_ihvp_oracle(trn_cache, g, damping);
    for (double& v : x) v = -v;
    return x;
}

// --- logistic Newton fits ---------------------------------------------------

namespace {

struct Flat {
    int n = 0, F = 0, C = 0;
    const std::vector<Example>* data = nullptr;
    int exclude = -1;

    int count() const { return exclude >= 0 ? n - 1 : n; }
};

double loss_of(const Flat& fl, const std::vector<double>& theta, double l2) {
    const int F = fl.F, C = fl.C;
    double total = 0.0;
    for (int i = 0; i < fl.n; ++i) {
        if (i == fl.exclude) continue;
        const Example& e = (*fl.data)[static_cast<std::size_t>(i)];
        double mx = -1e300, ly = 0.0;
        double lse = 0.0;
        std::vector<double> s(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            const double* wr = theta.data() + static_cast<std::size_t>(c) * F;
            double acc = theta[static_cast<std::size_t>(C) * F + c];
            for (int f = 0; f < F; ++f) acc += wr[f] * e.x.data[static_cast<std::size_t>(f)];
            s[static_cast<std::size_t>(c)] = acc;
            mx = std::max(mx, acc);
        }
        for (int c = 0; c < C; ++c) lse += std::exp(s[static_cast<std::size_t>(c)] - mx);
        lse = mx + std::log(lse);
        ly = s[static_cast<std::size_t>(e.y)];
        total += lse - ly;
    }
    total /= static_cast<double>(fl.count());
    if (l2 > 0.0) {
        double sq = 0.0;
        for (double t : theta) sq += t * t;
        total += 0.5 * l2 * sq;
    }
    return total;
}

// gradient and Hessian of mean CE + l2 ridge at theta
void grad_hess(const Flat& fl, const std::vector<double>& theta, double l2,
               std::vector<double>& grad, std::vector<double>* hess) {
    const int F = fl.F, C = fl.C;
    const std::size_t D = theta.size();
    grad.assign(D, 0.0);
    if (hess) hess->assign(D * D, 0.0);
    const double inv_n = 1.0 / static_cast<double>(fl.count());
    std::vector<double> p(static_cast<std::size_t>(C)), phia(static_cast<std::size_t>(F + 1));
    auto pidx = [&](int c, int g) {
        return g < F ? static_cast<std::size_t>(c) * F + g : static_cast<std::size_t>(C) * F + c;
    };
    for (int i = 0; i < fl.n; ++i) {
        if (i == fl.exclude) continue;
        const Example& e = (*fl.data)[static_cast<std::size_t>(i)];
        double mx = -1e300;
        for (int c = 0; c < C; ++c) {
            const double* wr = theta.data() + static_cast<std::size_t>(c) * F;
            double acc = theta[static_cast<std::size_t>(C) * F + c];
            for (int f = 0; f < F; ++f) acc += wr[f] * e.x.data[static_cast<std::size_t>(f)];
            p[static_cast<std::size_t>(c)] = acc;
            mx = std::max(mx, acc);
        }
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            p[static_cast<std::size_t>(c)] = std::exp(p[static_cast<std::size_t>(c)] - mx);
            sum += p[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < C; ++c) p[static_cast<std::size_t>(c)] /= sum;

        for (int f = 0; f < F; ++f) phia[static_cast<std::size_t>(f)] = e.x.data[static_cast<std::size_t>(f)];
        phia[static_cast<std::size_t>(F)] = 1.0;

        for (int c = 0; c < C; ++c) {
            const double r = (p[static_cast<std::size_t>(c)] - (c == e.y ? 1.0 : 0.0)) * inv_n;
            double* gw = grad.data() + static_cast<std::size_t>(c) * F;
            for (int f = 0; f < F; ++f) gw[f] += r * phia[static_cast<std::size_t>(f)];
            grad[static_cast<std::size_t>(C) * F + c] += r;
        }
        if (hess) {
            for (int c1 = 0; c1 < C; ++c1)
                for (int c2 = 0; c2 < C; ++c2) {
                    const double a = ((c1 == c2 ? p[static_cast<std::size_t>(c1)] : 0.0) -
                                      p[static_cast<std::size_t>(c1)] * p[static_cast<std::size_t>(c2)]) *
                                     inv_n;
                    if (a == 0.0) continue;
                    for (int g1 = 0; g1 <= F; ++g1) {
                        const double ap = a * phia[static_cast<std::size_t>(g1)];
                        double* row = hess->data() + pidx(c1, g1) * D;
                        for (int g2 = 0; g2 <= F; ++g2)
                            row[pidx(c2, g2)] += ap * phia[static_cast<std::size_t>(g2)];
                    }
                }
        }
    }
    if (l2 > 0.0) {
        for (std::size_t k = 0; k < D; ++k) grad[k] += l2 * theta[k];
        if (hess)
            for (std::size_t k = 0; k < D; ++k) (*hess)[k * D + k] += l2;
    }
}

}  // namespace

LogisticFit fit_logistic_newton(const std::vector<Example>& data, int n_classes, double l2,
                                int exclude_index, const NewtonOpts& opts) {
    if (data.empty()) throw std::invalid_argument("fit_logistic_newton: empty dataset");
    if (exclude_index >= static_cast<int>(data.size()))
        throw std::invalid_argument("fit_logistic_newton: exclude index out of range");
    Flat fl;
    fl.n = static_cast<int>(data.size());
    fl.F = static_cast<int>(data.front().x.size());
    fl.C = n_classes;
    fl.data = &data;
    fl.exclude = exclude_index;
    if (fl.count() < 1) throw std::invalid_argument("fit_logistic_newton: no data after exclusion");

    const std::size_t D = static_cast<std::size_t>(fl.C) * (fl.F + 1);
    LogisticFit fit;
    fit.theta.assign(D, 0.0);
    std::vector<double> grad, hess, step;
    double loss = loss_of(fl, fit.theta, l2);
    for (int it = 0; it < opts.max_iter; ++it) {
        grad_hess(fl, fit.theta, l2, grad, &hess);
        double gmax = 0.0;
        for (double g : grad) gmax = std::max(gmax, std::abs(g));
        fit.grad_norm = gmax;
        fit.iters = it;
        if (gmax < opts.tol) break;
        // tiny ridge keeps the factorization alive near separability
        const std::size_t Dn = fit.theta.size();
        for (std::size_t k = 0; k < Dn; ++k) hess[k * Dn + k] += 1e-12;
        step = solve_spd(hess, grad);
        double alpha = 1.0;
        std::vector<double> cand(Dn);
        for (int half = 0; half < 40; ++half) {
            for (std::size_t k = 0; k < Dn; ++k) cand[k] = fit.theta[k] - alpha * step[k];
            const double cl = loss_of(fl, cand, l2);
            if (cl <= loss) {
                fit.theta.swap(cand);
                loss = cl;
                break;
            }
            alpha *= 0.5;
        }
    }
    fit.loss = loss;
    return fit;
}

double logistic_loss(const std::vector<Example>& data, int n_classes,
                     const std::vector<double>& theta) {
    Flat fl;
    fl.n = static_cast<int>(data.size());
    fl.F = static_cast<int>(data.front().x.size());
    fl.C = n_classes;
    fl.data = &data;
    fl.exclude = -1;
    return loss_of(fl, theta, 0.0);
}

double loo_retrain_oracle(const std::vector<Example>& trn, const std::vector<Example>& val,
                          int index, int n_classes, double l2, const NewtonOpts& opts) {
    if (index < 0 || index >= static_cast<int>(trn.size()))
        throw std::invalid_argument("loo_retrain_oracle: index " + std::to_string(index) +
                                    " outside training set of size " + std::to_string(trn.size()));
    if (val.empty()) throw std::invalid_argument("loo_retrain_oracle: empty validation set");
    LogisticFit with_all = fit_logistic_newton(trn, n_classes, l2, -1, opts);
    LogisticFit without = fit_logistic_newton(trn, n_classes, l2, index, opts);
    return logistic_loss(val, n_classes, without.theta) -
           logistic_loss(val, n_classes, with_all.theta);
}

}  // namespace rtt
