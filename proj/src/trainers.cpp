#include "rtt/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rtt {

const char* method_name(Method m) {
    switch (m) {
        case Method::Naive: return "naive";
        case Method::At: return "at";
        case Method::Isr: return "isr";
        case Method::Isp: return "isp";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "naive") return Method::Naive;
    if (name == "at") return Method::At;
    if (name == "isr") return Method::Isr;
    if (name == "isp") return Method::Isp;
    throw std::invalid_argument("unknown method '" + name + "' (naive|at|isr|isp)");
}

void validate(const TrainConfig& cfg, Method method) {
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (cfg.pretrain_epochs < 0) throw std::invalid_argument("train: pretrain epochs must be >= 0");
    if ((method == Method::Isr || method == Method::Isp) &&
        (cfg.pretrain_epochs < 1 || cfg.pretrain_epochs >= cfg.epochs))
        throw std::invalid_argument("train: influence methods need 1 <= pretrain epochs < epochs");
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (cfg.max_weight < 1.0) throw std::invalid_argument("train: max weight must be >= 1");
    if (method == Method::Isp && !(cfg.select_ratio > 0.0 && cfg.select_ratio <= 1.0))
        throw std::invalid_argument("train: select ratio must be in (0,1]");
    if (cfg.gamma < 0.0) throw std::invalid_argument("train: gamma must be >= 0");
    if (cfg.fgsm_alpha < 0.0 || cfg.fgsm_eps < cfg.fgsm_alpha)
        throw std::invalid_argument("train: need eps >= alpha >= 0");
    validate(cfg.lissa);
}

Tensor hflip(const Tensor& x) {
    Tensor out = x;
    const int h = x.rows(), w = x.cols();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = x.at(r, w - 1 - c);
    return out;
}

Example fgsm_attack(const Network& net, const Example& example, double alpha, double eps,
                    Rng& rng) {
    if (alpha < 0.0 || eps < alpha)
        throw std::invalid_argument("fgsm_attack: need eps >= alpha >= 0");
    if (eps == 0.0 && alpha == 0.0) return example;

    const std::size_t n = example.x.size();
    std::vector<double> d0(n);
    for (std::size_t i = 0; i < n; ++i) d0[i] = rng.uniform(-eps, eps);

    Example probe = example;
    for (std::size_t i = 0; i < n; ++i) probe.x.data[i] += d0[i];
    Tensor g = grad_input(net, probe);

    Example out = example;
    for (std::size_t i = 0; i < n; ++i) {
        const double sg = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
        const double d = std::clamp(d0[i] + alpha * sg, -eps, eps);
        out.x.data[i] = std::clamp(example.x.data[i] + d, 0.0, 1.0);
    }
    return out;
}

double weighted_loss(const Network& net, const std::vector<Example>& batch,
                     const std::vector<double>& weights) {
    if (weights.size() != batch.size())
        throw std::invalid_argument("weighted_loss: weights not aligned with batch");
    Tensor logits = forward(net, batch);
    std::vector<int> labels;
    for (const Example& e : batch) labels.push_back(e.y);
    LossResult lr = cross_entropy(logits, labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) acc += weights[i] * lr.per_example[i];
    return acc / static_cast<double>(batch.size());
}

IsrWeights compute_isr_weights(const Network& net, const std::vector<Example>& trn,
                               const std::vector<Example>& val, double max_weight,
                               const LissaConfig& lissa) {
    if (max_weight < 1.0)
        throw std::invalid_argument("compute_isr_weights: max weight must be >= 1");
    HeadCache cache = build_head_cache(net, trn);
    IsrWeights out;
    out.s_test = compute_s_test(cache, validation_gradient(net, val), lissa);
    out.scores = score_all(cache, out.s_test);
    out.weights.assign(out.scores.size(), 1.0);
    const auto [lo_it, hi_it] = std::minmax_element(out.scores.begin(), out.scores.end());
    const double lo = *lo_it, hi = *hi_it;
    // identical scores carry no ranking information: keep plain training
    if (hi > lo) {
        const double span = hi - lo;
        for (std::size_t i = 0; i < out.scores.size(); ++i)
            out.weights[i] = 1.0 + (max_weight - 1.0) * (out.scores[i] - lo) / span;
    }
    return out;
}

Selection select_influential(const Network& net, const std::vector<Example>& trn,
                             const std::vector<Example>& val, double select_ratio,
                             const LissaConfig& lissa) {
    if (!(select_ratio > 0.0 && select_ratio <= 1.0))
        throw std::invalid_argument("select_influential: ratio must be in (0,1]");
    HeadCache cache = build_head_cache(net, trn);
    Selection sel;
    sel.s_test = compute_s_test(cache, validation_gradient(net, val), lissa);
    sel.scores = score_all(cache, sel.s_test);

    const int n = static_cast<int>(trn.size());
    const int k = static_cast<int>(std::ceil(select_ratio * static_cast<double>(n)));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = sel.scores[static_cast<std::size_t>(a)];
        const double sb = sel.scores[static_cast<std::size_t>(b)];
        return sa > sb || (sa == sb && a < b);  // most harmful first
    });
    sel.selected.assign(order.begin(), order.begin() + k);
    std::vector<char> in_sel(static_cast<std::size_t>(n), 0);
    for (int i : sel.selected) in_sel[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < n; ++i)
        if (!in_sel[static_cast<std::size_t>(i)]) sel.rest.push_back(i);
    return sel;
}

std::vector<Example> craft_isp_perturbations(const Network& net,
                                             const std::vector<Example>& trn,
                                             const std::vector<int>& selected,
                                             const STest& s_test, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("craft_isp_perturbations: gamma must be >= 0");
    std::vector<Example> out;
    out.reserve(selected.size());
    for (int idx : selected) {
        const Example& z = trn[static_cast<std::size_t>(idx)];
        Tensor map = influence_pert_loss(net, z, s_test);
        Example hat = z;
        for (std::size_t i = 0; i < map.size(); ++i)
            hat.x.data[i] = std::clamp(z.x.data[i] + (-gamma) * map.data[i], 0.0, 1.0);
        out.push_back(std::move(hat));
    }
    return out;
}

namespace {

struct EpochOpts {
    const std::vector<double>* weights = nullptr;  // per dataset index
    bool fgsm = false;
};

// One pass over the data; epoch is 1-based and every random stream is derived
// from (seed, epoch), so trajectories are identical across resume boundaries
// and across methods whose modifications degenerate to no-ops.
double train_one_epoch(Network& net, AdamState& adam, const std::vector<Example>& data,
                       int epoch, const TrainConfig& cfg, const EpochOpts& opts) {
    const int n = static_cast<int>(data.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).derive("epoch-shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    Rng aug_rng = Rng(cfg.seed).derive("epoch-aug", static_cast<std::uint64_t>(epoch));

    net.mode = Mode::Train;
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
        const int end = std::min(n, start + cfg.batch_size);
        std::vector<Example> batch;
        std::vector<double> batch_w;
        batch.reserve(static_cast<std::size_t>(end - start));
        for (int k = start; k < end; ++k) {
            const int idx = order[static_cast<std::size_t>(k)];
            Example e = data[static_cast<std::size_t>(idx)];
            if (cfg.augment && aug_rng.uniform01() < 0.5) e.x = hflip(e.x);
            if (opts.fgsm) {
                Rng arng = Rng(cfg.seed).derive("fgsm", static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(idx));
                Network frozen = net;
                frozen.mode = Mode::Eval;
                e = fgsm_attack(frozen, e, cfg.fgsm_alpha, cfg.fgsm_eps, arng);
            }
            if (opts.weights) batch_w.push_back((*opts.weights)[static_cast<std::size_t>(idx)]);
            batch.push_back(std::move(e));
        }

        Trace trace;
        Tensor logits = forward(net, batch, &trace);
        std::vector<int> labels;
        for (const Example& e : batch) labels.push_back(e.y);
        LossResult lr = cross_entropy(logits, labels);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double w = opts.weights ? batch_w[i] : 1.0;
            loss_sum += w * lr.per_example[i];
        }
        std::vector<double> dlogits =
            cross_entropy_dlogits(logits, labels, opts.weights ? &batch_w : nullptr);
        Grads g = backward(net, trace, dlogits, BackwardOpts{true, false});
        bn_update_running(net, trace);
        adam_step(adam, net.params, g.params);
    }
    return loss_sum / static_cast<double>(n);
}

}  // namespace

void pretrain(Network& net, AdamState& adam, const std::vector<Example>& trn,
              const TrainConfig& cfg) {
    for (int t = 1; t <= cfg.pretrain_epochs; ++t)
        train_one_epoch(net, adam, trn, t, cfg, EpochOpts{});
}

TrainResult train_run(Method method, const Network& init_net, const SplitDataset& ds,
                      const TrainConfig& cfg, const ResumeState* resume) {
    validate(cfg, method);
    if (ds.train.empty() || ds.val.empty() || ds.test.empty())
        throw std::invalid_argument("train: dataset must have all three splits");

    TrainResult res;
    int done_epochs = 0;
    if (resume) {
        res.net = resume->net;
        res.adam = resume->adam;
        done_epochs = resume->epoch;
        res.isr_weights = resume->isr_weights;
        res.isp_indices = resume->isp_indices;
        res.isp_images = resume->isp_images;
    } else {
        res.net = init_net;
        res.adam = AdamState(cfg.lr);
    }
    res.adam.lr = cfg.lr;
    res.metrics.method = method_name(method);
    res.metrics.seed = cfg.seed;

    // the influence pass draws from its own derived stream, so methods that
    // skip it (or degenerate to a no-op) share the training trajectory bitwise
    LissaConfig lissa = cfg.lissa;
    lissa.seed = Rng(cfg.seed).derive("influence").seed();

    std::vector<Example> working = ds.train;
    if (!res.isp_indices.empty()) {
        if (res.isp_images.size() != res.isp_indices.size())
            throw std::invalid_argument("train: resume state has mismatched perturbation data");
        for (std::size_t k = 0; k < res.isp_indices.size(); ++k)
            working[static_cast<std::size_t>(res.isp_indices[k])].x = res.isp_images[k];
    }

    Network best_net = res.net;
    double best_val = -1.0;
    int best_epoch = 0;

    for (int epoch = done_epochs + 1; epoch <= cfg.epochs; ++epoch) {
        // influence products are computed exactly once, right after warmup
        if (epoch == cfg.pretrain_epochs + 1) {
            if (method == Method::Isr && res.isr_weights.empty()) {
                IsrWeights w =
                    compute_isr_weights(res.net, ds.train, ds.val, cfg.max_weight, lissa);
                res.isr_weights = std::move(w.weights);
                res.s_test = std::move(w.s_test);
                res.influence_ran = true;
            }
            if (method == Method::Isp && res.isp_indices.empty()) {
                Selection sel =
                    select_influential(res.net, ds.train, ds.val, cfg.select_ratio, lissa);
                std::vector<Example> hat =
                    craft_isp_perturbations(res.net, ds.train, sel.selected, sel.s_test,
                                            cfg.gamma);
                res.isp_indices = sel.selected;
                res.isp_images.clear();
                for (std::size_t k = 0; k < hat.size(); ++k) {
                    working[static_cast<std::size_t>(sel.selected[k])].x = hat[k].x;
                    res.isp_images.push_back(hat[k].x);
                }
                res.s_test = std::move(sel.s_test);
                res.influence_ran = true;
            }
        }

        EpochOpts opts;
        if (method == Method::Isr && !res.isr_weights.empty()) opts.weights = &res.isr_weights;
        if (method == Method::At) opts.fgsm = true;
        const double loss = train_one_epoch(res.net, res.adam, working, epoch, cfg, opts);
        res.metrics.train_loss.push_back(loss);

        const double vacc = accuracy(res.net, ds.val);
        res.metrics.val_acc.push_back(vacc);
        if (vacc > best_val) {
            best_val = vacc;
            best_epoch = epoch;
            best_net = res.net;
        }
    }

    res.net.mode = Mode::Eval;
    res.metrics.final_val_acc =
        res.metrics.val_acc.empty() ? accuracy(res.net, ds.val) : res.metrics.val_acc.back();
    res.metrics.final_test_acc = accuracy(res.net, ds.test);
    if (best_epoch == 0) {  // resumed past the last epoch: report the final state
        best_net = res.net;
        best_epoch = std::max(cfg.epochs, done_epochs);
        best_val = res.metrics.final_val_acc;
    }
    res.metrics.best_epoch = best_epoch;
    res.metrics.best_val_acc = best_val;
    res.metrics.best_test_acc = accuracy(best_net, ds.test);
    return res;
}

TrainResult train_naive(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg) {
    return train_run(Method::Naive, init_net, ds, cfg);
}
TrainResult train_at(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg) {
    return train_run(Method::At, init_net, ds, cfg);
}
TrainResult train_isr(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg) {
    return train_run(Method::Isr, init_net, ds, cfg);
}
TrainResult train_isp(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg) {
    return train_run(Method::Isp, init_net, ds, cfg);
}

}  // namespace rtt
