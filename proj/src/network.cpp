#include "rtt/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rtt/rng.hpp"

namespace rtt {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2: return "maxpool2x2";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
        case LayerKind::BatchNorm: return "batchnorm";
    }
    return "?";
}

std::string Shape3::str() const {
    return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

namespace {

[[noreturn]] void layer_error(int index, const LayerSpec& spec, const std::string& msg) {
    throw std::invalid_argument("layer " + std::to_string(index) + " (" +
                                layer_kind_name(spec.kind) + "): " + msg);
}

}  // namespace

int Network::feature_dim() const {
    if (head_layer < 0) return 0;
    const Shape3 in =
        head_layer == 0 ? input : out_shapes[static_cast<std::size_t>(head_layer) - 1];
    return in.c;
}

Network build_network(Shape3 input, std::vector<LayerSpec> layers) {
    if (input.c <= 0 || input.h <= 0 || input.w <= 0)
        throw std::invalid_argument("network: invalid input shape " + input.str());
    if (layers.empty()) throw std::invalid_argument("network: empty layer list");

    Network net;
    net.input = input;
    net.layers = std::move(layers);
    net.out_shapes.resize(net.layers.size());
    net.spans.resize(net.layers.size());
    net.bn_slot.assign(net.layers.size(), -1);

    Shape3 cur = input;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        ParamSpan span{offset, 0};
        switch (s.kind) {
            case LayerKind::Conv2d: {
                if (s.out_channels <= 0 || s.kernel <= 0 || s.stride <= 0 || s.pad < 0)
                    layer_error(static_cast<int>(l), s, "bad conv parameters");
                int oh = (cur.h + 2 * s.pad - s.kernel) / s.stride + 1;
                int ow = (cur.w + 2 * s.pad - s.kernel) / s.stride + 1;
                if (cur.h + 2 * s.pad < s.kernel || cur.w + 2 * s.pad < s.kernel || oh <= 0 ||
                    ow <= 0)
                    layer_error(static_cast<int>(l), s,
                                "kernel " + std::to_string(s.kernel) + " too large for input " +
                                    cur.str());
                span.size = static_cast<std::size_t>(s.out_channels) * cur.c * s.kernel * s.kernel +
                            static_cast<std::size_t>(s.out_channels);
                cur = Shape3{s.out_channels, oh, ow};
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool2: {
                if (cur.h < 2 || cur.w < 2)
                    layer_error(static_cast<int>(l), s, "input " + cur.str() + " too small");
                cur = Shape3{cur.c, cur.h / 2, cur.w / 2};
                break;
            }
            case LayerKind::Flatten:
                cur = Shape3{cur.count(), 1, 1};
                break;
            case LayerKind::Dense: {
                if (s.units <= 0) layer_error(static_cast<int>(l), s, "bad unit count");
                if (cur.h != 1 || cur.w != 1)
                    layer_error(static_cast<int>(l), s,
                                "expects flattened input, got " + cur.str());
                span.size = static_cast<std::size_t>(s.units) * cur.c +
                            static_cast<std::size_t>(s.units);
                cur = Shape3{s.units, 1, 1};
                break;
            }
            case LayerKind::BatchNorm: {
                net.bn_slot[l] = static_cast<int>(net.bn.size());
                BnRunning r;
                r.mean.assign(static_cast<std::size_t>(cur.c), 0.0);
                r.var.assign(static_cast<std::size_t>(cur.c), 1.0);
                net.bn.push_back(std::move(r));
                span.size = 2 * static_cast<std::size_t>(cur.c);  // gamma, beta
                break;
            }
        }
        offset += span.size;
        net.spans[l] = span;
        net.out_shapes[l] = cur;
    }

    if (net.layers.back().kind != LayerKind::Dense)
        throw std::invalid_argument("network: last layer must be dense");
    net.head_layer = static_cast<int>(net.layers.size()) - 1;
    net.head_span = net.spans.back();
    net.n_classes = net.layers.back().units;
    net.params.assign(offset, 0.0);
    return net;
}

void init_params(Network& net, std::uint64_t seed) {
    Rng root(seed);
    Shape3 cur = net.input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        const ParamSpan& span = net.spans[l];
        Rng rng = root.derive("init", l);
        double* p = net.params.data() + span.offset;
        if (s.kind == LayerKind::Conv2d) {
            std::size_t nw = static_cast<std::size_t>(s.out_channels) * cur.c * s.kernel * s.kernel;
            double std = std::sqrt(2.0 / (static_cast<double>(cur.c) * s.kernel * s.kernel));
            for (std::size_t i = 0; i < nw; ++i) p[i] = std * rng.normal();
            for (std::size_t i = nw; i < span.size; ++i) p[i] = 0.0;  // bias
        } else if (s.kind == LayerKind::Dense) {
            std::size_t nw = static_cast<std::size_t>(s.units) * cur.c;
            double std = std::sqrt(2.0 / static_cast<double>(cur.c));
            for (std::size_t i = 0; i < nw; ++i) p[i] = std * rng.normal();
            for (std::size_t i = nw; i < span.size; ++i) p[i] = 0.0;
        } else if (s.kind == LayerKind::BatchNorm) {
            std::size_t c = span.size / 2;
            for (std::size_t i = 0; i < c; ++i) p[i] = 1.0;      // gamma
            for (std::size_t i = c; i < span.size; ++i) p[i] = 0.0;  // beta
            BnRunning& r = net.bn[static_cast<std::size_t>(net.bn_slot[l])];
            std::fill(r.mean.begin(), r.mean.end(), 0.0);
            std::fill(r.var.begin(), r.var.end(), 1.0);
        }
        cur = net.out_shapes[l];
    }
}

namespace {

// valid output range along one axis: positions o with 0 <= o*stride - pad + k < n
inline void conv_axis_range(int n, int nout, int stride, int pad, int k, int& lo, int& hi) {
    int a = pad - k;  // need o*stride >= a
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    int t = n - 1 + pad - k;  // need o*stride <= t
    hi = t < 0 ? -1 : std::min(nout - 1, t / stride);
}

void conv_forward(const double* in, double* out, const double* w, const double* bias, Shape3 is,
                  Shape3 os, int kernel, int stride, int pad) {
    const int ihw = is.h * is.w, ohw = os.h * os.w;
    for (int co = 0; co < os.c; ++co) {
        double* oc = out + static_cast<std::size_t>(co) * ohw;
        std::fill(oc, oc + ohw, bias[co]);
        for (int ci = 0; ci < is.c; ++ci) {
            const double* icp = in + static_cast<std::size_t>(ci) * ihw;
            const double* wk =
                w + (static_cast<std::size_t>(co) * is.c + ci) * kernel * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
                int oy_lo, oy_hi;
                conv_axis_range(is.h, os.h, stride, pad, ky, oy_lo, oy_hi);
                for (int kx = 0; kx < kernel; ++kx) {
                    const double wv = wk[ky * kernel + kx];
                    int ox_lo, ox_hi;
                    conv_axis_range(is.w, os.w, stride, pad, kx, ox_lo, ox_hi);
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const double* irow = icp + (oy * stride - pad + ky) * is.w - pad + kx;
                        double* orow = oc + oy * os.w;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                orow[ox] += wv * irow[ox * stride];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const double* in, const double* dout, const double* w, double* din, double* dw,
                   double* db, Shape3 is, Shape3 os, int kernel, int stride, int pad) {
    const int ihw = is.h * is.w, ohw = os.h * os.w;
    for (int co = 0; co < os.c; ++co) {
        const double* doc = dout + static_cast<std::size_t>(co) * ohw;
        if (db) {
            double acc = 0.0;
            for (int i = 0; i < ohw; ++i) acc += doc[i];
            db[co] += acc;
        }
        for (int ci = 0; ci < is.c; ++ci) {
            const double* icp = in + static_cast<std::size_t>(ci) * ihw;
            double* dicp = din ? din + static_cast<std::size_t>(ci) * ihw : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(co) * is.c + ci) * kernel * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
                int oy_lo, oy_hi;
                conv_axis_range(is.h, os.h, stride, pad, ky, oy_lo, oy_hi);
                for (int kx = 0; kx < kernel; ++kx) {
                    const double wv = w[wbase + ky * kernel + kx];
                    int ox_lo, ox_hi;
                    conv_axis_range(is.w, os.w, stride, pad, kx, ox_lo, ox_hi);
                    double wacc = 0.0;
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const int ibase = (oy * stride - pad + ky) * is.w - pad + kx;
                        const double* drow = doc + oy * os.w;
                        if (dicp) {
                            if (stride == 1) {
                                double* dirow = dicp + ibase;
                                const double* irow = icp + ibase;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    dirow[ox] += wv * drow[ox];
                                    wacc += irow[ox] * drow[ox];
                                }
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    dicp[ibase + ox * stride] += wv * drow[ox];
                                    wacc += icp[ibase + ox * stride] * drow[ox];
                                }
                            }
                        } else {
                            if (stride == 1) {
                                const double* irow = icp + ibase;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    wacc += irow[ox] * drow[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    wacc += icp[ibase + ox * stride] * drow[ox];
                            }
                        }
                    }
                    if (dw) dw[wbase + ky * kernel + kx] += wacc;
                }
            }
        }
    }
}

}  // namespace

Tensor forward(const Network& net, const std::vector<const Tensor*>& xs, Trace* trace) {
    if (xs.empty()) throw std::invalid_argument("forward: empty batch");
    const int B = static_cast<int>(xs.size());
    const std::size_t in_count = static_cast<std::size_t>(net.input.count());

    Trace local;
    Trace& tr = trace ? *trace : local;
    tr.batch = B;
    tr.input.resize(static_cast<std::size_t>(B) * in_count);
    tr.acts.assign(net.layers.size(), {});
    tr.pool_idx.clear();
    tr.bn_cache.clear();

    for (int b = 0; b < B; ++b) {
        const Tensor& x = *xs[static_cast<std::size_t>(b)];
        if (x.size() != in_count)
            throw std::invalid_argument("forward: input 0 of batch element " + std::to_string(b) +
                                        " has " + std::to_string(x.size()) +
                                        " values, network expects " + net.input.str());
        std::copy(x.data.begin(), x.data.end(), tr.input.begin() + b * in_count);
    }

    Shape3 cur = net.input;
    const std::vector<double>* src = &tr.input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        const Shape3 os = net.out_shapes[l];
        std::vector<double>& dst = tr.acts[l];
        dst.resize(static_cast<std::size_t>(B) * os.count());
        const double* p = net.params.data() + net.spans[l].offset;

        switch (s.kind) {
            case LayerKind::Conv2d: {
                const double* bias = p + static_cast<std::size_t>(os.c) * cur.c * s.kernel * s.kernel;
                for (int b = 0; b < B; ++b)
                    conv_forward(src->data() + static_cast<std::size_t>(b) * cur.count(),
                                 dst.data() + static_cast<std::size_t>(b) * os.count(), p, bias,
                                 cur, os, s.kernel, s.stride, s.pad);
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < dst.size(); ++i)
                    dst[i] = (*src)[i] > 0.0 ? (*src)[i] : 0.0;
                break;
            }
            case LayerKind::MaxPool2: {
                tr.pool_idx.emplace_back(dst.size());
                std::vector<int>& idx = tr.pool_idx.back();
                const int ih = cur.h, iw = cur.w, oh = os.h, ow = os.w;
                for (int b = 0; b < B; ++b) {
                    for (int c = 0; c < cur.c; ++c) {
                        const double* ic =
                            src->data() + (static_cast<std::size_t>(b) * cur.c + c) * ih * iw;
                        double* oc =
                            dst.data() + (static_cast<std::size_t>(b) * os.c + c) * oh * ow;
                        int* xc = idx.data() + (static_cast<std::size_t>(b) * os.c + c) * oh * ow;
                        for (int oy = 0; oy < oh; ++oy) {
                            for (int ox = 0; ox < ow; ++ox) {
                                // first maximum in row-major window order wins
                                int base = (2 * oy) * iw + 2 * ox;
                                int best = base;
                                double bv = ic[base];
                                if (ic[base + 1] > bv) { bv = ic[base + 1]; best = base + 1; }
                                if (ic[base + iw] > bv) { bv = ic[base + iw]; best = base + iw; }
                                if (ic[base + iw + 1] > bv) { bv = ic[base + iw + 1]; best = base + iw + 1; }
                                oc[oy * ow + ox] = bv;
                                xc[oy * ow + ox] = best;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::Flatten: {
                dst = *src;
                break;
            }
            case LayerKind::Dense: {
                const int F = cur.c, U = os.c;
                const double* bias = p + static_cast<std::size_t>(U) * F;
                for (int b = 0; b < B; ++b) {
                    const double* xb = src->data() + static_cast<std::size_t>(b) * F;
                    double* yb = dst.data() + static_cast<std::size_t>(b) * U;
                    for (int u = 0; u < U; ++u) {
                        const double* wr = p + static_cast<std::size_t>(u) * F;
                        double acc = bias[u];
                        for (int f = 0; f < F; ++f) acc += wr[f] * xb[f];
                        yb[u] = acc;
                    }
                }
                break;
            }
            case LayerKind::BatchNorm: {
                const int C = cur.c, hw = cur.h * cur.w;
                const std::size_t n_per_c = static_cast<std::size_t>(B) * hw;
                const double* gamma = p;
                const double* beta = p + C;
                tr.bn_cache.emplace_back();
                BnCache& cache = tr.bn_cache.back();
                cache.mean.resize(static_cast<std::size_t>(C));
                cache.var.resize(static_cast<std::size_t>(C));
                cache.inv_std.resize(static_cast<std::size_t>(C));
                cache.xhat.resize(dst.size());
                const BnRunning& run = net.bn[static_cast<std::size_t>(net.bn_slot[l])];
                for (int c = 0; c < C; ++c) {
                    double mean, var, inv_std;
                    if (net.mode == Mode::Train) {
                        double sum = 0.0, sq = 0.0;
                        for (int b = 0; b < B; ++b) {
                            const double* xc =
                                src->data() + (static_cast<std::size_t>(b) * C + c) * hw;
                            for (int i = 0; i < hw; ++i) {
                                sum += xc[i];
                                sq += xc[i] * xc[i];
                            }
                        }
                        mean = sum / static_cast<double>(n_per_c);
                        var = sq / static_cast<double>(n_per_c) - mean * mean;
                        if (var < 0.0) var = 0.0;
                        inv_std = 1.0 / std::sqrt(var + net.bn_eps);
                    } else {
                        mean = run.mean[static_cast<std::size_t>(c)];
                        var = run.var[static_cast<std::size_t>(c)];
                        inv_std = 1.0 / std::sqrt(var + net.bn_eps);
                    }
                    cache.mean[static_cast<std::size_t>(c)] = mean;
                    cache.var[static_cast<std::size_t>(c)] = var;
                    cache.inv_std[static_cast<std::size_t>(c)] = inv_std;
                    const double g = gamma[c], bt = beta[c];
                    for (int b = 0; b < B; ++b) {
                        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                        const double* xc = src->data() + off;
                        double* yc = dst.data() + off;
                        double* hc = cache.xhat.data() + off;
                        for (int i = 0; i < hw; ++i) {
                            double xh = (xc[i] - mean) * inv_std;
                            hc[i] = xh;
                            yc[i] = g * xh + bt;
                        }
                    }
                }
                break;
            }
        }
        src = &dst;
        cur = os;
    }

    const std::vector<double>& out = tr.acts.back();
    Tensor logits({B, net.n_classes}, out);
    if (!logits.all_finite()) throw std::runtime_error("forward: non-finite logits");
    return logits;
}

Tensor forward(const Network& net, const std::vector<Example>& batch, Trace* trace) {
    std::vector<const Tensor*> xs;
    xs.reserve(batch.size());
    for (const Example& e : batch) xs.push_back(&e.x);
    return forward(net, xs, trace);
}

namespace {

// shared layer-by-layer reverse walk; `upto` stops after propagating into
// that layer's input (use 0 to reach the network input).
void backward_walk(const Network& net, const Trace& trace, int from_layer,
                   std::vector<double> cot, double* param_grads, std::vector<double>* input_grad) {
    const int B = trace.batch;
    // slot counters for pool/bn caches at each layer index
    std::vector<int> pool_slot(net.layers.size(), -1), bn_slot(net.layers.size(), -1);
    {
        int ps = 0, bs = 0;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            if (net.layers[l].kind == LayerKind::MaxPool2) pool_slot[l] = ps++;
            if (net.layers[l].kind == LayerKind::BatchNorm) bn_slot[l] = bs++;
        }
    }

    for (int l = from_layer; l >= 0; --l) {
        const LayerSpec& s = net.layers[static_cast<std::size_t>(l)];
        const Shape3 is = l == 0 ? net.input : net.out_shapes[static_cast<std::size_t>(l) - 1];
        const Shape3 os = net.out_shapes[static_cast<std::size_t>(l)];
        const std::vector<double>& in_act =
            l == 0 ? trace.input : trace.acts[static_cast<std::size_t>(l) - 1];
        const double* p = net.params.data() + net.spans[static_cast<std::size_t>(l)].offset;
        double* pg =
            param_grads ? param_grads + net.spans[static_cast<std::size_t>(l)].offset : nullptr;

        const bool need_din = l > 0 || input_grad != nullptr;
        std::vector<double> din;
        if (need_din) din.assign(static_cast<std::size_t>(B) * is.count(), 0.0);

        switch (s.kind) {
            case LayerKind::Conv2d: {
                const std::size_t nw =
                    static_cast<std::size_t>(os.c) * is.c * s.kernel * s.kernel;
                for (int b = 0; b < B; ++b)
                    conv_backward(in_act.data() + static_cast<std::size_t>(b) * is.count(),
                                  cot.data() + static_cast<std::size_t>(b) * os.count(), p,
                                  need_din ? din.data() + static_cast<std::size_t>(b) * is.count()
                                           : nullptr,
                                  pg, pg ? pg + nw : nullptr, is, os, s.kernel, s.stride, s.pad);
                break;
            }
            case LayerKind::Relu: {
                const std::vector<double>& out_act = trace.acts[static_cast<std::size_t>(l)];
                if (need_din)
                    for (std::size_t i = 0; i < cot.size(); ++i)
                        din[i] = out_act[i] > 0.0 ? cot[i] : 0.0;
                break;
            }
            case LayerKind::MaxPool2: {
                const std::vector<int>& idx =
                    trace.pool_idx[static_cast<std::size_t>(pool_slot[l])];
                if (need_din) {
                    const int chw_in = is.h * is.w, ohw = os.h * os.w;
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < os.c; ++c) {
                            const std::size_t ob = (static_cast<std::size_t>(b) * os.c + c) * ohw;
                            const std::size_t ib =
                                (static_cast<std::size_t>(b) * is.c + c) * chw_in;
                            for (int i = 0; i < ohw; ++i)
                                din[ib + idx[ob + i]] += cot[ob + i];
                        }
                }
                break;
            }
            case LayerKind::Flatten: {
                if (need_din) din = cot;
                break;
            }
            case LayerKind::Dense: {
                const int F = is.c, U = os.c;
                for (int b = 0; b < B; ++b) {
                    const double* xb = in_act.data() + static_cast<std::size_t>(b) * F;
                    const double* dyb = cot.data() + static_cast<std::size_t>(b) * U;
                    double* dxb = need_din ? din.data() + static_cast<std::size_t>(b) * F : nullptr;
                    for (int u = 0; u < U; ++u) {
                        const double dy = dyb[u];
                        if (dy == 0.0) continue;
                        const double* wr = p + static_cast<std::size_t>(u) * F;
                        if (pg) {
                            double* dwr = pg + static_cast<std::size_t>(u) * F;
                            for (int f = 0; f < F; ++f) dwr[f] += dy * xb[f];
                            pg[static_cast<std::size_t>(U) * F + u] += dy;
                        }
                        if (dxb)
                            for (int f = 0; f < F; ++f) dxb[f] += dy * wr[f];
                    }
                }
                break;
            }
            case LayerKind::BatchNorm: {
                const BnCache& cache = trace.bn_cache[static_cast<std::size_t>(bn_slot[l])];
                const int C = is.c, hw = is.h * is.w;
                const double n_per_c = static_cast<double>(B) * hw;
                const double* gamma = p;
                for (int c = 0; c < C; ++c) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                        for (int i = 0; i < hw; ++i) {
                            sum_dy += cot[off + i];
                            sum_dy_xhat += cot[off + i] * cache.xhat[off + i];
                        }
                    }
                    if (pg) {
                        pg[c] += sum_dy_xhat;       // dgamma
                        pg[C + c] += sum_dy;        // dbeta
                    }
                    if (need_din) {
                        const double g_is = gamma[c] * cache.inv_std[static_cast<std::size_t>(c)];
                        for (int b = 0; b < B; ++b) {
                            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                            for (int i = 0; i < hw; ++i) {
                                if (net.mode == Mode::Train) {
                                    din[off + i] =
                                        g_is / n_per_c *
                                        (n_per_c * cot[off + i] - sum_dy -
                                         cache.xhat[off + i] * sum_dy_xhat);
                                } else {
                                    din[off + i] = g_is * cot[off + i];
                                }
                            }
                        }
                    }
                }
                break;
            }
        }
        if (l == 0) {
            if (input_grad) *input_grad = std::move(din);
            return;
        }
        cot = std::move(din);
    }
}

}  // namespace

Grads backward(const Network& net, const Trace& trace, const std::vector<double>& dlogits,
               const BackwardOpts& opts) {
    if (dlogits.size() !=
        static_cast<std::size_t>(trace.batch) * static_cast<std::size_t>(net.n_classes))
        throw std::invalid_argument("backward: dlogits size mismatch");
    Grads g;
    if (opts.param_grads) g.params.assign(net.n_params(), 0.0);
    backward_walk(net, trace, static_cast<int>(net.layers.size()) - 1, dlogits,
                  opts.param_grads ? g.params.data() : nullptr,
                  opts.input_grad ? &g.input : nullptr);
    return g;
}

std::vector<double> backward_to_input(const Network& net, const Trace& trace, int from_layer,
                                      const std::vector<double>& cot) {
    if (from_layer < 0) return cot;  // cotangent already at the input
    std::vector<double> input_grad;
    backward_walk(net, trace, from_layer, cot, nullptr, &input_grad);
    return input_grad;
}

void bn_update_running(Network& net, const Trace& trace) {
    int slot = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (net.layers[l].kind != LayerKind::BatchNorm) continue;
        const BnCache& cache = trace.bn_cache[static_cast<std::size_t>(slot)];
        BnRunning& run = net.bn[static_cast<std::size_t>(slot)];
        const double m = net.bn_momentum;
        for (std::size_t c = 0; c < run.mean.size(); ++c) {
            run.mean[c] = (1.0 - m) * run.mean[c] + m * cache.mean[c];
            run.var[c] = (1.0 - m) * run.var[c] + m * cache.var[c];
        }
        ++slot;
    }
}

}  // namespace rtt
