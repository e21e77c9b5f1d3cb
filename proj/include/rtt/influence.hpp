#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rtt/engine.hpp"
#include "rtt/network.hpp"
#include "rtt/rng.hpp"
#include "rtt/tensor.hpp"

namespace rtt {

// Stochastic inverse-Hessian-vector-product configuration.
//
// The recurrence is  v_0 = v;  v_{j+1} = v + (1-damping) v_j - H_batch v_j / scale
// and the estimate is the mean of v_J / scale over `repeats` independent runs.
// Its fixed point is (H + scale*damping*I)^-1 v, so the operator actually
// inverted carries an effective damping of scale*damping; exact-solve
// comparisons must use that value.
struct LissaConfig {
    int depth = 100;       // J
    double scale = 25.0;   // spectral bound divisor; must exceed ||H||/2
    double damping = 0.01;
    int repeats = 4;       // R
    int batch_size = 8;    // examples per sampled Hessian-vector product
    std::uint64_t seed = 0;

    double effective_damping() const { return scale * damping; }
};

void validate(const LissaConfig& cfg);

// Inverse Hessian applied to the validation-group gradient, shared by every
// training point scored against that group.
struct STest {
    std::vector<double> vec;
    double residual = std::numeric_limits<double>::quiet_NaN();  // ||H v_hat - v|| / ||v||
    double scale_used = 0.0;
    double effective_damping = 0.0;
    bool exact = false;
    std::uint64_t seed = 0;
};

enum class IhvpMethod { Lissa, Exact };

// Gradient of the mean validation loss restricted to head parameters.
std::vector<double> validation_gradient(const Network& net, const std::vector<Example>& val);

// LiSSA estimate of (H + scale*damping*I)^-1 v over the training cache.
// Throws on divergence (any component above 1e8) advising a larger scale.
// residual_out, when given, receives ||H_eff v_hat - v|| / ||v|| measured
// against the full-data Hessian.
std::vector<double> lissa_ihvp(const HeadCache& trn, const std::vector<double>& v,
                               const LissaConfig& cfg, double* residual_out = nullptr);
std::vector<double> lissa_ihvp(const Network& net, const std::vector<Example>& trn,
                               const std::vector<double>& v, const LissaConfig& cfg,
                               double* residual_out = nullptr);

// Recurrence over an arbitrary sampled linear operator; each step calls
// hvp_sample(rng, cur, out) for a fresh stochastic Hessian-vector product.
using HvpSampler =
    std::function<void(Rng& rng, const std::vector<double>& v, std::vector<double>& out)>;
std::vector<double> lissa_ihvp_op(const HvpSampler& hvp_sample, const std::vector<double>& v,
                                  const LissaConfig& cfg);

// Dense solve of (H + damping I) x = v; test oracle for LiSSA and the exact
// route for small heads (head dim <= 2000).
std::vector<double> exact_ihvp_oracle(const HeadCache& trn, const std::vector<double>& v,
                                      double damping);
std::vector<double> exact_ihvp_oracle(const Network& net, const std::vector<Example>& trn,
                                      const std::vector<double>& v, double damping);

// Cholesky solve of a dense SPD system (row-major a, size n*n).
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b);

// Largest Hessian eigenvalue estimate via power iteration (undamped head
// Hessian); used to pick a safe LiSSA scale.
double estimate_hessian_bound(const HeadCache& trn, std::uint64_t seed, int iters = 30);

struct STestOptions {
    IhvpMethod method = IhvpMethod::Lissa;
    // When set, scale is raised to 1.25x the estimated spectral bound if the
    // configured scale is too small for the recurrence to contract.
    bool auto_scale = true;
};

STest compute_s_test(const Network& net, const std::vector<Example>& trn,
                     const std::vector<Example>& val, const LissaConfig& cfg,
                     const STestOptions& opts = {});
STest compute_s_test(const HeadCache& trn_cache, const std::vector<double>& val_grad,
                     const LissaConfig& cfg, const STestOptions& opts = {});

// Score of one training point against the validation group: -s . grad_head(z).
// Positive means harmful (removing the point would lower validation loss).
double influence_up_loss(const Network& net, const Example& z, const STest& s_test);
double influence_up_loss(const HeadCache& trn_cache, int index, const STest& s_test);

// Scores for every cached training point; order-independent by construction.
std::vector<double> score_all(const HeadCache& trn_cache, const STest& s_test);

// Per-pixel score map: -mixed_grad(net, z, s_test). A positive pixel value
// marks a pixel whose increase raises the validation loss through training.
Tensor influence_pert_loss(const Network& net, const Example& z, const STest& s_test);

enum class ParamInfluenceMode { Removal, Perturbation };

// Predicted head-parameter response direction for removing or perturbing z;
// the induced parameter change is -(1/n) times this. Exact dense solve.
std::vector<double> influence_param(const Network& net, const std::vector<Example>& trn,
                                    const Example& z, ParamInfluenceMode mode,
                                    const Example* z_hat = nullptr, double damping = 0.0);

// --- leave-one-out oracle on logistic heads -------------------------------

struct NewtonOpts {
    int max_iter = 100;
    double tol = 1e-10;  // max-abs gradient at the solution
};

struct LogisticFit {
    std::vector<double> theta;  // head layout: weights [C x F] then bias [C]
    int iters = 0;
    double grad_norm = 0.0;
    double loss = 0.0;
};

// Full-batch Newton fit of a softmax-linear model on flattened inputs,
// objective mean CE + (l2/2)||theta||^2, deterministic from theta = 0.
// exclude_index >= 0 drops that training point.
LogisticFit fit_logistic_newton(const std::vector<Example>& data, int n_classes, double l2,
                                int exclude_index = -1, const NewtonOpts& opts = {});

// Mean CE loss of a fitted logistic model on a dataset.
double logistic_loss(const std::vector<Example>& data, int n_classes,
                     const std::vector<double>& theta);

// Actual validation-loss change from retraining without trn[index]:
// returns L_val(fit without index) - L_val(fit with all points).
// Negative means the point was harmful (its removal lowers validation loss).
double loo_retrain_oracle(const std::vector<Example>& trn, const std::vector<Example>& val,
                          int index, int n_classes, double l2, const NewtonOpts& opts = {});

// Per-training-sample influence results for export.
struct InfluenceReport {
    std::string params_snapshot;
    std::vector<double> scores;
    std::string maps_file;          // empty when maps were not produced
    std::vector<int> maps_shape;    // [count, H, W] when maps are present
    double lissa_residual = std::numeric_limits<double>::quiet_NaN();
    double scale_used = 0.0;
    double effective_damping = 0.0;
    bool exact = false;
    std::uint64_t seed = 0;
};

}  // namespace rtt
