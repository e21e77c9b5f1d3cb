#pragma once

#include <vector>

#include "rtt/network.hpp"
#include "rtt/tensor.hpp"

namespace rtt {

struct LossResult {
    double mean = 0.0;
    std::vector<double> per_example;
};

// Mean softmax cross-entropy over the batch, log-sum-exp stabilized.
LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Row-wise softmax of [B, C] logits.
std::vector<double> softmax_rows(const Tensor& logits);

// d(mean CE)/d(logits): (softmax - onehot) * weight_b / batch.
// weights == nullptr means unit weights.
std::vector<double> cross_entropy_dlogits(const Tensor& logits, const std::vector<int>& labels,
                                          const std::vector<double>* weights = nullptr);

// Gradient of mean cross-entropy w.r.t. all parameters.
std::vector<double> grad_params(const Network& net, const std::vector<Example>& batch);

// Gradient of the loss of one example w.r.t. its pixels.
Tensor grad_input(const Network& net, const Example& example);

// Cached head-layer quantities for a frozen network: pre-head features,
// class probabilities and labels for every example. All head-restricted
// influence machinery runs off this cache so each example is forwarded once.
struct HeadCache {
    int n = 0;
    int feat_dim = 0;   // F: input width of the head dense layer
    int n_classes = 0;  // C
    std::vector<double> feats;  // n*F
    std::vector<double> probs;  // n*C
    std::vector<int> labels;

    std::size_t head_dim() const {
        return static_cast<std::size_t>(n_classes) * (feat_dim + 1);
    }
};

// Builds the cache with eval-mode forward passes (batched internally).
HeadCache build_head_cache(const Network& net, const std::vector<Example>& data);

// Per-example gradient of the loss w.r.t. head parameters, laid out like the
// head span: weights row-major [C x F], then bias [C].
std::vector<double> head_gradient_of(const HeadCache& cache, int i);

// Mean head gradient over a batch; equals grad_params restricted to head_span.
std::vector<double> head_gradient(const Network& net, const std::vector<Example>& batch);

// Hessian-vector product of the mean loss w.r.t. head parameters, plus
// damping*v. Uses the closed form of the softmax-linear head: per example
// H_i = (diag(p) - p p^T) (x) phi_a phi_a^T with phi_a the bias-augmented
// feature vector.
std::vector<double> hvp_head(const HeadCache& cache, const std::vector<double>& v,
                             double damping = 0.0);
std::vector<double> hvp_head(const Network& net, const std::vector<Example>& batch,
                             const std::vector<double>& v, double damping = 0.0);

// Gradient w.r.t. the input pixels of the scalar u . grad_head(loss(z)).
// This is the mixed second derivative contracted with u, backpropagated
// through the feature extractor.
Tensor mixed_grad(const Network& net, const Example& example, const std::vector<double>& u);

// Dense head Hessian of the mean loss plus damping on the diagonal,
// row-major [D x D] with D = head_dim. Feasible for small heads only.
std::vector<double> head_hessian(const HeadCache& cache, double damping);

// Classification accuracy in percent (argmax; ties go to the lowest index).
double accuracy(const Network& net, const std::vector<Example>& data, int eval_batch = 64);

}  // namespace rtt
