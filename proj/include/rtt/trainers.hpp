#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rtt/adam.hpp"
#include "rtt/datagen.hpp"
#include "rtt/influence.hpp"
#include "rtt/network.hpp"

namespace rtt {

enum class Method { Naive, At, Isr, Isp };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
    int epochs = 40;           // T
    int pretrain_epochs = 10;  // T_pre (influence methods act at this boundary)
    double lr = 0.01;
    int batch_size = 32;
    double max_weight = 2.0;   // m: ISR weight ceiling
    double select_ratio = 0.1; // r: ISP selected fraction
    double gamma = 0.01;       // ISP perturbation scale
    double fgsm_alpha = 0.03;
    double fgsm_eps = 0.1;
    bool augment = false;      // random horizontal flip during gradient steps
    std::uint64_t seed = 0;
    LissaConfig lissa;
};

void validate(const TrainConfig& cfg, Method method);

struct RunMetrics {
    std::string method;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<double> train_loss;  // per epoch (weighted loss for ISR)
    std::vector<double> val_acc;     // per epoch, percent
    double final_val_acc = 0.0;
    double final_test_acc = 0.0;
    int best_epoch = 0;  // 1-based epoch with the highest validation accuracy
    double best_val_acc = 0.0;
    double best_test_acc = 0.0;
    double wall_seconds = 0.0;
};

// State needed to continue an interrupted run exactly. The influence products
// (weights, perturbed images) are part of the trajectory once computed, so
// they travel with the checkpoint.
struct ResumeState {
    Network net;
    AdamState adam;
    int epoch = 0;  // epochs already completed
    std::vector<double> isr_weights;
    std::vector<int> isp_indices;
    std::vector<Tensor> isp_images;
};

struct TrainResult {
    Network net;
    AdamState adam;
    RunMetrics metrics;
    std::vector<double> isr_weights;  // populated by ISR after the boundary
    std::vector<int> isp_indices;     // populated by ISP after the boundary
    std::vector<Tensor> isp_images;
    STest s_test;  // provenance of the influence pass, when one ran
    bool influence_ran = false;
};

// --- individual operations --------------------------------------------------

// Random horizontal flip used for train-time augmentation.
Tensor hflip(const Tensor& x);

// Single-step signed-gradient attack from a uniform random start:
// d0 ~ U(-eps,eps); d = clamp(d0 + alpha*sign(grad_x loss(x+d0)), -eps, eps);
// returns clip(x+d, 0, 1). sign(0) = 0.
Example fgsm_attack(const Network& net, const Example& example, double alpha, double eps,
                    Rng& rng);

// (1/|batch|) sum_i w_i * loss_i; weights aligned with the batch.
double weighted_loss(const Network& net, const std::vector<Example>& batch,
                     const std::vector<double>& weights);

struct IsrWeights {
    std::vector<double> weights;  // in [1, m], aligned with the training set
    std::vector<double> scores;   // raw influence scores
    STest s_test;
};

// Min-max mapping of scores into [1, max_weight]: the most negative (helpful)
// score maps to 1, the most positive (harmful) to max_weight. All-equal
// scores degenerate to unit weights.
std::vector<double> scale_weights(const std::vector<double>& scores, double max_weight);

// Influence scores min-max scaled into [1, m]: most helpful (most negative)
// score maps to 1, most harmful to m. Identical scores degenerate to all 1.
IsrWeights compute_isr_weights(const Network& net, const std::vector<Example>& trn,
                               const std::vector<Example>& val, double max_weight,
                               const LissaConfig& lissa);

struct Selection {
    std::vector<int> selected;  // ceil(r*n) most harmful, by descending score
    std::vector<int> rest;      // complement, in original order
    std::vector<double> scores;
    STest s_test;
};

// Ranks training points by influence score (descending, ties by original
// index) and takes the top ceil(r*n).
Selection select_influential(const Network& net, const std::vector<Example>& trn,
                             const std::vector<Example>& val, double select_ratio,
                             const LissaConfig& lissa);

// Perturbed copies of the selected points: x' = clip(x - gamma * map, 0, 1)
// where map is the per-pixel influence score of the point. The step moves
// against the score, i.e. toward lower predicted validation loss; labels and
// flags are preserved.
std::vector<Example> craft_isp_perturbations(const Network& net,
                                             const std::vector<Example>& trn,
                                             const std::vector<int>& selected,
                                             const STest& s_test, double gamma);

// T_pre epochs of plain minibatch Adam on the unweighted loss.
void pretrain(Network& net, AdamState& adam, const std::vector<Example>& trn,
              const TrainConfig& cfg);

// --- full training procedures ------------------------------------------------

TrainResult train_run(Method method, const Network& init_net, const SplitDataset& ds,
                      const TrainConfig& cfg, const ResumeState* resume = nullptr);

TrainResult train_naive(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg);
TrainResult train_at(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg);
TrainResult train_isr(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg);
TrainResult train_isp(const Network& init_net, const SplitDataset& ds, const TrainConfig& cfg);

}  // namespace rtt
