/*
 * Copyright 2026 prpl Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <functional>
#include <limits>

#include "prpl/data.hpp"
#include "prpl/model.hpp"
#include "prpl/objectives.hpp"

namespace prpl {

/// Same shapes as ModelParams.
struct Gradients {
    FeatureExtractorParams extractor;
    DiscriminatorParams discriminator;
    Matrix bilinear;
};

Gradients zero_gradients(const ModelParams& params);

/// Per-parameter running mean of squared gradients.
struct OptimizerState {
    std::vector<std::vector<double>> acc;  // one entry per parameter tensor
    double rho = 0.99;
    double eps = 1e-8;
};

struct StepSchedules {
    double lambda = 0.0;
    double gamma = 0.0;
    double beta = 0.0;
};

struct BackwardResult {
    double objective = 0.0;
    double source_pair_loss = 0.0;
    double target_pair_loss = 0.0;
    double disc_loss = 0.0;
    Gradients grads;
};

/// Gradients of the combined objective: theta_f and S get the descent
/// direction of L_s + gamma L_t - lambda L_disc (the -lambda factor on the
/// discriminator path into theta_f is the gradient reversal); theta_d gets
/// the plain descent direction of L_disc (its own maximization of the
/// -lambda term). Pseudo labels and dropout masks are frozen inputs.
/// Throws on non-finite gradients, naming the offending tensor.
BackwardResult backward(const ModelParams& params, const TrainConfig& cfg, const Matrix& xs,
                        const std::vector<int>& ys, const Matrix& xt,
                        const PairLabelMatrix& source_labels,
                        const PairLabelMatrix& target_labels, const StepSchedules& sch,
                        const Matrix* dropout_mask_s, const Matrix* dropout_mask_t);

/// Forward-only evaluation of the same objective; the function finite
/// differences are taken of.
BackwardResult evaluate_objective(const ModelParams& params, const TrainConfig& cfg,
                                  const Matrix& xs, const std::vector<int>& ys, const Matrix& xt,
                                  const PairLabelMatrix& source_labels,
                                  const PairLabelMatrix& target_labels, const StepSchedules& sch,
                                  const Matrix* dropout_mask_s, const Matrix* dropout_mask_t);

/// acc <- rho acc + (1-rho) g^2; p <- p - lr g / sqrt(acc + eps);
/// decoupled L2 decay lr * l2 * p afterwards.
void rmsprop_step(ModelParams& params, const Gradients& grads, OptimizerState& state, double lr,
                  double l2_weight);

/// Per-step index lists. Source batches are stratified so every class
/// appears at least once; the shorter domain cycles.
struct BatchPlan {
    std::vector<std::vector<std::size_t>> source;
    std::vector<std::vector<std::size_t>> target;
    std::size_t steps() const { return source.size(); }
};

BatchPlan make_batches(const Dataset& d_s, std::size_t n_target, std::size_t batch_size,
                       std::uint64_t seed);

struct EpochRecord {
    std::size_t epoch = 0;
    double lambda = 0.0;
    double gamma = 0.0;
    double tau_h = 0.0;
    double tau_l = 0.0;
    double source_pair_loss = 0.0;  // mean over steps
    double target_pair_loss = 0.0;
    double disc_loss = 0.0;
    double objective = 0.0;
    double valid_pair_fraction = 0.0;
    double source_accuracy = 0.0;
    double target_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

struct FitResult {
    ModelParams params;
    PrototypeSet prototypes;  // recomputed over the full source set
    TrainHistory history;
};

/// Called at the end of each epoch; target labels live only in the
/// caller's closure, never inside fit.
using EvalCallback = std::function<double(const ModelParams&, const PrototypeSet&)>;

/// Full training loop: schedules, stratified batches, per-step prototypes,
/// pseudo labels, backward, RMSprop. Target data is features only.
FitResult fit(const TrainConfig& config, const Dataset& d_s, const Matrix& x_t,
              const EvalCallback& target_eval = nullptr);

struct GradCheckDims {
    std::size_t d_in = 8;
    std::size_t n_per_domain = 12;
    std::size_t n_classes = 3;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    std::size_t params_checked = 0;
};

/// Central finite differences over every parameter of a random small
/// instance; theta_f/S checked against the combined objective, theta_d
/// against the discriminator loss it actually descends.
GradCheckReport gradient_check(std::uint64_t seed, const GradCheckDims& dims = {},
                               double tolerance = 1e-4);

}  // namespace prpl
