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

#include <cstdint>
#include <string>
#include <vector>

#include "prpl/model.hpp"

namespace prpl {

/// Probabilities and similarities are clamped to [kClampEps, 1-kClampEps]
/// before any logarithm.
inline constexpr double kClampEps = 1e-7;

enum class PairLabel : std::uint8_t { Unpaired = 0, Paired = 1, Invalid = 2 };

/// Symmetric N x N relation between sample pairs. Source matrices never
/// contain Invalid; target matrices may (the threshold uncertainty band).
struct PairLabelMatrix {
    std::size_t n = 0;
    std::vector<PairLabel> data;

    explicit PairLabelMatrix(std::size_t size = 0)
        : n(size), data(size * size, PairLabel::Unpaired) {}
    PairLabel& at(std::size_t i, std::size_t j) { return data[i * n + j]; }
    PairLabel at(std::size_t i, std::size_t j) const { return data[i * n + j]; }
};

struct ThresholdState {
    double tau_h = 0.9;
    double tau_l = 0.5;
    std::size_t epoch = 0;
};

enum class LambdaMode { Standard, Literal };
enum class RegularizerForm { Printed, Gram };
enum class SimilarityForm { Cosine, RawDot };
enum class PseudoMode { Fixed, Linear, Nonlinear };
enum class GammaMode { Fixed, Dynamic };

/// Every training hyperparameter, schedule choice, and ablation toggle.
struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 96;
    std::size_t maxepoch = 100;
    double beta = 0.01;          // prototype-regularizer weight
    double delta = 2.0;          // scale of the target-pairwise weight gamma
    double tau_h0 = 0.9;
    double tau_l0 = 0.5;
    double p_drop = 0.5;
    double l2_weight = 1e-5;
    double rmsprop_rho = 0.99;
    double rmsprop_eps = 1e-8;
    std::uint64_t seed = 0;

    LambdaMode lambda_mode = LambdaMode::Standard;
    RegularizerForm reg_form = RegularizerForm::Printed;
    SimilarityForm sim_form = SimilarityForm::Cosine;
    PseudoMode pseudo_mode = PseudoMode::Nonlinear;
    GammaMode gamma_mode = GammaMode::Dynamic;

    bool no_discriminator = false;
    bool no_target_pairwise = false;
    bool no_source_pairwise = false;
    bool no_prototypes = false;

    void validate() const;  // throws std::invalid_argument on bad values
};

/// -sum log d_s - sum log(1 - d_t), probabilities clamped before the logs.
double discriminator_loss(const std::vector<double>& d_s, const std::vector<double>& d_t);

/// Standard mode: 2/(1+exp(-10p)) - 1. Literal mode: 2/(1-exp(-p)) - 1
/// clamped to [0, 10].
double lambda_schedule(double p, LambdaMode mode);

PairLabelMatrix source_pair_labels(const std::vector<int>& y);

/// Cosine similarity of two interaction features; in (0, 1] for softmax outputs.
double pairwise_similarity(const InteractionFeature& a, const InteractionFeature& b);

/// -r log g - (1-r) log(1-g) with g clamped.
double pair_bce(int r, double g);

double prototype_regularizer(const PrototypeSet& protos, RegularizerForm form);

/// Full double loop over ordered pairs, i=j included, plus beta * R(P).
double source_pairwise_loss(const std::vector<InteractionFeature>& feats,
                            const PairLabelMatrix& labels, const PrototypeSet& protos,
                            double beta, RegularizerForm form);

/// Paired if sim >= tau_h, Unpaired if sim < tau_l, Invalid in between.
PairLabelMatrix target_pseudo_labels(const std::vector<InteractionFeature>& feats,
                                     const ThresholdState& th, SimilarityForm form);

/// Same pair loss as the source side, but Invalid pairs are skipped.
double target_pairwise_loss(const std::vector<InteractionFeature>& feats,
                            const PairLabelMatrix& labels);

/// One annealing step: both thresholds move toward each other by
/// gap/maxepoch, shrinking the gap by (1 - 2/maxepoch).
ThresholdState update_thresholds(const ThresholdState& th, std::size_t maxepoch);

/// Closed-form gap after t steps, used only as a cross-check of the recurrence.
double threshold_gap_closed_form(double tau_h0, double tau_l0, std::size_t maxepoch, std::size_t t);

double gamma_schedule(std::size_t epoch, std::size_t maxepoch, double delta);

/// L_pair_source + gamma * L_pair_target - lambda * L_disc.
double total_objective(double source_pair, double target_pair, double disc, double lambda,
                       double gamma);

}  // namespace prpl
