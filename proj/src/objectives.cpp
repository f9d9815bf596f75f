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

#include "prpl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prpl {

namespace {

double clamp_unit(double v) { return std::clamp(v, kClampEps, 1.0 - kClampEps); }

double similarity(const InteractionFeature& a, const InteractionFeature& b, SimilarityForm form) {
    if (form == SimilarityForm::RawDot) return dot(a.l, b.l);
    return pairwise_similarity(a, b);
}

}  // namespace

void TrainConfig::validate() const {
    // maxepoch == 0 is allowed and means "no training" (initialized model).
    if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
    if (delta < 0.0) throw std::invalid_argument("delta must be >= 0");
    if (!(0.0 <= tau_l0 && tau_l0 <= tau_h0 && tau_h0 <= 1.0))
        throw std::invalid_argument("thresholds must satisfy 0 <= tau_l0 <= tau_h0 <= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw std::invalid_argument("p_drop must be in [0,1)");
    if (lr <= 0.0) throw std::invalid_argument("lr must be > 0");
    if (l2_weight < 0.0) throw std::invalid_argument("l2_weight must be >= 0");
}

double discriminator_loss(const std::vector<double>& d_s, const std::vector<double>& d_t) {
    if (d_s.empty() || d_t.empty())
        throw std::invalid_argument("discriminator_loss: empty probability vector");
    double loss = 0.0;
    for (double d : d_s) loss -= std::log(clamp_unit(d));
    for (double d : d_t) loss -= std::log(1.0 - clamp_unit(d));
    return loss;
}

double lambda_schedule(double p, LambdaMode mode) {
    if (mode == LambdaMode::Standard) return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
    // Literal form diverges as p -> 0; clamp keeps it usable.
    constexpr double kLambdaMax = 10.0;
    if (p <= 0.0) return kLambdaMax;
    const double v = 2.0 / (1.0 - std::exp(-p)) - 1.0;
    return std::clamp(v, 0.0, kLambdaMax);
}

PairLabelMatrix source_pair_labels(const std::vector<int>& y) {
    PairLabelMatrix m(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j)
            m.at(i, j) = y[i] == y[j] ? PairLabel::Paired : PairLabel::Unpaired;
    return m;
}

double pairwise_similarity(const InteractionFeature& a, const InteractionFeature& b) {
    const double na = norm2(a.l);
    const double nb = norm2(b.l);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("pairwise_similarity: zero-norm interaction feature");
    return dot(a.l, b.l) / (na * nb);
}

double pair_bce(int r, double g) {
    const double gc = clamp_unit(g);
    return -r * std::log(gc) - (1 - r) * std::log(1.0 - gc);
}

double prototype_regularizer(const PrototypeSet& protos, RegularizerForm form) {
    const Matrix& p = protos.P;
    Matrix m = form == RegularizerForm::Printed ? matmul_tn(p, p) : matmul_nt(p, p);
    double sq = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) {
            const double v = m.at(i, j) - (i == j ? 1.0 : 0.0);
            sq += v * v;
        }
    return std::sqrt(sq);
}

double source_pairwise_loss(const std::vector<InteractionFeature>& feats,
                            const PairLabelMatrix& labels, const PrototypeSet& protos,
                            double beta, RegularizerForm form) {
    if (labels.n != feats.size())
        throw std::invalid_argument("source_pairwise_loss: label matrix size mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = 0; j < feats.size(); ++j) {
            const int r = labels.at(i, j) == PairLabel::Paired ? 1 : 0;
            loss += pair_bce(r, pairwise_similarity(feats[i], feats[j]));
        }
    if (beta > 0.0) loss += beta * prototype_regularizer(protos, form);
    return loss;
}

PairLabelMatrix target_pseudo_labels(const std::vector<InteractionFeature>& feats,
                                     const ThresholdState& th, SimilarityForm form) {
    if (th.tau_h < th.tau_l)
        throw std::invalid_argument("target_pseudo_labels: tau_h < tau_l");
    PairLabelMatrix m(feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = i; j < feats.size(); ++j) {
            const double s = similarity(feats[i], feats[j], form);
            PairLabel label = PairLabel::Invalid;
            if (s >= th.tau_h)
                label = PairLabel::Paired;
            else if (s < th.tau_l)
                label = PairLabel::Unpaired;
            m.at(i, j) = label;
            m.at(j, i) = label;
        }
    return m;
}

double target_pairwise_loss(const std::vector<InteractionFeature>& feats,
                            const PairLabelMatrix& labels) {
    if (labels.n != feats.size())
        throw std::invalid_argument("target_pairwise_loss: label matrix size mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = 0; j < feats.size(); ++j) {
            const PairLabel pl = labels.at(i, j);
            if (pl == PairLabel::Invalid) continue;
            const int r = pl == PairLabel::Paired ? 1 : 0;
            loss += pair_bce(r, pairwise_similarity(feats[i], feats[j]));
        }
    return loss;
}

ThresholdState update_thresholds(const ThresholdState& th, std::size_t maxepoch) {
    if (maxepoch < 3) throw std::invalid_argument("update_thresholds: maxepoch must be >= 3");
    const double step = (th.tau_h - th.tau_l) / static_cast<double>(maxepoch);
    ThresholdState out;
    out.tau_h = th.tau_h - step;
    out.tau_l = th.tau_l + step;
    out.epoch = th.epoch + 1;
    return out;
}

double threshold_gap_closed_form(double tau_h0, double tau_l0, std::size_t maxepoch,
                                 std::size_t t) {
    return (tau_h0 - tau_l0) *
           std::pow(1.0 - 2.0 / static_cast<double>(maxepoch), static_cast<double>(t));
}

double gamma_schedule(std::size_t epoch, std::size_t maxepoch, double delta) {
    if (epoch > maxepoch) throw std::invalid_argument("gamma_schedule: epoch > maxepoch");
    return delta * static_cast<double>(epoch) / static_cast<double>(maxepoch);
}

double total_objective(double source_pair, double target_pair, double disc, double lambda,
                       double gamma) {
    return source_pair + gamma * target_pair - lambda * disc;
}

}  // namespace prpl
