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
#include <optional>
#include <vector>

#include "prpl/matrix.hpp"

namespace prpl {

/// Width of the learned feature space; all hidden layers share it.
inline constexpr std::size_t kFeatureDim = 64;

struct AffineLayer {
    Matrix W;                // in x out
    std::vector<double> b;   // out
};

/// Three affine layers d_in -> 64 -> 64 -> 64; the first two hidden
/// activations are rectified, the output layer is linear. Inputs are
/// optionally standardized per dimension by fixed (not trained) shift and
/// scale vectors; fit sets them from source statistics so both domains see
/// O(1) inputs regardless of the raw feature baseline.
struct FeatureExtractorParams {
    AffineLayer l1, l2, l3;
    std::vector<double> in_shift;  // empty = identity
    std::vector<double> in_scale;  // empty = identity
    std::size_t input_dim() const { return l1.W.rows; }
};

/// 64 -> 64 (rectified, dropout) -> 64 -> 1 with logistic output.
struct DiscriminatorParams {
    AffineLayer l1, l2, l3;
    double p_drop = 0.5;
};

struct ModelParams {
    FeatureExtractorParams extractor;
    DiscriminatorParams discriminator;
    Matrix bilinear;  // 64 x 64, unconstrained
    std::size_t d_in = 0;
    std::size_t n_classes = 0;
};

/// One prototype vector per emotion class; row c is the centroid of the
/// source sample features labeled c in the defining batch.
struct PrototypeSet {
    Matrix P;  // n x 64
    std::size_t n_classes() const { return P.rows; }
};

struct InteractionFeature {
    std::vector<double> l;       // softmax over per-class bilinear scores
    std::vector<double> l_norm;  // l scaled to unit Euclidean length
};

/// All weights drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)];
/// deterministic for a given seed.
ModelParams init_params(std::uint64_t seed, std::size_t d_in, std::size_t n_classes);

/// Layer activations kept for the backward pass. xn is the standardized
/// input (empty when the extractor has no standardizer).
struct ExtractorCache {
    Matrix xn;
    Matrix a1, h1, a2, h2, f;
};

Matrix extract_features(const FeatureExtractorParams& p, const Matrix& x);
ExtractorCache extract_features_cached(const FeatureExtractorParams& p, const Matrix& x);

struct DiscriminatorCache {
    Matrix b1, g1, g1d, b2;
    std::vector<double> logits;
    std::vector<double> probs;
};

/// dropout_mask: per-entry keep mask already scaled by 1/(1-p_drop);
/// pass nullptr for evaluation mode (deterministic, no dropout).
std::vector<double> discriminate(const DiscriminatorParams& p, const Matrix& f,
                                 const Matrix* dropout_mask);
DiscriminatorCache discriminate_cached(const DiscriminatorParams& p, const Matrix& f,
                                       const Matrix* dropout_mask);

Matrix make_dropout_mask(std::size_t rows, std::size_t cols, double p_drop, std::uint64_t seed);

/// Class centroids of the rows of f_s grouped by label; throws if any
/// class in 0..n-1 has no sample (that is a batching bug upstream).
PrototypeSet compute_prototypes(const Matrix& f_s, const std::vector<int>& y_s, std::size_t n);

/// Per-class bilinear scores f^T S mu_c, then softmax.
InteractionFeature interaction_features(std::span<const double> f, const Matrix& s,
                                        const PrototypeSet& protos);

/// Rows of z are per-class bilinear logits for each sample of f: z = (f S) P^T.
Matrix bilinear_logits(const Matrix& f, const Matrix& s, const PrototypeSet& protos);
/// Row-wise softmax in place.
void softmax_rows(Matrix& z);

/// argmax of the interaction feature; ties break toward the lowest class index.
std::vector<int> predict(const ModelParams& params, const PrototypeSet& protos, const Matrix& x);

}  // namespace prpl
