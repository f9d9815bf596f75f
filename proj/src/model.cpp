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

#include "prpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prpl/rng.hpp"

namespace prpl {

namespace {

AffineLayer init_layer(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    AffineLayer layer;
    layer.W = Matrix(fan_in, fan_out);
    for (double& w : layer.W.data) w = dist(rng);
    layer.b.resize(fan_out);
    for (double& b : layer.b) b = dist(rng);
    return layer;
}

void relu_inplace(Matrix& m) {
    for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

Matrix affine(const Matrix& x, const AffineLayer& layer) {
    Matrix out = matmul(x, layer.W);
    add_row_vector(out, layer.b);
    return out;
}

}  // namespace

ModelParams init_params(std::uint64_t seed, std::size_t d_in, std::size_t n_classes) {
    if (d_in < 1 || n_classes < 2)
        throw std::invalid_argument("init_params: need d_in >= 1 and n_classes >= 2");
    auto rng = make_rng(seed, "init");
    ModelParams p;
    p.d_in = d_in;
    p.n_classes = n_classes;
    p.extractor.l1 = init_layer(d_in, kFeatureDim, rng);
    p.extractor.l2 = init_layer(kFeatureDim, kFeatureDim, rng);
    p.extractor.l3 = init_layer(kFeatureDim, kFeatureDim, rng);
    p.discriminator.l1 = init_layer(kFeatureDim, kFeatureDim, rng);
    p.discriminator.l2 = init_layer(kFeatureDim, kFeatureDim, rng);
    p.discriminator.l3 = init_layer(kFeatureDim, 1, rng);
    // The bilinear metric starts at the identity, not random. The pairwise
    // losses are invariant to permuting the prototype coordinates, so a
    // random S breaks that symmetry arbitrarily and can settle into a basin
    // where argmax(l) is a fixed permutation of the true class; starting
    // from plain dot-product similarity keeps the own-class logit dominant.
    p.bilinear = Matrix(kFeatureDim, kFeatureDim);
    for (std::size_t k = 0; k < kFeatureDim; ++k) p.bilinear.at(k, k) = 1.0;
    return p;
}

ExtractorCache extract_features_cached(const FeatureExtractorParams& p, const Matrix& x) {
    if (x.cols != p.input_dim())
        throw std::invalid_argument("extract_features: input width does not match d_in");
    ExtractorCache c;
    const Matrix* in = &x;
    if (!p.in_shift.empty()) {
        if (p.in_shift.size() != x.cols || p.in_scale.size() != x.cols)
            throw std::invalid_argument("extract_features: standardizer width mismatch");
        c.xn = x;
        for (std::size_t i = 0; i < c.xn.rows; ++i) {
            auto row = c.xn.row(i);
            for (std::size_t j = 0; j < x.cols; ++j)
                row[j] = (row[j] - p.in_shift[j]) / p.in_scale[j];
        }
        in = &c.xn;
    }
    c.a1 = affine(*in, p.l1);
    c.h1 = c.a1;
    relu_inplace(c.h1);
    c.a2 = affine(c.h1, p.l2);
    c.h2 = c.a2;
    relu_inplace(c.h2);
    c.f = affine(c.h2, p.l3);
    return c;
}

Matrix extract_features(const FeatureExtractorParams& p, const Matrix& x) {
    return extract_features_cached(p, x).f;
}

DiscriminatorCache discriminate_cached(const DiscriminatorParams& p, const Matrix& f,
                                       const Matrix* dropout_mask) {
    if (f.cols != kFeatureDim)
        throw std::invalid_argument("discriminate: feature width mismatch");
    DiscriminatorCache c;
    c.b1 = affine(f, p.l1);
    c.g1 = c.b1;
    relu_inplace(c.g1);
    if (dropout_mask != nullptr) {
        if (!dropout_mask->same_shape(c.g1))
            throw std::invalid_argument("discriminate: dropout mask shape mismatch");
        c.g1d = c.g1;
        for (std::size_t i = 0; i < c.g1d.data.size(); ++i)
            c.g1d.data[i] *= dropout_mask->data[i];
    } else {
        c.g1d = c.g1;
    }
    c.b2 = affine(c.g1d, p.l2);
    Matrix u = affine(c.b2, p.l3);
    c.logits.resize(f.rows);
    c.probs.resize(f.rows);
    for (std::size_t i = 0; i < f.rows; ++i) {
        c.logits[i] = u.at(i, 0);
        c.probs[i] = 1.0 / (1.0 + std::exp(-c.logits[i]));
    }
    return c;
}

std::vector<double> discriminate(const DiscriminatorParams& p, const Matrix& f,
                                 const Matrix* dropout_mask) {
    return discriminate_cached(p, f, dropout_mask).probs;
}

Matrix make_dropout_mask(std::size_t rows, std::size_t cols, double p_drop, std::uint64_t seed) {
    Matrix m(rows, cols);
    if (p_drop <= 0.0) {
        m.fill(1.0);
        return m;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    const double scale = 1.0 / (1.0 - p_drop);
    for (double& v : m.data) v = dist(rng) < p_drop ? 0.0 : scale;
    return m;
}

PrototypeSet compute_prototypes(const Matrix& f_s, const std::vector<int>& y_s, std::size_t n) {
    if (f_s.rows != y_s.size())
        throw std::invalid_argument("compute_prototypes: feature/label count mismatch");
    PrototypeSet ps;
    ps.P = Matrix(n, f_s.cols);
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t i = 0; i < f_s.rows; ++i) {
        const int c = y_s[i];
        if (c < 0 || static_cast<std::size_t>(c) >= n)
            throw std::invalid_argument("compute_prototypes: label out of range");
        counts[c]++;
        auto row = ps.P.row(c);
        auto src = f_s.row(i);
        for (std::size_t j = 0; j < f_s.cols; ++j) row[j] += src[j];
    }
    for (std::size_t c = 0; c < n; ++c) {
        if (counts[c] == 0)
            throw std::runtime_error("compute_prototypes: class " + std::to_string(c) +
                                     " has no sample in the batch");
        auto row = ps.P.row(c);
        for (double& v : row) v /= static_cast<double>(counts[c]);
    }
    return ps;
}

Matrix bilinear_logits(const Matrix& f, const Matrix& s, const PrototypeSet& protos) {
    if (f.cols != s.rows || s.cols != protos.P.cols)
        throw std::invalid_argument("bilinear_logits: dimension mismatch");
    Matrix t = matmul(f, s);
    return matmul_nt(t, protos.P);
}

void softmax_rows(Matrix& z) {
    for (std::size_t i = 0; i < z.rows; ++i) {
        auto row = z.row(i);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
}

InteractionFeature interaction_features(std::span<const double> f, const Matrix& s,
                                        const PrototypeSet& protos) {
    Matrix fm(1, f.size());
    std::copy(f.begin(), f.end(), fm.data.begin());
    Matrix z = bilinear_logits(fm, s, protos);
    softmax_rows(z);
    InteractionFeature out;
    out.l.assign(z.data.begin(), z.data.end());
    const double nrm = norm2(out.l);
    out.l_norm = out.l;
    for (double& v : out.l_norm) v /= nrm;
    return out;
}

std::vector<int> predict(const ModelParams& params, const PrototypeSet& protos, const Matrix& x) {
    Matrix f = extract_features(params.extractor, x);
    Matrix z = bilinear_logits(f, params.bilinear, protos);
    softmax_rows(z);
    std::vector<int> labels(z.rows);
    for (std::size_t i = 0; i < z.rows; ++i) {
        auto row = z.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < z.cols; ++c)
            if (row[c] > row[best]) best = c;
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

}  // namespace prpl
