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

#include "prpl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "prpl/rng.hpp"

namespace prpl {

namespace {

std::vector<double> colsum(const Matrix& m) {
    std::vector<double> s(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) s[j] += row[j];
    }
    return s;
}

struct TensorRef {
    std::vector<double>* v;
    const char* name;
};

struct ConstTensorRef {
    const std::vector<double>* v;
    const char* name;
};

template <class T>
std::vector<ConstTensorRef> tensor_refs(const T& m) {
    return {
        {&m.extractor.l1.W.data, "extractor.l1.W"}, {&m.extractor.l1.b, "extractor.l1.b"},
        {&m.extractor.l2.W.data, "extractor.l2.W"}, {&m.extractor.l2.b, "extractor.l2.b"},
        {&m.extractor.l3.W.data, "extractor.l3.W"}, {&m.extractor.l3.b, "extractor.l3.b"},
        {&m.discriminator.l1.W.data, "discriminator.l1.W"},
        {&m.discriminator.l1.b, "discriminator.l1.b"},
        {&m.discriminator.l2.W.data, "discriminator.l2.W"},
        {&m.discriminator.l2.b, "discriminator.l2.b"},
        {&m.discriminator.l3.W.data, "discriminator.l3.W"},
        {&m.discriminator.l3.b, "discriminator.l3.b"},
        {&m.bilinear.data, "bilinear.S"},
    };
}

template <class T>
std::vector<TensorRef> tensor_refs(T& m) {
    return {
        {&m.extractor.l1.W.data, "extractor.l1.W"}, {&m.extractor.l1.b, "extractor.l1.b"},
        {&m.extractor.l2.W.data, "extractor.l2.W"}, {&m.extractor.l2.b, "extractor.l2.b"},
        {&m.extractor.l3.W.data, "extractor.l3.W"}, {&m.extractor.l3.b, "extractor.l3.b"},
        {&m.discriminator.l1.W.data, "discriminator.l1.W"},
        {&m.discriminator.l1.b, "discriminator.l1.b"},
        {&m.discriminator.l2.W.data, "discriminator.l2.W"},
        {&m.discriminator.l2.b, "discriminator.l2.b"},
        {&m.discriminator.l3.W.data, "discriminator.l3.W"},
        {&m.discriminator.l3.b, "discriminator.l3.b"},
        {&m.bilinear.data, "bilinear.S"},
    };
}

// Tensor indices 0..5 belong to theta_f, 6..11 to theta_d, 12 is S.
constexpr std::size_t kFirstDiscTensor = 6;
constexpr std::size_t kBilinearTensor = 12;

// Fixed one-hot anchors standing in for the class centroids when the
// prototype path is ablated; S then acts as a plain linear classifier head.
PrototypeSet anchor_prototypes(std::size_t n) {
    PrototypeSet ps;
    ps.P = Matrix(n, kFeatureDim);
    for (std::size_t c = 0; c < n; ++c) ps.P.at(c, c) = 1.0;
    return ps;
}

/// Pair BCE summed over ordered pairs (i=j included). Invalid entries are
/// skipped. If dl is non-null, accumulates weight * dLoss/dL into it.
double pair_loss_and_grad(const Matrix& l, const PairLabelMatrix& labels, double weight,
                          Matrix* dl) {
    const std::size_t n = l.rows;
    const std::size_t k = l.cols;
    std::vector<double> nu(n);
    for (std::size_t i = 0; i < n; ++i) nu[i] = norm2(l.row(i));
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* li = l.data.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const PairLabel pl = labels.at(i, j);
            if (pl == PairLabel::Invalid) continue;
            const int r = pl == PairLabel::Paired ? 1 : 0;
            const double* lj = l.data.data() + j * k;
            double g = 0.0;
            for (std::size_t c = 0; c < k; ++c) g += li[c] * lj[c];
            g /= nu[i] * nu[j];
            const double gc = std::clamp(g, kClampEps, 1.0 - kClampEps);
            loss += -r * std::log(gc) - (1 - r) * std::log(1.0 - gc);
            if (dl == nullptr) continue;
            // dL/dg evaluated at the clamped point but passed through even
            // when g saturates; zeroing it there would silence the loss
            // exactly where an Unpaired pair most needs pushing apart.
            const double w = weight * (-r / gc + (1 - r) / (1.0 - gc));
            double* di = dl->data.data() + i * k;
            double* dj = dl->data.data() + j * k;
            const double inv_ij = 1.0 / (nu[i] * nu[j]);
            const double gi = g / (nu[i] * nu[i]);
            const double gj = g / (nu[j] * nu[j]);
            for (std::size_t c = 0; c < k; ++c) {
                di[c] += w * (lj[c] * inv_ij - gi * li[c]);
                dj[c] += w * (li[c] * inv_ij - gj * lj[c]);
            }
        }
    }
    return loss;
}

/// d(softmax)/d(logits) applied row-wise: dz = l .* (dl - (dl . l)).
Matrix softmax_backward(const Matrix& l, const Matrix& dl) {
    Matrix dz(l.rows, l.cols);
    for (std::size_t i = 0; i < l.rows; ++i) {
        const double* li = l.data.data() + i * l.cols;
        const double* di = dl.data.data() + i * l.cols;
        double inner = 0.0;
        for (std::size_t c = 0; c < l.cols; ++c) inner += li[c] * di[c];
        double* out = dz.data.data() + i * l.cols;
        for (std::size_t c = 0; c < l.cols; ++c) out[c] = li[c] * (di[c] - inner);
    }
    return dz;
}

void extractor_backward(const FeatureExtractorParams& p, const ExtractorCache& c, const Matrix& x,
                        const Matrix& df, FeatureExtractorParams& g) {
    matmul_tn_acc(c.h2, df, g.l3.W);
    auto b3 = colsum(df);
    for (std::size_t j = 0; j < b3.size(); ++j) g.l3.b[j] += b3[j];

    Matrix da2 = matmul_nt(df, p.l3.W);
    for (std::size_t i = 0; i < da2.data.size(); ++i)
        if (c.a2.data[i] <= 0.0) da2.data[i] = 0.0;
    matmul_tn_acc(c.h1, da2, g.l2.W);
    auto b2 = colsum(da2);
    for (std::size_t j = 0; j < b2.size(); ++j) g.l2.b[j] += b2[j];

    Matrix da1 = matmul_nt(da2, p.l2.W);
    for (std::size_t i = 0; i < da1.data.size(); ++i)
        if (c.a1.data[i] <= 0.0) da1.data[i] = 0.0;
    // l1 sees the standardized input when a standardizer is set.
    matmul_tn_acc(c.xn.data.empty() ? x : c.xn, da1, g.l1.W);
    auto b1 = colsum(da1);
    for (std::size_t j = 0; j < b1.size(); ++j) g.l1.b[j] += b1[j];
}

/// du holds dLoss/dlogit per sample. Accumulates theta_d gradients into g
/// and returns dLoss/dF.
Matrix discriminator_backward(const DiscriminatorParams& p, const DiscriminatorCache& c,
                              const Matrix& f, const Matrix* mask,
                              const std::vector<double>& du, DiscriminatorParams& g) {
    const std::size_t n = f.rows;
    // layer 3 (64 -> 1)
    for (std::size_t i = 0; i < n; ++i) {
        const double* b2row = c.b2.data.data() + i * kFeatureDim;
        for (std::size_t k = 0; k < kFeatureDim; ++k) g.l3.W.data[k] += b2row[k] * du[i];
        g.l3.b[0] += du[i];
    }
    Matrix db2(n, kFeatureDim);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = db2.data.data() + i * kFeatureDim;
        for (std::size_t k = 0; k < kFeatureDim; ++k) row[k] = du[i] * p.l3.W.data[k];
    }
    // layer 2 (linear)
    matmul_tn_acc(c.g1d, db2, g.l2.W);
    auto b2sum = colsum(db2);
    for (std::size_t j = 0; j < b2sum.size(); ++j) g.l2.b[j] += b2sum[j];
    Matrix dg1d = matmul_nt(db2, p.l2.W);
    // dropout and rectifier
    if (mask != nullptr)
        for (std::size_t i = 0; i < dg1d.data.size(); ++i) dg1d.data[i] *= mask->data[i];
    for (std::size_t i = 0; i < dg1d.data.size(); ++i)
        if (c.b1.data[i] <= 0.0) dg1d.data[i] = 0.0;
    // layer 1
    matmul_tn_acc(f, dg1d, g.l1.W);
    auto b1sum = colsum(dg1d);
    for (std::size_t j = 0; j < b1sum.size(); ++j) g.l1.b[j] += b1sum[j];
    return matmul_nt(dg1d, p.l1.W);
}

double disc_loss_value(const std::vector<double>& ds, const std::vector<double>& dt) {
    return discriminator_loss(ds, dt);
}

/// Pair part of the objective (source pair loss + regularizer + gamma *
/// target pair loss) from fixed features. Used forward-only by finite
/// differences over S, and shared by evaluate_objective.
double pair_objective_from_features(const Matrix& fs, const Matrix& ft, const Matrix& s,
                                    const std::vector<int>& ys, const PairLabelMatrix& src_labels,
                                    const PairLabelMatrix& tgt_labels, const TrainConfig& cfg,
                                    const StepSchedules& sch, double* src_out, double* tgt_out) {
    const std::size_t classes =
        static_cast<std::size_t>(*std::max_element(ys.begin(), ys.end())) + 1;
    PrototypeSet protos =
        cfg.no_prototypes ? anchor_prototypes(classes) : compute_prototypes(fs, ys, classes);

    double src_loss = 0.0, tgt_loss = 0.0;
    if (!cfg.no_source_pairwise) {
        Matrix zs = bilinear_logits(fs, s, protos);
        softmax_rows(zs);
        src_loss = pair_loss_and_grad(zs, src_labels, 1.0, nullptr);
        if (cfg.beta > 0.0 && !cfg.no_prototypes)
            src_loss += cfg.beta * prototype_regularizer(protos, cfg.reg_form);
    }
    if (!cfg.no_target_pairwise) {
        Matrix zt = bilinear_logits(ft, s, protos);
        softmax_rows(zt);
        tgt_loss = pair_loss_and_grad(zt, tgt_labels, 1.0, nullptr);
    }
    if (src_out) *src_out = src_loss;
    if (tgt_out) *tgt_out = tgt_loss;
    return src_loss + sch.gamma * tgt_loss;
}

double disc_objective_from_features(const DiscriminatorParams& disc, const Matrix& fs,
                                    const Matrix& ft, const Matrix* mask_s, const Matrix* mask_t) {
    const auto ds = discriminate(disc, fs, mask_s);
    const auto dt = discriminate(disc, ft, mask_t);
    return disc_loss_value(ds, dt);
}

}  // namespace

Gradients zero_gradients(const ModelParams& params) {
    Gradients g;
    auto zero_layer = [](const AffineLayer& l) {
        AffineLayer out;
        out.W = Matrix(l.W.rows, l.W.cols);
        out.b.assign(l.b.size(), 0.0);
        return out;
    };
    g.extractor.l1 = zero_layer(params.extractor.l1);
    g.extractor.l2 = zero_layer(params.extractor.l2);
    g.extractor.l3 = zero_layer(params.extractor.l3);
    g.discriminator.l1 = zero_layer(params.discriminator.l1);
    g.discriminator.l2 = zero_layer(params.discriminator.l2);
    g.discriminator.l3 = zero_layer(params.discriminator.l3);
    g.bilinear = Matrix(params.bilinear.rows, params.bilinear.cols);
    return g;
}

BackwardResult backward(const ModelParams& params, const TrainConfig& cfg, const Matrix& xs,
                        const std::vector<int>& ys, const Matrix& xt,
                        const PairLabelMatrix& source_labels,
                        const PairLabelMatrix& target_labels, const StepSchedules& sch,
                        const Matrix* dropout_mask_s, const Matrix* dropout_mask_t) {
    BackwardResult res;
    res.grads = zero_gradients(params);

    const ExtractorCache cs = extract_features_cached(params.extractor, xs);
    const ExtractorCache ct = extract_features_cached(params.extractor, xt);
    const std::size_t ns = xs.rows, nt = xt.rows;
    const std::size_t classes = params.n_classes;

    std::vector<std::size_t> class_counts(classes, 0);
    for (int y : ys) class_counts[static_cast<std::size_t>(y)]++;

    PrototypeSet protos = cfg.no_prototypes ? anchor_prototypes(classes)
                                            : compute_prototypes(cs.f, ys, classes);

    Matrix dfs(ns, kFeatureDim);
    Matrix dft(nt, kFeatureDim);
    Matrix dp(classes, kFeatureDim);

    const bool want_source = !cfg.no_source_pairwise;
    const bool want_target = !cfg.no_target_pairwise;

    // ---- pairwise losses (and their gradients through l -> z -> {T, P})
    if (want_source) {
        Matrix ts = matmul(cs.f, params.bilinear);
        Matrix zs = matmul_nt(ts, protos.P);
        softmax_rows(zs);  // zs now holds l rows
        Matrix dls(ns, classes);
        res.source_pair_loss = pair_loss_and_grad(zs, source_labels, 1.0, &dls);
        Matrix dzs = softmax_backward(zs, dls);
        Matrix dts = matmul(dzs, protos.P);
        matmul_tn_acc(dzs, ts, dp);
        matmul_nt_acc(dts, params.bilinear, dfs);
        matmul_tn_acc(cs.f, dts, res.grads.bilinear);

        if (cfg.beta > 0.0 && !cfg.no_prototypes) {
            const double r = prototype_regularizer(protos, cfg.reg_form);
            res.source_pair_loss += cfg.beta * r;
            if (r > 0.0) {
                if (cfg.reg_form == RegularizerForm::Printed) {
                    Matrix m = matmul_tn(protos.P, protos.P);  // d x d
                    for (std::size_t i = 0; i < m.rows; ++i) m.at(i, i) -= 1.0;
                    Matrix pm = matmul(protos.P, m);
                    const double scale = 2.0 * cfg.beta / r;
                    for (std::size_t i = 0; i < dp.data.size(); ++i)
                        dp.data[i] += scale * pm.data[i];
                } else {
                    Matrix m = matmul_nt(protos.P, protos.P);  // n x n
                    for (std::size_t i = 0; i < m.rows; ++i) m.at(i, i) -= 1.0;
                    Matrix mp = matmul(m, protos.P);
                    const double scale = 2.0 * cfg.beta / r;
                    for (std::size_t i = 0; i < dp.data.size(); ++i)
                        dp.data[i] += scale * mp.data[i];
                }
            }
        }
    }
    if (want_target) {
        Matrix tt = matmul(ct.f, params.bilinear);
        Matrix zt = matmul_nt(tt, protos.P);
        softmax_rows(zt);
        Matrix dlt(nt, classes);
        res.target_pair_loss = pair_loss_and_grad(zt, target_labels, sch.gamma, &dlt);
        Matrix dzt = softmax_backward(zt, dlt);
        Matrix dtt = matmul(dzt, protos.P);
        matmul_tn_acc(dzt, tt, dp);
        matmul_nt_acc(dtt, params.bilinear, dft);
        matmul_tn_acc(ct.f, dtt, res.grads.bilinear);
    }

    // prototypes -> source features (mean over each class's members)
    if (!cfg.no_prototypes && (want_source || want_target)) {
        for (std::size_t i = 0; i < ns; ++i) {
            const auto c = static_cast<std::size_t>(ys[i]);
            const double inv = 1.0 / static_cast<double>(class_counts[c]);
            double* out = dfs.data.data() + i * kFeatureDim;
            const double* src = dp.data.data() + c * kFeatureDim;
            for (std::size_t k = 0; k < kFeatureDim; ++k) out[k] += inv * src[k];
        }
    }

    // ---- discriminator; the -lambda factor into the features is the
    // gradient reversal, theta_d itself descends the plain loss.
    if (!cfg.no_discriminator) {
        const DiscriminatorCache dcs =
            discriminate_cached(params.discriminator, cs.f, dropout_mask_s);
        const DiscriminatorCache dct =
            discriminate_cached(params.discriminator, ct.f, dropout_mask_t);
        res.disc_loss = disc_loss_value(dcs.probs, dct.probs);

        std::vector<double> du_s(ns), du_t(nt);
        for (std::size_t i = 0; i < ns; ++i) du_s[i] = dcs.probs[i] - 1.0;
        for (std::size_t i = 0; i < nt; ++i) du_t[i] = dct.probs[i];
        Matrix dfs_disc = discriminator_backward(params.discriminator, dcs, cs.f, dropout_mask_s,
                                                 du_s, res.grads.discriminator);
        Matrix dft_disc = discriminator_backward(params.discriminator, dct, ct.f, dropout_mask_t,
                                                 du_t, res.grads.discriminator);
        for (std::size_t i = 0; i < dfs.data.size(); ++i)
            dfs.data[i] -= sch.lambda * dfs_disc.data[i];
        for (std::size_t i = 0; i < dft.data.size(); ++i)
            dft.data[i] -= sch.lambda * dft_disc.data[i];
    }

    extractor_backward(params.extractor, cs, xs, dfs, res.grads.extractor);
    extractor_backward(params.extractor, ct, xt, dft, res.grads.extractor);

    res.objective = total_objective(want_source ? res.source_pair_loss : 0.0,
                                    want_target ? res.target_pair_loss : 0.0, res.disc_loss,
                                    cfg.no_discriminator ? 0.0 : sch.lambda, sch.gamma);

    for (const auto& t : tensor_refs(res.grads))
        if (!all_finite(*t.v))
            throw std::runtime_error(std::string("backward: non-finite gradient in ") + t.name);
    return res;
}

BackwardResult evaluate_objective(const ModelParams& params, const TrainConfig& cfg,
                                  const Matrix& xs, const std::vector<int>& ys, const Matrix& xt,
                                  const PairLabelMatrix& source_labels,
                                  const PairLabelMatrix& target_labels, const StepSchedules& sch,
                                  const Matrix* dropout_mask_s, const Matrix* dropout_mask_t) {
    BackwardResult res;
    const Matrix fs = extract_features(params.extractor, xs);
    const Matrix ft = extract_features(params.extractor, xt);
    pair_objective_from_features(fs, ft, params.bilinear, ys, source_labels, target_labels, cfg,
                                 sch, &res.source_pair_loss, &res.target_pair_loss);
    if (!cfg.no_discriminator)
        res.disc_loss = disc_objective_from_features(params.discriminator, fs, ft, dropout_mask_s,
                                                     dropout_mask_t);
    res.objective = res.source_pair_loss + sch.gamma * res.target_pair_loss -
                    (cfg.no_discriminator ? 0.0 : sch.lambda) * res.disc_loss;
    return res;
}

void rmsprop_step(ModelParams& params, const Gradients& grads, OptimizerState& state, double lr,
                  double l2_weight) {
    auto p_refs = tensor_refs(params);
    auto g_refs = tensor_refs(grads);
    if (state.acc.empty()) {
        state.acc.resize(p_refs.size());
        for (std::size_t t = 0; t < p_refs.size(); ++t)
            state.acc[t].assign(p_refs[t].v->size(), 0.0);
    }
    for (std::size_t t = 0; t < p_refs.size(); ++t) {
        auto& p = *p_refs[t].v;
        const auto& g = *g_refs[t].v;
        auto& a = state.acc[t];
        if (p.size() != g.size() || p.size() != a.size())
            throw std::invalid_argument("rmsprop_step: shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            a[i] = state.rho * a[i] + (1.0 - state.rho) * g[i] * g[i];
            p[i] -= lr * g[i] / std::sqrt(a[i] + state.eps);
            p[i] -= lr * l2_weight * p[i];
        }
    }
}

BatchPlan make_batches(const Dataset& d_s, std::size_t n_target, std::size_t batch_size,
                       std::uint64_t seed) {
    const std::size_t ns = d_s.size();
    if (ns == 0 || n_target == 0) throw std::invalid_argument("make_batches: empty domain");
    const auto classes = static_cast<std::size_t>(d_s.n_classes());
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < ns; ++i)
        by_class[static_cast<std::size_t>(d_s.labels[i])].push_back(i);
    for (std::size_t c = 0; c < classes; ++c)
        if (by_class[c].empty())
            throw std::runtime_error("make_batches: class " + std::to_string(c) +
                                     " has no source samples");
    if (batch_size < classes)
        throw std::invalid_argument("make_batches: batch_size smaller than class count");

    std::mt19937_64 rng(seed);
    const std::size_t steps =
        std::max((ns + batch_size - 1) / batch_size, (n_target + batch_size - 1) / batch_size);

    // Per-class quotas: proportional with largest-remainder rounding, then
    // bumped so every class contributes at least one sample per batch.
    std::vector<std::size_t> quota(classes, 0);
    {
        std::vector<double> frac(classes);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double exact =
                static_cast<double>(batch_size * by_class[c].size()) / static_cast<double>(ns);
            quota[c] = static_cast<std::size_t>(exact);
            frac[c] = exact - static_cast<double>(quota[c]);
            assigned += quota[c];
        }
        std::vector<std::size_t> order(classes);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
        for (std::size_t k = 0; assigned < batch_size; ++k, ++assigned) quota[order[k % classes]]++;
        for (std::size_t c = 0; c < classes; ++c) {
            while (quota[c] == 0) {
                auto big = std::max_element(quota.begin(), quota.end()) - quota.begin();
                quota[static_cast<std::size_t>(big)]--;
                quota[c]++;
            }
        }
    }

    // Shuffled per-class queues that reshuffle when they wrap.
    std::vector<std::vector<std::size_t>> queues = by_class;
    std::vector<std::size_t> cursor(classes, 0);
    for (auto& q : queues) std::shuffle(q.begin(), q.end(), rng);
    auto draw = [&](std::size_t c) {
        if (cursor[c] == queues[c].size()) {
            std::shuffle(queues[c].begin(), queues[c].end(), rng);
            cursor[c] = 0;
        }
        return queues[c][cursor[c]++];
    };

    std::vector<std::size_t> tq(n_target);
    std::iota(tq.begin(), tq.end(), 0);
    std::shuffle(tq.begin(), tq.end(), rng);
    std::size_t tcursor = 0;
    auto draw_target = [&]() {
        if (tcursor == tq.size()) {
            std::shuffle(tq.begin(), tq.end(), rng);
            tcursor = 0;
        }
        return tq[tcursor++];
    };

    BatchPlan plan;
    plan.source.resize(steps);
    plan.target.resize(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        auto& batch = plan.source[s];
        batch.reserve(batch_size);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t k = 0; k < quota[c]; ++k) batch.push_back(draw(c));
        std::shuffle(batch.begin(), batch.end(), rng);
        auto& tb = plan.target[s];
        tb.reserve(batch_size);
        for (std::size_t k = 0; k < batch_size; ++k) tb.push_back(draw_target());
    }
    return plan;
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy(m.row(idx[k]).begin(), m.row(idx[k]).end(), out.row(k).begin());
    return out;
}

ThresholdState thresholds_for_epoch(const TrainConfig& cfg, const ThresholdState& recurrent,
                                    std::size_t epoch) {
    switch (cfg.pseudo_mode) {
        case PseudoMode::Fixed:
            return {cfg.tau_h0, cfg.tau_l0, epoch};
        case PseudoMode::Linear: {
            const double half_gap = (cfg.tau_h0 - cfg.tau_l0) / 2.0;
            const double frac =
                static_cast<double>(epoch) / static_cast<double>(cfg.maxepoch);
            return {cfg.tau_h0 - half_gap * frac, cfg.tau_l0 + half_gap * frac, epoch};
        }
        case PseudoMode::Nonlinear:
            return recurrent;
    }
    return recurrent;
}

std::vector<InteractionFeature> interaction_rows(const Matrix& f, const Matrix& s,
                                                 const PrototypeSet& protos) {
    Matrix z = bilinear_logits(f, s, protos);
    softmax_rows(z);
    std::vector<InteractionFeature> out(z.rows);
    for (std::size_t i = 0; i < z.rows; ++i) {
        out[i].l.assign(z.row(i).begin(), z.row(i).end());
        const double nrm = norm2(out[i].l);
        out[i].l_norm = out[i].l;
        for (double& v : out[i].l_norm) v /= nrm;
    }
    return out;
}

}  // namespace

FitResult fit(const TrainConfig& config, const Dataset& d_s, const Matrix& x_t,
              const EvalCallback& target_eval) {
    config.validate();
    d_s.validate();
    if (d_s.dim() != x_t.cols)
        throw std::invalid_argument("fit: source and target feature widths differ");
    const auto classes = static_cast<std::size_t>(d_s.n_classes());
    if (classes < 2) throw std::invalid_argument("fit: need at least two classes");

    FitResult result;
    result.params = init_params(stream_seed(config.seed, "init"), d_s.dim(), classes);

    // Standardize inputs with source statistics (the only labeled side);
    // the identical transform is applied to the target, so any domain shift
    // is preserved in standardized units while the network sees O(1) inputs.
    {
        const std::size_t d = d_s.dim(), n = d_s.features.rows;
        std::vector<double> mu(d, 0.0), sd(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = d_s.features.row(i);
            for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
        }
        for (double& v : mu) v /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = d_s.features.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                const double c = row[j] - mu[j];
                sd[j] += c * c;
            }
        }
        for (double& v : sd) v = std::sqrt(v / static_cast<double>(n));
        for (double& v : sd)
            if (v < 1e-12) v = 1.0;  // constant column, leave it centered only
        result.params.extractor.in_shift = std::move(mu);
        result.params.extractor.in_scale = std::move(sd);
    }

    OptimizerState opt;
    opt.rho = config.rmsprop_rho;
    opt.eps = config.rmsprop_eps;

    ThresholdState recurrent{config.tau_h0, config.tau_l0, 0};

    for (std::size_t epoch = 0; epoch < config.maxepoch; ++epoch) {
        const double progress =
            static_cast<double>(epoch) / static_cast<double>(config.maxepoch);
        const double lambda =
            config.no_discriminator ? 0.0 : lambda_schedule(progress, config.lambda_mode);
        const double gamma = config.no_target_pairwise
                                 ? 0.0
                                 : (config.gamma_mode == GammaMode::Fixed
                                        ? config.delta
                                        : gamma_schedule(epoch, config.maxepoch, config.delta));
        const ThresholdState th = thresholds_for_epoch(config, recurrent, epoch);

        const BatchPlan plan =
            make_batches(d_s, x_t.rows, config.batch_size, stream_seed(config.seed, "batch", epoch));

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lambda = lambda;
        rec.gamma = gamma;
        rec.tau_h = th.tau_h;
        rec.tau_l = th.tau_l;

        for (std::size_t step = 0; step < plan.steps(); ++step) {
            const Matrix xs = gather_rows(d_s.features, plan.source[step]);
            std::vector<int> ys(plan.source[step].size());
            for (std::size_t k = 0; k < ys.size(); ++k) ys[k] = d_s.labels[plan.source[step][k]];
            const Matrix xt = gather_rows(x_t, plan.target[step]);

            const PairLabelMatrix src_labels = source_pair_labels(ys);

            // Frozen pseudo labels for the step: forward pass with the
            // current parameters, thresholds applied to the similarities.
            PairLabelMatrix tgt_labels(xt.rows);
            {
                const Matrix fs = extract_features(result.params.extractor, xs);
                const Matrix ft = extract_features(result.params.extractor, xt);
                PrototypeSet protos = config.no_prototypes
                                          ? PrototypeSet{}
                                          : compute_prototypes(fs, ys, classes);
                if (config.no_prototypes) {
                    protos.P = Matrix(classes, kFeatureDim);
                    for (std::size_t c = 0; c < classes; ++c) protos.P.at(c, c) = 1.0;
                }
                const auto lt = interaction_rows(ft, result.params.bilinear, protos);
                tgt_labels = target_pseudo_labels(lt, th, config.sim_form);
            }
            if (!config.no_target_pairwise) {
                std::size_t valid = 0;
                for (PairLabel pl : tgt_labels.data)
                    if (pl != PairLabel::Invalid) ++valid;
                rec.valid_pair_fraction +=
                    static_cast<double>(valid) / static_cast<double>(tgt_labels.data.size());
            }

            const std::uint64_t mask_seed =
                stream_seed(config.seed, "dropout", epoch * plan.steps() + step);
            Matrix mask_s, mask_t;
            const Matrix* ms = nullptr;
            const Matrix* mt = nullptr;
            if (!config.no_discriminator && config.p_drop > 0.0) {
                mask_s = make_dropout_mask(xs.rows, kFeatureDim, config.p_drop, mix64(mask_seed));
                mask_t =
                    make_dropout_mask(xt.rows, kFeatureDim, config.p_drop, mix64(mask_seed ^ 1));
                ms = &mask_s;
                mt = &mask_t;
            }

            StepSchedules sch{lambda, gamma, config.beta};
            BackwardResult br;
            try {
                br = backward(result.params, config, xs, ys, xt, src_labels, tgt_labels, sch, ms,
                              mt);
            } catch (const std::exception& e) {
                throw std::runtime_error("fit: epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(step) + ": " + e.what());
            }
            rmsprop_step(result.params, br.grads, opt, config.lr, config.l2_weight);

            rec.source_pair_loss += br.source_pair_loss;
            rec.target_pair_loss += br.target_pair_loss;
            rec.disc_loss += br.disc_loss;
            rec.objective += br.objective;
        }

        const double inv_steps = 1.0 / static_cast<double>(plan.steps());
        rec.source_pair_loss *= inv_steps;
        rec.target_pair_loss *= inv_steps;
        rec.disc_loss *= inv_steps;
        rec.objective *= inv_steps;
        rec.valid_pair_fraction *= inv_steps;

        {
            const Matrix fs_full = extract_features(result.params.extractor, d_s.features);
            const PrototypeSet protos_full = compute_prototypes(fs_full, d_s.labels, classes);
            const auto preds = predict(result.params, protos_full, d_s.features);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < preds.size(); ++i)
                if (preds[i] == d_s.labels[i]) ++hits;
            rec.source_accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
            if (target_eval) rec.target_accuracy = target_eval(result.params, protos_full);
        }
        result.history.epochs.push_back(rec);

        if (config.pseudo_mode == PseudoMode::Nonlinear)
            recurrent = update_thresholds(recurrent, config.maxepoch);
    }

    const Matrix fs_full = extract_features(result.params.extractor, d_s.features);
    result.prototypes = compute_prototypes(fs_full, d_s.labels, classes);
    return result;
}

GradCheckReport gradient_check(std::uint64_t seed, const GradCheckDims& dims, double tolerance) {
    const std::size_t n = dims.n_per_domain;
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i)
        ys[i] = static_cast<int>(i % dims.n_classes);  // every class present

    TrainConfig cfg;
    cfg.beta = 0.05;
    cfg.p_drop = 0.5;
    StepSchedules sch{0.7, 1.3, cfg.beta};

    Matrix xs(n, dims.d_in), xt(n, dims.d_in);
    ModelParams params;
    Matrix mask_s, mask_t;

    PairLabelMatrix src_labels(n);
    PairLabelMatrix tgt_labels(n);

    // Finite differences break down at rectifier kinks and wherever the
    // pair BCE saturates: an Unpaired pair near g=1 (or a Paired pair near
    // g=0) has curvature growing like the inverse cube of the margin, which
    // swamps a second-order difference. Source labels therefore follow the
    // argmax of the initial interaction features, making cross-class pairs
    // exactly the well-separated ones, and instances violating the margins
    // are redrawn. Deterministic per seed.
    constexpr double kKinkMargin = 1e-4;
    constexpr double kSatMargin = 1e-3;
    bool smooth = false;
    for (std::uint64_t attempt = 0; attempt < 256 && !smooth; ++attempt) {
        auto rng = make_rng(seed, "gradcheck", attempt);
        std::normal_distribution<double> unit(0.0, 1.0);
        for (double& v : xs.data) v = unit(rng);
        for (double& v : xt.data) v = unit(rng);
        params = init_params(stream_seed(seed, "gc-init", attempt), dims.d_in, dims.n_classes);
        // Fresh uniform init keeps the bilinear logits tiny, which parks
        // every interaction feature near the simplex center and every
        // pairwise cosine near 1. Inflating the output layer spreads the
        // logits (quadratically, via both f and the prototypes) so the
        // saturation margins below are actually attainable.
        for (double& v : params.extractor.l3.W.data) v *= 3.0;
        for (double& v : params.extractor.l3.b) v *= 3.0;
        mask_s = make_dropout_mask(n, kFeatureDim, cfg.p_drop, stream_seed(seed, "gc-ms", attempt));
        mask_t = make_dropout_mask(n, kFeatureDim, cfg.p_drop, stream_seed(seed, "gc-mt", attempt));

        const ExtractorCache cs = extract_features_cached(params.extractor, xs);
        const ExtractorCache ct = extract_features_cached(params.extractor, xt);
        const DiscriminatorCache ds = discriminate_cached(params.discriminator, cs.f, &mask_s);
        const DiscriminatorCache dt = discriminate_cached(params.discriminator, ct.f, &mask_t);
        double kink = std::numeric_limits<double>::infinity();
        for (const Matrix* m : {&cs.a1, &cs.a2, &ct.a1, &ct.a2, &ds.b1, &dt.b1})
            for (double v : m->data) kink = std::min(kink, std::abs(v));

        // Bootstrap labels, then relabel by interaction-feature argmax so
        // that same-looking samples share a class.
        for (std::size_t i = 0; i < n; ++i) ys[i] = static_cast<int>(i % dims.n_classes);
        {
            const PrototypeSet boot = compute_prototypes(cs.f, ys, dims.n_classes);
            const auto l0 = interaction_rows(cs.f, params.bilinear, boot);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& v = l0[i].l;
                ys[i] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
            }
        }
        std::vector<std::size_t> per_class(dims.n_classes, 0);
        for (int y : ys) per_class[static_cast<std::size_t>(y)]++;
        if (std::find(per_class.begin(), per_class.end(), std::size_t{0}) != per_class.end())
            continue;  // a class died out; redraw
        src_labels = source_pair_labels(ys);

        const PrototypeSet protos = compute_prototypes(cs.f, ys, dims.n_classes);
        const auto ls = interaction_rows(cs.f, params.bilinear, protos);
        const auto lt = interaction_rows(ct.f, params.bilinear, protos);

        // Pseudo labels with thresholds at interior quantiles of the
        // observed similarities, so Paired, Unpaired, and Invalid all occur.
        {
            std::vector<double> sims;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j)
                    sims.push_back(pairwise_similarity(lt[i], lt[j]));
            std::sort(sims.begin(), sims.end());
            ThresholdState th;
            th.tau_l = sims[sims.size() / 4];
            th.tau_h = std::max(th.tau_l, sims[3 * sims.size() / 4]);
            tgt_labels = target_pseudo_labels(lt, th, cfg.sim_form);
        }

        double sat = std::numeric_limits<double>::infinity();
        auto scan_pairs = [&](const std::vector<InteractionFeature>& lv,
                              const PairLabelMatrix& lab) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) {
                    const PairLabel pl = lab.at(i, j);
                    if (pl == PairLabel::Invalid) continue;
                    const double g = pairwise_similarity(lv[i], lv[j]);
                    // Steep side of the BCE for this label, plus the clamp
                    // zone where the analytic pass-through gradient and the
                    // flat finite difference legitimately disagree.
                    sat = std::min(sat, pl == PairLabel::Unpaired ? 1.0 - g : g);
                    sat = std::min(sat, kSatMargin * 1e3 * (1.0 - g - kClampEps));
                    sat = std::min(sat, kSatMargin * 1e3 * (g - kClampEps));
                }
        };
        scan_pairs(ls, src_labels);
        scan_pairs(lt, tgt_labels);
        smooth = kink > kKinkMargin && sat > kSatMargin;
    }
    if (!smooth)
        throw std::runtime_error("gradient_check: no numerically smooth instance found");

    const BackwardResult analytic =
        backward(params, cfg, xs, ys, xt, src_labels, tgt_labels, sch, &mask_s, &mask_t);

    // Features are unchanged when only S or theta_d moves, so those groups
    // difference a cheaper restriction of the objective.
    const Matrix fs0 = extract_features(params.extractor, xs);
    const Matrix ft0 = extract_features(params.extractor, xt);

    ModelParams probe = params;
    auto p_refs = tensor_refs(probe);
    auto g_refs = tensor_refs(analytic.grads);

    constexpr double h = 1e-6;
    GradCheckReport report;
    for (std::size_t t = 0; t < p_refs.size(); ++t) {
        auto& vec = *p_refs[t].v;
        const auto& gvec = *g_refs[t].v;
        for (std::size_t i = 0; i < vec.size(); ++i) {
            const double saved = vec[i];
            double f_plus, f_minus;
            if (t >= kFirstDiscTensor && t < kBilinearTensor) {
                vec[i] = saved + h;
                f_plus = disc_objective_from_features(probe.discriminator, fs0, ft0, &mask_s,
                                                      &mask_t);
                vec[i] = saved - h;
                f_minus = disc_objective_from_features(probe.discriminator, fs0, ft0, &mask_s,
                                                       &mask_t);
            } else if (t == kBilinearTensor) {
                vec[i] = saved + h;
                f_plus = pair_objective_from_features(fs0, ft0, probe.bilinear, ys, src_labels,
                                                      tgt_labels, cfg, sch, nullptr, nullptr);
                vec[i] = saved - h;
                f_minus = pair_objective_from_features(fs0, ft0, probe.bilinear, ys, src_labels,
                                                       tgt_labels, cfg, sch, nullptr, nullptr);
            } else {
                vec[i] = saved + h;
                f_plus = evaluate_objective(probe, cfg, xs, ys, xt, src_labels, tgt_labels, sch,
                                            &mask_s, &mask_t)
                             .objective;
                vec[i] = saved - h;
                f_minus = evaluate_objective(probe, cfg, xs, ys, xt, src_labels, tgt_labels, sch,
                                             &mask_s, &mask_t)
                              .objective;
            }
            vec[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double a = gvec[i];
            const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            report.max_rel_error = std::max(report.max_rel_error, rel);
            report.params_checked++;
        }
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

}  // namespace prpl
