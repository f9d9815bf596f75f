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

#include "prpl/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "prpl/rng.hpp"

namespace prpl {

namespace {

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<int> sorted_unique(const std::vector<int>& v) {
    std::set<int> s(v.begin(), v.end());
    return {s.begin(), s.end()};
}

}  // namespace

std::vector<Fold> make_folds(const Dataset& d, const ProtocolSpec& spec) {
    d.validate();
    const std::size_t n = d.size();
    const auto subjects = sorted_unique(d.subject_id);
    const auto sessions = sorted_unique(d.session_id);
    std::vector<Fold> folds;

    switch (spec.kind) {
        case ProtocolKind::CrossSubjectCrossSession: {
            if (subjects.size() < 2)
                throw ProtocolError("cross-subject protocol needs at least two subjects");
            for (int subj : subjects) {
                Fold fold;
                fold.name = "subject" + std::to_string(subj);
                for (std::size_t i = 0; i < n; ++i)
                    (d.subject_id[i] == subj ? fold.target : fold.source).push_back(i);
                folds.push_back(std::move(fold));
            }
            break;
        }
        case ProtocolKind::CrossSubjectSingleSession: {
            if (subjects.size() < 2)
                throw ProtocolError("cross-subject protocol needs at least two subjects");
            const int first_session = sessions.front();
            for (int subj : subjects) {
                Fold fold;
                fold.name = "subject" + std::to_string(subj);
                for (std::size_t i = 0; i < n; ++i) {
                    if (d.session_id[i] != first_session) continue;
                    (d.subject_id[i] == subj ? fold.target : fold.source).push_back(i);
                }
                if (fold.target.empty())
                    throw ProtocolError("subject " + std::to_string(subj) +
                                        " has no data in the first session");
                folds.push_back(std::move(fold));
            }
            break;
        }
        case ProtocolKind::WithinSubjectCrossSession: {
            if (sessions.size() < 3)
                throw ProtocolError("within-subject cross-session needs at least three sessions");
            for (int subj : subjects) {
                std::set<int> subj_sessions;
                for (std::size_t i = 0; i < n; ++i)
                    if (d.subject_id[i] == subj) subj_sessions.insert(d.session_id[i]);
                if (subj_sessions.size() < 3)
                    throw ProtocolError("subject " + std::to_string(subj) +
                                        " has fewer than three sessions");
                std::vector<int> ordered(subj_sessions.begin(), subj_sessions.end());
                const int tgt_session = ordered[2];
                Fold fold;
                fold.name = "subject" + std::to_string(subj);
                for (std::size_t i = 0; i < n; ++i) {
                    if (d.subject_id[i] != subj) continue;
                    if (d.session_id[i] == ordered[0] || d.session_id[i] == ordered[1])
                        fold.source.push_back(i);
                    else if (d.session_id[i] == tgt_session)
                        fold.target.push_back(i);
                }
                folds.push_back(std::move(fold));
            }
            break;
        }
        case ProtocolKind::WithinSubjectSingleSession: {
            if (spec.source_trials < 1)
                throw ProtocolError("source_trials must be >= 1");
            for (int subj : subjects) {
                for (int sess : sessions) {
                    std::set<int> trials;
                    for (std::size_t i = 0; i < n; ++i)
                        if (d.subject_id[i] == subj && d.session_id[i] == sess)
                            trials.insert(d.trial_id[i]);
                    if (trials.empty()) continue;
                    if (trials.size() <= spec.source_trials)
                        throw ProtocolError(
                            "subject " + std::to_string(subj) + " session " +
                            std::to_string(sess) + " has too few trials for a " +
                            std::to_string(spec.source_trials) + "-trial source split");
                    std::vector<int> ordered(trials.begin(), trials.end());
                    const std::set<int> src_trials(ordered.begin(),
                                                   ordered.begin() + static_cast<std::ptrdiff_t>(
                                                                         spec.source_trials));
                    Fold fold;
                    fold.name =
                        "subject" + std::to_string(subj) + "_session" + std::to_string(sess);
                    for (std::size_t i = 0; i < n; ++i) {
                        if (d.subject_id[i] != subj || d.session_id[i] != sess) continue;
                        (src_trials.count(d.trial_id[i]) ? fold.source : fold.target).push_back(i);
                    }
                    folds.push_back(std::move(fold));
                }
            }
            break;
        }
    }
    if (folds.empty()) throw ProtocolError("protocol produced no folds");
    return folds;
}

Matrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                        std::size_t n) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("confusion_matrix: length mismatch");
    Matrix m(n, n);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int a = y_true[i], b = y_pred[i];
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n ||
            static_cast<std::size_t>(b) >= n)
            throw std::invalid_argument("confusion_matrix: label out of range");
        m.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) += 1.0;
    }
    return m;
}

ProtocolResult run_protocol(const TrainConfig& config, const Dataset& d, const ProtocolSpec& spec,
                            double eta_percent) {
    const auto folds = make_folds(d, spec);
    const auto classes = static_cast<std::size_t>(d.n_classes());

    ProtocolResult result;
    result.confusion = Matrix(classes, classes);

    for (std::size_t f = 0; f < folds.size(); ++f) {
        Dataset source = d.subset(folds[f].source);
        const Dataset target = d.subset(folds[f].target);

        TrainConfig fold_cfg = config;
        fold_cfg.seed = stream_seed(config.seed, "fold", f);
        if (eta_percent > 0.0)
            source = inject_label_noise(source, eta_percent, stream_seed(fold_cfg.seed, "noise"));

        FitResult fitres;
        try {
            fitres = fit(fold_cfg, source, target.features);
        } catch (const std::exception& e) {
            throw std::runtime_error("fold '" + folds[f].name + "': " + e.what());
        }

        const auto preds = predict(fitres.params, fitres.prototypes, target.features);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == target.labels[i]) ++hits;
        const double acc = static_cast<double>(hits) / static_cast<double>(preds.size());

        const Matrix cm = confusion_matrix(target.labels, preds, classes);
        for (std::size_t i = 0; i < cm.data.size(); ++i) result.confusion.data[i] += cm.data[i];

        result.fold_accuracies.push_back(acc);
        FoldSummary summary;
        summary.name = folds[f].name;
        summary.accuracy = acc;
        if (!fitres.history.epochs.empty()) {
            summary.final_objective = fitres.history.epochs.back().objective;
            summary.final_source_accuracy = fitres.history.epochs.back().source_accuracy;
        }
        result.folds.push_back(std::move(summary));
    }

    const double count = static_cast<double>(result.fold_accuracies.size());
    double mean = 0.0;
    for (double a : result.fold_accuracies) mean += a;
    mean /= count;
    double var = 0.0;
    for (double a : result.fold_accuracies) var += (a - mean) * (a - mean);
    var /= spec.population_std ? count : std::max(1.0, count - 1.0);
    result.mean = mean;
    result.stddev = std::sqrt(var);
    return result;
}

std::vector<ProtocolResult> run_noise_sweep(const TrainConfig& config, const Dataset& d,
                                            const ProtocolSpec& spec,
                                            const std::vector<double>& etas) {
    std::vector<ProtocolResult> results;
    results.reserve(etas.size());
    for (double eta : etas) results.push_back(run_protocol(config, d, spec, eta));
    return results;
}

}  // namespace prpl
