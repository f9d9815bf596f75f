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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "prpl/protocols.hpp"

using namespace prpl;

namespace {

/// Gaussian blobs shared by all subjects: every (subject, session) block
/// holds `trials` trials of `per_trial` samples each, labels cycling over
/// three classes by trial.
Dataset make_population(int subjects, int sessions, int trials, int per_trial,
                        std::uint64_t seed) {
    const std::size_t dim = 6;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Dataset d;
    std::vector<double> rows;
    for (int subj = 0; subj < subjects; ++subj)
        for (int sess = 1; sess <= sessions; ++sess)
            for (int tr = 0; tr < trials; ++tr) {
                const int label = tr % 3;
                for (int k = 0; k < per_trial; ++k) {
                    for (std::size_t j = 0; j < dim; ++j) {
                        const double mean = (j == static_cast<std::size_t>(label)) ? 4.0 : 0.0;
                        rows.push_back(mean + 0.4 * unit(rng));
                    }
                    d.labels.push_back(label);
                    d.subject_id.push_back(subj);
                    d.session_id.push_back(sess);
                    d.trial_id.push_back(tr);
                }
            }
    d.features = Matrix(d.labels.size(), dim);
    d.features.data = std::move(rows);
    d.validate();
    return d;
}

TrainConfig cheap_config() {
    TrainConfig cfg;
    cfg.maxepoch = 5;
    cfg.batch_size = 24;
    cfg.seed = 4;
    return cfg;
}

bool is_partition(const Fold& fold, const std::vector<std::size_t>& universe) {
    std::set<std::size_t> seen(fold.source.begin(), fold.source.end());
    for (std::size_t i : fold.target)
        if (!seen.insert(i).second) return false;
    return seen == std::set<std::size_t>(universe.begin(), universe.end());
}

}  // namespace

TEST_CASE("cross-subject cross-session: one fold per subject over all sessions") {
    Dataset d = make_population(3, 2, 4, 2, 1);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::CrossSubjectCrossSession;
    auto folds = make_folds(d, spec);
    REQUIRE(folds.size() == 3);
    std::vector<std::size_t> universe(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) universe[i] = i;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        CHECK(is_partition(folds[f], universe));
        for (std::size_t i : folds[f].target)
            CHECK(d.subject_id[i] == static_cast<int>(f));
        for (std::size_t i : folds[f].source)
            CHECK(d.subject_id[i] != static_cast<int>(f));
        CHECK(folds[f].target.size() == d.size() / 3);
    }
}

TEST_CASE("cross-subject single-session restricts every fold to the first session") {
    Dataset d = make_population(3, 2, 4, 2, 2);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::CrossSubjectSingleSession;
    auto folds = make_folds(d, spec);
    REQUIRE(folds.size() == 3);
    for (const auto& fold : folds) {
        for (std::size_t i : fold.source) CHECK(d.session_id[i] == 1);
        for (std::size_t i : fold.target) CHECK(d.session_id[i] == 1);
        CHECK(fold.source.size() + fold.target.size() == d.size() / 2);
    }
}

TEST_CASE("within-subject cross-session uses sessions 1-2 as source, 3 as target") {
    Dataset d = make_population(2, 3, 4, 2, 3);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::WithinSubjectCrossSession;
    auto folds = make_folds(d, spec);
    REQUIRE(folds.size() == 2);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (std::size_t i : folds[f].source) {
            CHECK(d.subject_id[i] == static_cast<int>(f));
            CHECK(d.session_id[i] <= 2);
        }
        for (std::size_t i : folds[f].target) {
            CHECK(d.subject_id[i] == static_cast<int>(f));
            CHECK(d.session_id[i] == 3);
        }
    }
    // Fewer than three sessions is a structural error.
    Dataset two = make_population(2, 2, 4, 2, 4);
    CHECK_THROWS_AS(make_folds(two, spec), std::runtime_error);
}

TEST_CASE("within-subject single-session splits by leading trials") {
    Dataset d = make_population(2, 2, 15, 1, 5);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::WithinSubjectSingleSession;
    spec.source_trials = 9;
    auto folds = make_folds(d, spec);
    REQUIRE(folds.size() == 4);  // per (subject, session)
    for (const auto& fold : folds) {
        std::set<int> src_trials, tgt_trials;
        for (std::size_t i : fold.source) src_trials.insert(d.trial_id[i]);
        for (std::size_t i : fold.target) tgt_trials.insert(d.trial_id[i]);
        CHECK(src_trials.size() == 9);
        CHECK(tgt_trials.size() == 6);
        CHECK(*src_trials.rbegin() < *tgt_trials.begin());
    }
    spec.source_trials = 15;  // no trials left for the target
    CHECK_THROWS_AS(make_folds(d, spec), std::runtime_error);
}

TEST_CASE("confusion_matrix counts true class by row") {
    Matrix m = confusion_matrix({0, 1}, {0, 0}, 2);
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(0, 1) == 0.0);
    CHECK(m.at(1, 0) == 1.0);
    CHECK(m.at(1, 1) == 0.0);

    Matrix perfect = confusion_matrix({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    double off_diag = 0.0, total = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            total += perfect.at(i, j);
            if (i != j) off_diag += perfect.at(i, j);
        }
    CHECK(off_diag == 0.0);
    CHECK(total == 4.0);

    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(confusion_matrix({0, 2}, {0, 0}, 2), std::invalid_argument);
}

TEST_CASE("run_protocol recovers an easy shift-free population") {
    Dataset d = make_population(2, 1, 10, 3, 6);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::CrossSubjectSingleSession;
    ProtocolResult res = run_protocol(cheap_config(), d, spec);
    REQUIRE(res.fold_accuracies.size() == 2);
    for (double a : res.fold_accuracies) CHECK(a > 0.9);

    // Summary statistics recompose from the per-fold accuracies.
    double mean = 0.0;
    for (double a : res.fold_accuracies) mean += a;
    mean /= static_cast<double>(res.fold_accuracies.size());
    double var = 0.0;
    for (double a : res.fold_accuracies) var += (a - mean) * (a - mean);
    var /= static_cast<double>(res.fold_accuracies.size());
    CHECK(res.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(res.stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

    // The pooled confusion matrix counts every target sample once.
    double total = 0.0;
    for (double v : res.confusion.data) total += v;
    double targets = 0.0;
    for (const auto& fold : make_folds(d, spec)) targets += static_cast<double>(fold.target.size());
    CHECK(total == targets);

    CHECK(res.folds.size() == 2);
    CHECK(res.folds[0].name == "subject0");
}

TEST_CASE("sample-std flag rescales only the reported spread") {
    Dataset d = make_population(3, 1, 6, 2, 7);
    ProtocolSpec pop;
    pop.kind = ProtocolKind::CrossSubjectSingleSession;
    ProtocolSpec samp = pop;
    samp.population_std = false;
    TrainConfig cfg = cheap_config();
    cfg.maxepoch = 3;
    ProtocolResult a = run_protocol(cfg, d, pop);
    ProtocolResult b = run_protocol(cfg, d, samp);
    CHECK(a.fold_accuracies == b.fold_accuracies);
    CHECK(a.mean == b.mean);
    const double f = static_cast<double>(a.fold_accuracies.size());
    CHECK(b.stddev == doctest::Approx(a.stddev * std::sqrt(f / (f - 1.0))).epsilon(1e-9));
}

TEST_CASE("run_noise_sweep at eta = 0 reproduces the clean protocol bit for bit") {
    Dataset d = make_population(2, 1, 8, 2, 8);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::CrossSubjectSingleSession;
    TrainConfig cfg = cheap_config();
    cfg.maxepoch = 3;
    auto sweep = run_noise_sweep(cfg, d, spec, {0.0, 25.0});
    REQUIRE(sweep.size() == 2);
    ProtocolResult clean = run_protocol(cfg, d, spec);
    CHECK(sweep[0].fold_accuracies == clean.fold_accuracies);
    CHECK(sweep[0].mean == clean.mean);
    CHECK(sweep[0].confusion.data == clean.confusion.data);
}
