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

#include <string>
#include <vector>

#include "prpl/data.hpp"
#include "prpl/train.hpp"

namespace prpl {

enum class ProtocolKind {
    CrossSubjectCrossSession,    // one fold per subject, all its sessions = target
    CrossSubjectSingleSession,   // first session only, leave one subject out
    WithinSubjectCrossSession,   // sessions 1-2 source, session 3 target
    WithinSubjectSingleSession,  // per (subject, session), first k trials source
};

struct ProtocolSpec {
    ProtocolKind kind = ProtocolKind::CrossSubjectSingleSession;
    std::size_t source_trials = 9;  // within-subject single-session split
    bool population_std = true;     // divide by F rather than F-1
};

struct Fold {
    std::vector<std::size_t> source;
    std::vector<std::size_t> target;
    std::string name;
};

std::vector<Fold> make_folds(const Dataset& d, const ProtocolSpec& spec);

struct FoldSummary {
    std::string name;
    double accuracy = 0.0;
    double final_objective = 0.0;
    double final_source_accuracy = 0.0;
};

struct ProtocolResult {
    std::vector<double> fold_accuracies;
    double mean = 0.0;
    double stddev = 0.0;
    Matrix confusion;  // n x n counts, true class by row
    std::vector<FoldSummary> folds;
};

Matrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                        std::size_t n);

/// Per fold: fit on (source, target features only), predict target, score.
/// eta_percent > 0 injects label noise into each fold's source before fit.
ProtocolResult run_protocol(const TrainConfig& config, const Dataset& d, const ProtocolSpec& spec,
                            double eta_percent = 0.0);

/// One ProtocolResult per eta, all with the same seeds.
std::vector<ProtocolResult> run_noise_sweep(const TrainConfig& config, const Dataset& d,
                                            const ProtocolSpec& spec,
                                            const std::vector<double>& etas);

}  // namespace prpl
