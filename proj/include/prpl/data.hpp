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
#include <utility>
#include <vector>

#include "prpl/matrix.hpp"

namespace prpl {

/// Feature matrix plus per-sample label and subject/session/trial ids; the
/// unit every evaluation protocol slices.
struct Dataset {
    Matrix features;            // N x d
    std::vector<int> labels;    // in 0..n-1
    std::vector<int> subject_id;
    std::vector<int> session_id;
    std::vector<int> trial_id;

    std::size_t size() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
    int n_classes() const;
    void validate() const;  // id lengths, label range
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

struct SyntheticSpec {
    std::size_t n_classes = 3;
    std::size_t dim = 20;
    std::size_t samples_per_class = 200;  // per domain
    double mean_spread = 0.6;             // scale of the class-mean draw
    double within_sigma = 1.0;
    double rotation_deg = 25.0;           // applied in a random 2-D subspace
    double translation_sigma = 0.5;       // |t| in units of within_sigma
    double target_noise_sigma = 0.1;

    void validate() const;
};

/// Source classes are Gaussian blobs; the target domain is the same blobs
/// pushed through a rotation in a random 2-D subspace, a translation, and
/// additive noise. Deterministic per seed.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Redraws the labels of exactly round(eta * N / 100) uniformly chosen
/// samples uniformly over all classes (collisions with the original label
/// allowed). Features untouched.
Dataset inject_label_noise(const Dataset& d, double eta_percent, std::uint64_t seed);

/// Multichannel raw signal with per-trial boundaries and labels.
struct RawRecording {
    Matrix signal;  // samples x channels
    double rate_hz = 0.0;
    struct Trial {
        std::size_t begin = 0;  // sample index, half-open range
        std::size_t end = 0;
        int label = 0;
    };
    std::vector<Trial> trials;

    void validate() const;
};

struct Band {
    double lo_hz;
    double hi_hz;
};

/// Delta, Theta, Alpha, Beta, Gamma.
std::vector<Band> default_bands();

/// Per 1-window segment, per channel, per band: zero-phase band-pass then
/// DE = 0.5 * log(2*pi*e*var). Columns ordered band-major then channel.
/// Each segment becomes one sample; trial/label ids come from the recording.
Dataset compute_de_features(const RawRecording& rec, const std::vector<Band>& bands,
                            double window_seconds);

/// Zero-phase (forward-backward) 4th-order Butterworth band-pass, one column
/// per channel. Exposed for testing.
std::vector<double> bandpass_filtfilt(const std::vector<double>& x, double rate_hz, double lo_hz,
                                      double hi_hz);

/// Per-column random-walk Kalman filter + fixed-interval (RTS) smoother.
/// q/r <= 0 selects the defaults 0.01 * column variance and column variance.
Matrix lds_smooth(const Matrix& features, double q = -1.0, double r = -1.0);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& d, const std::string& path);

RawRecording load_recording(const std::string& path);
void save_recording(const RawRecording& rec, const std::string& path);

}  // namespace prpl
