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

#include "prpl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "prpl/rng.hpp"

namespace prpl {

namespace {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& msg) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void format_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

double column_variance(const Matrix& m, std::size_t col) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) mean += m.at(i, col);
    mean /= static_cast<double>(m.rows);
    double var = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double d = m.at(i, col) - mean;
        var += d * d;
    }
    return var / static_cast<double>(m.rows);
}

struct Biquad {
    double b0, b1, b2, a1, a2;  // normalized, a0 = 1

    void apply(std::vector<double>& x) const {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = b0 * in + z1;
            z1 = b1 * in - a1 * out + z2;
            z2 = b2 * in - a2 * out;
            v = out;
        }
    }
};

// 2nd-order Butterworth sections from the bilinear transform (Q = 1/sqrt(2)).
Biquad butter_lowpass(double cutoff_hz, double rate_hz) {
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / rate_hz;
    const double q = 1.0 / std::numbers::sqrt2;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0, -2.0 * c / a0,
            (1.0 - alpha) / a0};
}

Biquad butter_highpass(double cutoff_hz, double rate_hz) {
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / rate_hz;
    const double q = 1.0 / std::numbers::sqrt2;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0, -2.0 * c / a0,
            (1.0 - alpha) / a0};
}

// Odd-reflection padding at both ends, as usual for zero-phase filtering.
std::vector<double> reflect_pad(const std::vector<double>& x, std::size_t npad) {
    std::vector<double> out;
    out.reserve(x.size() + 2 * npad);
    for (std::size_t i = npad; i >= 1; --i) out.push_back(2.0 * x.front() - x[i]);
    out.insert(out.end(), x.begin(), x.end());
    const std::size_t n = x.size();
    for (std::size_t i = 2; i <= npad + 1; ++i) out.push_back(2.0 * x.back() - x[n - i]);
    return out;
}

}  // namespace

int Dataset::n_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return mx + 1;
}

void Dataset::validate() const {
    const std::size_t n = size();
    if (labels.size() != n || subject_id.size() != n || session_id.size() != n ||
        trial_id.size() != n)
        throw std::invalid_argument("Dataset: id/label columns must match sample count");
    for (int l : labels)
        if (l < 0) throw std::invalid_argument("Dataset: negative class label");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.features = Matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    out.subject_id.reserve(indices.size());
    out.session_id.reserve(indices.size());
    out.trial_id.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        std::copy(features.row(i).begin(), features.row(i).end(), out.features.row(k).begin());
        out.labels.push_back(labels[i]);
        out.subject_id.push_back(subject_id[i]);
        out.session_id.push_back(session_id[i]);
        out.trial_id.push_back(trial_id[i]);
    }
    return out;
}

void SyntheticSpec::validate() const {
    if (n_classes < 1 || dim < 2 || samples_per_class < 1)
        throw std::invalid_argument("SyntheticSpec: counts must be >= 1 (dim >= 2)");
    if (within_sigma <= 0.0) throw std::invalid_argument("SyntheticSpec: within_sigma must be > 0");
}

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto rng = make_rng(seed, "data");
    std::normal_distribution<double> unit(0.0, 1.0);

    const std::size_t d = spec.dim;
    // Class means ride on a common positive baseline, as log-power features
    // do. The rotation acts about the origin, so the baseline turns the
    // small spec angle into a substantial common displacement of the target
    // cloud, which is the domain shift the benchmark is meant to model.
    const double baseline = 10.0 * spec.within_sigma;
    std::vector<std::vector<double>> means(spec.n_classes, std::vector<double>(d));
    for (auto& m : means)
        for (double& v : m) v = baseline + spec.mean_spread * unit(rng);

    // Random orthonormal 2-frame for the rotation plane.
    std::vector<double> u(d), v(d);
    for (double& x : u) x = unit(rng);
    for (double& x : v) x = unit(rng);
    double nu = norm2(u);
    for (double& x : u) x /= nu;
    const double uv = dot(u, v);
    for (std::size_t i = 0; i < d; ++i) v[i] -= uv * u[i];
    double nv = norm2(v);
    for (double& x : v) x /= nv;

    std::vector<double> t(d);
    for (double& x : t) x = unit(rng);
    const double nt = norm2(t);
    const double tmag = spec.translation_sigma * spec.within_sigma;
    for (double& x : t) x *= tmag / nt;

    const double theta = spec.rotation_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    const std::size_t per_domain = spec.n_classes * spec.samples_per_class;
    Dataset src, tgt;
    src.features = Matrix(per_domain, d);
    tgt.features = Matrix(per_domain, d);

    auto fill_ids = [&](Dataset& ds, int subject) {
        ds.labels.resize(per_domain);
        ds.subject_id.assign(per_domain, subject);
        ds.session_id.assign(per_domain, 1);
        ds.trial_id.resize(per_domain);
    };
    fill_ids(src, 0);
    fill_ids(tgt, 1);

    std::vector<double> x(d);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        for (std::size_t k = 0; k < spec.samples_per_class; ++k, ++row) {
            src.labels[row] = static_cast<int>(c);
            src.trial_id[row] = static_cast<int>(k);
            auto out = src.features.row(row);
            for (std::size_t i = 0; i < d; ++i)
                out[i] = means[c][i] + spec.within_sigma * unit(rng);
        }
    }
    row = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        for (std::size_t k = 0; k < spec.samples_per_class; ++k, ++row) {
            tgt.labels[row] = static_cast<int>(c);
            tgt.trial_id[row] = static_cast<int>(k);
            for (std::size_t i = 0; i < d; ++i)
                x[i] = means[c][i] + spec.within_sigma * unit(rng);
            const double xu = dot(x, u), xv = dot(x, v);
            auto out = tgt.features.row(row);
            for (std::size_t i = 0; i < d; ++i) {
                const double rotated =
                    x[i] + (ct - 1.0) * (xu * u[i] + xv * v[i]) + st * (xu * v[i] - xv * u[i]);
                out[i] = rotated + t[i] + spec.target_noise_sigma * unit(rng);
            }
        }
    }
    return {std::move(src), std::move(tgt)};
}

Dataset inject_label_noise(const Dataset& d, double eta_percent, std::uint64_t seed) {
    if (eta_percent < 0.0 || eta_percent > 100.0)
        throw std::invalid_argument("inject_label_noise: eta must be in [0,100]");
    Dataset out = d;
    const std::size_t n = d.size();
    const auto k = static_cast<std::size_t>(std::llround(eta_percent * static_cast<double>(n) / 100.0));
    if (k == 0) return out;
    auto rng = make_rng(seed, "noise");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const int classes = d.n_classes();
    std::uniform_int_distribution<int> pick(0, classes - 1);
    for (std::size_t i = 0; i < k; ++i) out.labels[idx[i]] = pick(rng);
    return out;
}

void RawRecording::validate() const {
    if (rate_hz <= 0.0) throw std::invalid_argument("RawRecording: rate must be > 0");
    std::size_t prev_end = 0;
    for (const auto& t : trials) {
        if (t.begin < prev_end || t.end <= t.begin || t.end > signal.rows)
            throw std::invalid_argument("RawRecording: trial boundaries overlap or out of range");
        prev_end = t.end;
    }
}

std::vector<Band> default_bands() {
    return {{1.0, 3.0}, {4.0, 7.0}, {8.0, 13.0}, {14.0, 30.0}, {31.0, 50.0}};
}

std::vector<double> bandpass_filtfilt(const std::vector<double>& x, double rate_hz, double lo_hz,
                                      double hi_hz) {
    if (x.size() < 4) return x;
    const Biquad hp = butter_highpass(lo_hz, rate_hz);
    const Biquad lp = butter_lowpass(hi_hz, rate_hz);
    const std::size_t npad = std::min(x.size() - 1, static_cast<std::size_t>(3.0 * rate_hz / lo_hz));
    std::vector<double> y = reflect_pad(x, npad);
    hp.apply(y);
    lp.apply(y);
    std::reverse(y.begin(), y.end());
    hp.apply(y);
    lp.apply(y);
    std::reverse(y.begin(), y.end());
    return {y.begin() + static_cast<std::ptrdiff_t>(npad),
            y.begin() + static_cast<std::ptrdiff_t>(npad + x.size())};
}

Dataset compute_de_features(const RawRecording& rec, const std::vector<Band>& bands,
                            double window_seconds) {
    rec.validate();
    if (bands.empty()) throw std::invalid_argument("compute_de_features: no bands");
    const auto win = static_cast<std::size_t>(window_seconds * rec.rate_hz);
    if (win < 2) throw std::invalid_argument("compute_de_features: window too short");
    const std::size_t channels = rec.signal.cols;

    std::size_t total_segments = 0;
    for (const auto& t : rec.trials) {
        const std::size_t len = t.end - t.begin;
        if (len < win)
            throw std::runtime_error("compute_de_features: window longer than trial");
        total_segments += len / win;
    }

    Dataset out;
    out.features = Matrix(total_segments, bands.size() * channels);
    out.labels.reserve(total_segments);
    out.subject_id.assign(total_segments, 0);
    out.session_id.assign(total_segments, 1);
    out.trial_id.reserve(total_segments);

    constexpr double kVarFloor = 1e-30;
    std::size_t row0 = 0;
    int trial_index = 0;
    std::vector<double> channel;
    for (const auto& t : rec.trials) {
        const std::size_t len = t.end - t.begin;
        const std::size_t segments = len / win;
        for (std::size_t s = 0; s < segments; ++s) {
            out.labels.push_back(t.label);
            out.trial_id.push_back(trial_index);
        }
        for (std::size_t ch = 0; ch < channels; ++ch) {
            channel.resize(len);
            for (std::size_t i = 0; i < len; ++i) channel[i] = rec.signal.at(t.begin + i, ch);
            for (std::size_t b = 0; b < bands.size(); ++b) {
                const auto filtered =
                    bandpass_filtfilt(channel, rec.rate_hz, bands[b].lo_hz, bands[b].hi_hz);
                for (std::size_t s = 0; s < segments; ++s) {
                    double mean = 0.0;
                    for (std::size_t i = 0; i < win; ++i) mean += filtered[s * win + i];
                    mean /= static_cast<double>(win);
                    double var = 0.0;
                    for (std::size_t i = 0; i < win; ++i) {
                        const double d = filtered[s * win + i] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(win);
                    var = std::max(var, kVarFloor);
                    out.features.at(row0 + s, b * channels + ch) =
                        0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var);
                }
            }
        }
        row0 += segments;
        ++trial_index;
    }
    return out;
}

Matrix lds_smooth(const Matrix& features, double q, double r) {
    const std::size_t rows = features.rows, cols = features.cols;
    Matrix out(rows, cols);
    if (rows == 0) return out;
    std::vector<double> xf(rows), pf(rows), xpred(rows), ppred(rows);
    for (std::size_t col = 0; col < cols; ++col) {
        const double var = column_variance(features, col);
        if (var == 0.0) {
            for (std::size_t i = 0; i < rows; ++i) out.at(i, col) = features.at(i, col);
            continue;
        }
        const double qc = q > 0.0 ? q : 0.01 * var;
        const double rc = r > 0.0 ? r : var;

        // forward pass (random-walk state, identity observation)
        xf[0] = features.at(0, col);
        pf[0] = rc;
        xpred[0] = xf[0];
        ppred[0] = pf[0];
        for (std::size_t i = 1; i < rows; ++i) {
            xpred[i] = xf[i - 1];
            ppred[i] = pf[i - 1] + qc;
            const double k = ppred[i] / (ppred[i] + rc);
            xf[i] = xpred[i] + k * (features.at(i, col) - xpred[i]);
            pf[i] = (1.0 - k) * ppred[i];
        }
        // backward (fixed-interval) pass
        out.at(rows - 1, col) = xf[rows - 1];
        for (std::size_t i = rows - 1; i-- > 0;) {
            const double c = pf[i] / (pf[i] + qc);
            out.at(i, col) = xf[i] + c * (out.at(i + 1, col) - xpred[i + 1]);
        }
    }
    return out;
}

void save_dataset(const Dataset& d, const std::string& path) {
    d.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
    std::string line = "subject,session,trial,label";
    for (std::size_t j = 0; j < d.dim(); ++j) line += ",f" + std::to_string(j);
    f << line << "\n";
    for (std::size_t i = 0; i < d.size(); ++i) {
        line.clear();
        line += std::to_string(d.subject_id[i]);
        line += ',';
        line += std::to_string(d.session_id[i]);
        line += ',';
        line += std::to_string(d.trial_id[i]);
        line += ',';
        line += std::to_string(d.labels[i]);
        for (std::size_t j = 0; j < d.dim(); ++j) {
            line += ',';
            format_double(line, d.features.at(i, j));
        }
        f << line << "\n";
    }
    if (!f) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(f, line)) parse_fail(path, 1, "empty file");
    ++lineno;
    auto header = split_csv(line);
    const std::vector<std::string> required = {"subject", "session", "trial", "label"};
    if (header.size() < required.size() + 1)
        parse_fail(path, lineno, "header too short; need subject,session,trial,label,f0,...");
    for (std::size_t i = 0; i < required.size(); ++i)
        if (header[i] != required[i])
            parse_fail(path, lineno, "missing column '" + required[i] + "'");
    const std::size_t d = header.size() - required.size();
    for (std::size_t j = 0; j < d; ++j)
        if (header[required.size() + j] != "f" + std::to_string(j))
            parse_fail(path, lineno, "feature columns must be f0..f" + std::to_string(d - 1));

    std::vector<double> values;
    Dataset out;
    std::vector<double> feats;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != header.size())
            parse_fail(path, lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                         std::to_string(fields.size()));
        try {
            out.subject_id.push_back(std::stoi(fields[0]));
            out.session_id.push_back(std::stoi(fields[1]));
            out.trial_id.push_back(std::stoi(fields[2]));
            const int label = std::stoi(fields[3]);
            if (label < 0) throw std::invalid_argument("negative label");
            out.labels.push_back(label);
            for (std::size_t j = 0; j < d; ++j) feats.push_back(std::stod(fields[4 + j]));
        } catch (const std::exception& e) {
            parse_fail(path, lineno, std::string("bad value: ") + e.what());
        }
    }
    if (out.labels.empty()) parse_fail(path, lineno, "no data rows");
    out.features = Matrix(out.labels.size(), d);
    out.features.data = std::move(feats);
    out.validate();
    return out;
}

void save_recording(const RawRecording& rec, const std::string& path) {
    rec.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_recording: cannot open " + path);
    f << "rate=" << rec.rate_hz << "\n";
    f << "channels=" << rec.signal.cols << "\n";
    std::string line;
    for (const auto& t : rec.trials) {
        f << "trial label=" << t.label << "\n";
        for (std::size_t i = t.begin; i < t.end; ++i) {
            line.clear();
            for (std::size_t ch = 0; ch < rec.signal.cols; ++ch) {
                if (ch) line += ',';
                format_double(line, rec.signal.at(i, ch));
            }
            f << line << "\n";
        }
    }
}

RawRecording load_recording(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_recording: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&](const char* what) {
        if (!std::getline(f, line)) parse_fail(path, lineno + 1, std::string("expected ") + what);
        ++lineno;
    };
    next_line("rate=<Hz>");
    if (line.rfind("rate=", 0) != 0) parse_fail(path, lineno, "expected rate=<Hz>");
    const double rate = std::stod(line.substr(5));
    next_line("channels=<k>");
    if (line.rfind("channels=", 0) != 0) parse_fail(path, lineno, "expected channels=<k>");
    const auto channels = static_cast<std::size_t>(std::stoul(line.substr(9)));
    if (channels == 0) parse_fail(path, lineno, "channels must be >= 1");

    RawRecording rec;
    rec.rate_hz = rate;
    std::vector<double> samples;
    int current_label = 0;
    bool in_trial = false;
    std::size_t trial_begin = 0;
    std::size_t rows = 0;
    auto close_trial = [&]() {
        if (!in_trial) return;
        if (rows == trial_begin) parse_fail(path, lineno, "trial with no sample rows");
        rec.trials.push_back({trial_begin, rows, current_label});
    };
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("trial label=", 0) == 0) {
            close_trial();
            current_label = std::stoi(line.substr(12));
            trial_begin = rows;
            in_trial = true;
            continue;
        }
        if (!in_trial) parse_fail(path, lineno, "sample row before any trial header");
        auto fields = split_csv(line);
        if (fields.size() != channels)
            parse_fail(path, lineno, "expected " + std::to_string(channels) + " channel values");
        try {
            for (const auto& s : fields) samples.push_back(std::stod(s));
        } catch (const std::exception& e) {
            parse_fail(path, lineno, std::string("bad sample value: ") + e.what());
        }
        ++rows;
    }
    close_trial();
    if (rec.trials.empty()) parse_fail(path, lineno, "no trials");
    rec.signal = Matrix(rows, channels);
    rec.signal.data = std::move(samples);
    rec.validate();
    return rec;
}

}  // namespace prpl
