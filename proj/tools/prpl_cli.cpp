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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prpl/data.hpp"
#include "prpl/model.hpp"
#include "prpl/protocols.hpp"
#include "prpl/rng.hpp"
#include "prpl/train.hpp"

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << content;
    if (!f) throw std::runtime_error("write failed: " + path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

struct CommonOpts {
    prpl::TrainConfig train;
    std::string outdir = "out";
    std::vector<std::uint64_t> seeds = {0};
};

void add_train_options(CLI::App* cmd, prpl::TrainConfig& cfg) {
    cmd->add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    cmd->add_option("--maxepoch", cfg.maxepoch)->capture_default_str();
    cmd->add_option("--beta", cfg.beta, "prototype regularizer weight")->capture_default_str();
    cmd->add_option("--delta", cfg.delta, "target pairwise weight scale")->capture_default_str();
    cmd->add_option("--tau-h0", cfg.tau_h0)->capture_default_str();
    cmd->add_option("--tau-l0", cfg.tau_l0)->capture_default_str();
    cmd->add_option("--p-drop", cfg.p_drop)->capture_default_str();
    cmd->add_option("--l2", cfg.l2_weight)->capture_default_str();
    cmd->add_option("--rmsprop-rho", cfg.rmsprop_rho)->capture_default_str();
    cmd->add_option("--rmsprop-eps", cfg.rmsprop_eps)->capture_default_str();

    cmd->add_option("--lambda-mode", cfg.lambda_mode, "standard|literal")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, prpl::LambdaMode>{{"standard", prpl::LambdaMode::Standard},
                                                    {"literal", prpl::LambdaMode::Literal}}));
    cmd->add_option("--reg-form", cfg.reg_form, "printed|gram")
        ->transform(CLI::CheckedTransformer(std::map<std::string, prpl::RegularizerForm>{
            {"printed", prpl::RegularizerForm::Printed}, {"gram", prpl::RegularizerForm::Gram}}));
    cmd->add_option("--sim-form", cfg.sim_form, "cosine|rawdot")
        ->transform(CLI::CheckedTransformer(std::map<std::string, prpl::SimilarityForm>{
            {"cosine", prpl::SimilarityForm::Cosine}, {"rawdot", prpl::SimilarityForm::RawDot}}));
    cmd->add_option("--pseudo-mode", cfg.pseudo_mode, "fixed|linear|nonlinear")
        ->transform(CLI::CheckedTransformer(std::map<std::string, prpl::PseudoMode>{
            {"fixed", prpl::PseudoMode::Fixed},
            {"linear", prpl::PseudoMode::Linear},
            {"nonlinear", prpl::PseudoMode::Nonlinear}}));
    cmd->add_option("--gamma-mode", cfg.gamma_mode, "fixed|dynamic")
        ->transform(CLI::CheckedTransformer(std::map<std::string, prpl::GammaMode>{
            {"fixed", prpl::GammaMode::Fixed}, {"dynamic", prpl::GammaMode::Dynamic}}));

    cmd->add_flag("--no-discriminator", cfg.no_discriminator);
    cmd->add_flag("--no-target-pairwise", cfg.no_target_pairwise);
    cmd->add_flag("--no-source-pairwise", cfg.no_source_pairwise);
    cmd->add_flag("--no-prototypes", cfg.no_prototypes);
}

std::string history_csv(const prpl::TrainHistory& history) {
    std::string out =
        "epoch,lambda,gamma,tau_h,tau_l,source_pair_loss,target_pair_loss,disc_loss,objective,"
        "valid_pair_fraction,source_accuracy,target_accuracy\n";
    for (const auto& r : history.epochs) {
        out += std::to_string(r.epoch);
        for (double v : {r.lambda, r.gamma, r.tau_h, r.tau_l, r.source_pair_loss,
                         r.target_pair_loss, r.disc_loss, r.objective, r.valid_pair_fraction,
                         r.source_accuracy, r.target_accuracy}) {
            out += ',';
            out += fmt(v);
        }
        out += '\n';
    }
    return out;
}

std::string confusion_csv(const prpl::Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            out += fmt(m.at(i, j));
        }
        out += '\n';
    }
    return out;
}

prpl::ProtocolKind parse_kind(const std::string& s) {
    if (s == "cross_subject_cross_session") return prpl::ProtocolKind::CrossSubjectCrossSession;
    if (s == "cross_subject_single_session") return prpl::ProtocolKind::CrossSubjectSingleSession;
    if (s == "within_subject_cross_session") return prpl::ProtocolKind::WithinSubjectCrossSession;
    if (s == "within_subject_single_session")
        return prpl::ProtocolKind::WithinSubjectSingleSession;
    throw CLI::ValidationError("--kind", "unknown protocol kind '" + s + "'");
}

/// Runs the protocol for every seed and renders the combined metrics CSV.
std::string protocol_metrics_csv(const prpl::TrainConfig& base,
                                 const std::vector<std::uint64_t>& seeds, const prpl::Dataset& d,
                                 const prpl::ProtocolSpec& spec, double eta,
                                 prpl::Matrix* confusion_out) {
    std::string out = "fold,accuracy\n";
    std::vector<double> all;
    prpl::Matrix confusion;
    for (std::uint64_t seed : seeds) {
        prpl::TrainConfig cfg = base;
        cfg.seed = seed;
        const auto result = prpl::run_protocol(cfg, d, spec, eta);
        for (std::size_t f = 0; f < result.folds.size(); ++f) {
            out += "s" + std::to_string(seed) + ":" + result.folds[f].name + "," +
                   fmt(result.fold_accuracies[f]) + "\n";
            all.push_back(result.fold_accuracies[f]);
        }
        if (confusion.data.empty()) {
            confusion = result.confusion;
        } else {
            for (std::size_t i = 0; i < confusion.data.size(); ++i)
                confusion.data[i] += result.confusion.data[i];
        }
    }
    double mean = 0.0;
    for (double a : all) mean += a;
    mean /= static_cast<double>(all.size());
    double var = 0.0;
    for (double a : all) var += (a - mean) * (a - mean);
    var /= spec.population_std ? static_cast<double>(all.size())
                               : std::max<double>(1.0, static_cast<double>(all.size()) - 1.0);
    out += "mean," + fmt(mean) + "\n";
    out += "std," + fmt(std::sqrt(var)) + "\n";
    if (confusion_out) *confusion_out = confusion;
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-based pairwise transfer learning for EEG-style feature data"};
    app.require_subcommand(1);
    app.set_config("--config", "", "line-oriented key=value config file with [sections]");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // ---- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic domain-shift dataset pair");
    prpl::SyntheticSpec synth_spec;
    std::uint64_t synth_seed = 0;
    std::string out_source = "synth_source.csv", out_target = "synth_target.csv";
    synth->add_option("--classes", synth_spec.n_classes)->capture_default_str();
    synth->add_option("--dim", synth_spec.dim)->capture_default_str();
    synth->add_option("--samples-per-class", synth_spec.samples_per_class)->capture_default_str();
    synth->add_option("--mean-spread", synth_spec.mean_spread)->capture_default_str();
    synth->add_option("--within-sigma", synth_spec.within_sigma)->capture_default_str();
    synth->add_option("--rotation-deg", synth_spec.rotation_deg)->capture_default_str();
    synth->add_option("--translation-sigma", synth_spec.translation_sigma)->capture_default_str();
    synth->add_option("--noise-sigma", synth_spec.target_noise_sigma)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--out-source", out_source)->capture_default_str();
    synth->add_option("--out-target", out_target)->capture_default_str();

    // ---- preprocess
    auto* prep = app.add_subcommand("preprocess", "raw signal -> band DE features (+ smoothing)");
    std::string prep_input, prep_output = "features.csv";
    double window_s = 1.0, lds_q = -1.0, lds_r = -1.0;
    bool no_lds = false;
    std::vector<std::string> band_strs;
    prep->add_option("--input", prep_input, "raw recording file")->required();
    prep->add_option("--output", prep_output)->capture_default_str();
    prep->add_option("--window", window_s, "segment length, seconds")->capture_default_str();
    prep->add_option("--band", band_strs, "band as lo:hi Hz (repeatable; default 5 EEG bands)");
    prep->add_flag("--no-lds", no_lds, "skip temporal smoothing");
    prep->add_option("--lds-q", lds_q, "process noise (default 0.01 x column variance)");
    prep->add_option("--lds-r", lds_r, "observation noise (default column variance)");

    // ---- train
    auto* train = app.add_subcommand("train", "single fit: labeled source, unlabeled target");
    CommonOpts train_opts;
    std::string train_source, train_target;
    train->add_option("--source", train_source, "labeled source dataset")->required();
    train->add_option("--target", train_target, "target dataset (labels used only for reporting)")
        ->required();
    train->add_option("--outdir", train_opts.outdir)->capture_default_str();
    train->add_option("--seed", train_opts.train.seed)->capture_default_str();
    add_train_options(train, train_opts.train);

    // ---- protocol
    auto* proto = app.add_subcommand("protocol", "cross-validation protocol evaluation");
    CommonOpts proto_opts;
    std::string proto_data, proto_kind = "cross_subject_single_session";
    prpl::ProtocolSpec proto_spec;
    double proto_eta = 0.0;
    bool sample_std = false;
    proto->add_option("--data", proto_data, "dataset with subject/session/trial ids")->required();
    proto->add_option("--kind", proto_kind,
                      "cross_subject_cross_session|cross_subject_single_session|"
                      "within_subject_cross_session|within_subject_single_session")
        ->capture_default_str();
    proto->add_option("--source-trials", proto_spec.source_trials)->capture_default_str();
    proto->add_flag("--sample-std", sample_std, "divide by F-1 instead of F");
    proto->add_option("--eta", proto_eta, "source label noise percentage")->capture_default_str();
    proto->add_option("--outdir", proto_opts.outdir)->capture_default_str();
    proto->add_option("--seeds", proto_opts.seeds, "seed list")->capture_default_str();
    add_train_options(proto, proto_opts.train);

    // ---- noise-sweep
    auto* sweep = app.add_subcommand("noise-sweep", "protocol under source label noise levels");
    CommonOpts sweep_opts;
    std::string sweep_data, sweep_kind = "cross_subject_single_session";
    prpl::ProtocolSpec sweep_spec;
    std::vector<double> etas = {10.0, 20.0, 30.0};
    bool sweep_sample_std = false;
    sweep->add_option("--data", sweep_data)->required();
    sweep->add_option("--kind", sweep_kind)->capture_default_str();
    sweep->add_option("--source-trials", sweep_spec.source_trials)->capture_default_str();
    sweep->add_flag("--sample-std", sweep_sample_std);
    sweep->add_option("--etas", etas, "noise percentages")->capture_default_str();
    sweep->add_option("--outdir", sweep_opts.outdir)->capture_default_str();
    sweep->add_option("--seeds", sweep_opts.seeds)->capture_default_str();
    add_train_options(sweep, sweep_opts.train);

    // ---- gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of the gradients");
    std::uint64_t gc_seed = 1;
    double gc_tol = 1e-4;
    std::size_t gc_instances = 10;
    prpl::GradCheckDims gc_dims;
    std::string gc_outdir;
    gc->add_option("--seed", gc_seed)->capture_default_str();
    gc->add_option("--tolerance", gc_tol)->capture_default_str();
    gc->add_option("--instances", gc_instances)->capture_default_str();
    gc->add_option("--d-in", gc_dims.d_in)->capture_default_str();
    gc->add_option("--samples", gc_dims.n_per_domain)->capture_default_str();
    gc->add_option("--classes", gc_dims.n_classes)->capture_default_str();
    gc->add_option("--outdir", gc_outdir, "optional report directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto [src, tgt] = prpl::generate_synthetic(synth_spec, synth_seed);
            prpl::save_dataset(src, out_source);
            prpl::save_dataset(tgt, out_target);
            std::cout << out_source << " " << src.size() << " samples\n";
            std::cout << out_target << " " << tgt.size() << " samples\n";
            return 0;
        }

        if (*prep) {
            std::vector<prpl::Band> bands;
            for (const auto& s : band_strs) {
                const auto pos = s.find(':');
                if (pos == std::string::npos)
                    throw std::runtime_error("--band expects lo:hi, got '" + s + "'");
                bands.push_back({std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))});
            }
            if (bands.empty()) bands = prpl::default_bands();
            const auto rec = prpl::load_recording(prep_input);
            auto ds = prpl::compute_de_features(rec, bands, window_s);
            if (!no_lds) ds.features = prpl::lds_smooth(ds.features, lds_q, lds_r);
            prpl::save_dataset(ds, prep_output);
            std::cout << prep_output << " " << ds.size() << " samples x " << ds.dim()
                      << " features\n";
            return 0;
        }

        if (*train) {
            ensure_dir(train_opts.outdir);
            const auto source = prpl::load_dataset(train_source);
            const auto target = prpl::load_dataset(train_target);
            // Target labels stay in this closure; fit sees features only.
            prpl::EvalCallback eval = [&](const prpl::ModelParams& p,
                                          const prpl::PrototypeSet& protos) {
                const auto preds = prpl::predict(p, protos, target.features);
                std::size_t hits = 0;
                for (std::size_t i = 0; i < preds.size(); ++i)
                    if (preds[i] == target.labels[i]) ++hits;
                return static_cast<double>(hits) / static_cast<double>(preds.size());
            };
            const auto result = prpl::fit(train_opts.train, source, target.features, eval);
            write_text(train_opts.outdir + "/history.csv", history_csv(result.history));
            std::string metrics = "metric,value\n";
            if (!result.history.epochs.empty()) {
                metrics += "final_source_accuracy," +
                           fmt(result.history.epochs.back().source_accuracy) + "\n";
                metrics += "final_target_accuracy," +
                           fmt(result.history.epochs.back().target_accuracy) + "\n";
            }
            write_text(train_opts.outdir + "/metrics.csv", metrics);
            write_text(train_opts.outdir + "/resolved_config.txt", app.config_to_str(true, true));
            std::cout << "wrote " << train_opts.outdir << "/history.csv and metrics.csv\n";
            return 0;
        }

        if (*proto) {
            ensure_dir(proto_opts.outdir);
            proto_spec.kind = parse_kind(proto_kind);
            proto_spec.population_std = !sample_std;
            const auto data = prpl::load_dataset(proto_data);
            prpl::Matrix confusion;
            const std::string metrics = protocol_metrics_csv(proto_opts.train, proto_opts.seeds,
                                                             data, proto_spec, proto_eta,
                                                             &confusion);
            write_text(proto_opts.outdir + "/metrics.csv", metrics);
            write_text(proto_opts.outdir + "/confusion.csv", confusion_csv(confusion));
            write_text(proto_opts.outdir + "/resolved_config.txt", app.config_to_str(true, true));
            std::cout << metrics;
            return 0;
        }

        if (*sweep) {
            ensure_dir(sweep_opts.outdir);
            sweep_spec.kind = parse_kind(sweep_kind);
            sweep_spec.population_std = !sweep_sample_std;
            const auto data = prpl::load_dataset(sweep_data);
            std::string summary = "eta,mean,std\n";
            for (double eta : etas) {
                prpl::Matrix confusion;
                const std::string metrics = protocol_metrics_csv(
                    sweep_opts.train, sweep_opts.seeds, data, sweep_spec, eta, &confusion);
                const std::string tag = "eta" + std::to_string(static_cast<int>(eta));
                write_text(sweep_opts.outdir + "/metrics_" + tag + ".csv", metrics);
                write_text(sweep_opts.outdir + "/confusion_" + tag + ".csv",
                           confusion_csv(confusion));
                // metrics ends with "mean,<v>\nstd,<v>\n"
                const auto mpos = metrics.rfind("mean,");
                const auto spos = metrics.rfind("std,");
                summary += std::to_string(static_cast<int>(eta)) + "," +
                           metrics.substr(mpos + 5, metrics.find('\n', mpos) - mpos - 5) + "," +
                           metrics.substr(spos + 4, metrics.find('\n', spos) - spos - 4) + "\n";
            }
            write_text(sweep_opts.outdir + "/summary.csv", summary);
            write_text(sweep_opts.outdir + "/resolved_config.txt", app.config_to_str(true, true));
            std::cout << summary;
            return 0;
        }

        if (*gc) {
            double max_err = 0.0;
            bool pass = true;
            for (std::size_t k = 0; k < gc_instances; ++k) {
                const auto report = prpl::gradient_check(gc_seed + k, gc_dims, gc_tol);
                max_err = std::max(max_err, report.max_rel_error);
                pass = pass && report.pass;
            }
            const std::string line = std::string(pass ? "PASS" : "FAIL") +
                                     " max_rel_err=" + fmt(max_err) + "\n";
            std::cout << line;
            if (!gc_outdir.empty()) {
                ensure_dir(gc_outdir);
                write_text(gc_outdir + "/gradcheck.txt", line);
                write_text(gc_outdir + "/resolved_config.txt", app.config_to_str(true, true));
            }
            return pass ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
