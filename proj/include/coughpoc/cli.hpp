/* Copyright 2026 The coughpoc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/dsp.hpp"
#include "coughpoc/error.hpp"
#include "coughpoc/features.hpp"
#include "coughpoc/model_io.hpp"
#include "coughpoc/nn.hpp"
#include "coughpoc/pipeline.hpp"
#include "coughpoc/service.hpp"
#include "coughpoc/synth.hpp"

// Operator command line: synth, analyze, features, train, eval, gradcheck,
// serve. Exit codes: 0 success, 1 invalid input or arguments, 2 runtime
// failure.

namespace coughpoc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr double kMlpGradTolerance = 1e-4;
inline constexpr double kCnnGradTolerance = 1e-3;

namespace cli_detail {

struct Globals {
  std::uint64_t seed = 7;
  bool verbose = false;
  bool json = false;
};

class Logger {
 public:
  Logger(std::ostream& err, bool verbose) : err_(err), verbose_(verbose), t0_(std::chrono::steady_clock::now()) {}
  void info(const std::string& msg) const { err_ << msg << '\n'; }
  void debug(const std::string& msg) const {
    if (!verbose_) return;
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    err_ << "[" << std::fixed << std::setprecision(2) << t << "s] " << msg << '\n';
    err_.unsetf(std::ios::fixed);
  }

 private:
  std::ostream& err_;
  bool verbose_;
  std::chrono::steady_clock::time_point t0_;
};

inline void print_config(std::ostream& err, const std::string& command, const Globals& g, nlohmann::json opts) {
  opts["seed"] = g.seed;
  opts["verbose"] = g.verbose;
  opts["json"] = g.json;
  err << "resolved config: " << nlohmann::json{{"command", command}, {"options", opts}}.dump() << '\n';
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void print_metrics_table(std::ostream& out, const Metrics& m) {
  out << std::fixed << std::setprecision(4);
  out << "accuracy " << m.accuracy << "\n";
  if (m.false_alarm_rate) out << "false alarm rate " << *m.false_alarm_rate << "\n";
  out << std::left << std::setw(14) << "class" << std::right << std::setw(13) << "sensitivity" << std::setw(13)
      << "specificity" << "\n";
  for (std::size_t k = 0; k < m.classes.size(); ++k) {
    out << std::left << std::setw(14) << m.classes[k] << std::right << std::setw(13) << m.sensitivity[k]
        << std::setw(13) << m.specificity[k] << "\n";
  }
  out << "confusion (rows actual, columns predicted)\n";
  for (std::size_t a = 0; a < m.confusion.size(); ++a) {
    out << std::left << std::setw(14) << m.classes[a] << std::right;
    for (auto v : m.confusion[a]) out << std::setw(6) << v;
    out << "\n";
  }
  out.unsetf(std::ios::fixed);
  out << std::setprecision(6);
}

inline std::pair<std::string, int> parse_listen(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--listen must be host:port");
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("--listen port is not a number");
  }
  if (host.empty() || port < 0 || port > 65535) throw ValidationError("--listen must be host:port");
  return {host, port};
}

}  // namespace cli_detail

/// Runs the command line. All output goes to `out` (results) and `err`
/// (resolved config, progress and diagnostics).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using cli_detail::Globals;

  CLI::App app{"coughpoc - cough detection, feature fusion and illness-class scoring"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_help_all_flag("--help-all", "Expand all help");
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Timed progress on stderr");
  app.add_flag("--json", g.json, "Machine-readable JSON on stdout");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  std::size_t synth_n = 200;
  double synth_snr = 10.0;
  std::string synth_out;
  synth->add_option("--n", synth_n, "Number of clips")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--snr", synth_snr, "Background noise level in dB below mean cough power")->capture_default_str();
  synth->add_option("--out", synth_out, "Corpus directory")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Detect and describe coughs in one WAV file");
  std::string an_wav, an_mfcc_csv, an_logmel_csv, an_model, an_meta;
  double an_theta = 1.0;
  analyze->add_option("wav", an_wav, "Input WAV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--mfcc-csv", an_mfcc_csv, "Also write the clip's MFCC matrix as CSV");
  analyze->add_option("--logmel-csv", an_logmel_csv, "Also write the clip's log-mel matrix as CSV");
  analyze->add_option("--threshold", an_theta, "Wet/dry ratio threshold")->capture_default_str();
  analyze->add_option("--model", an_model, "Score the clip with this model")->check(CLI::ExistingFile);
  analyze->add_option("--meta", an_meta, "Sensor JSON used with --model, e.g. {\"temp_c\":38.9}");

  // features
  auto* features = app.add_subcommand("features", "Write fused per-cough feature rows of a manifest as CSV");
  std::string ft_manifest, ft_out;
  features->add_option("--manifest", ft_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  features->add_option("--out", ft_out, "Output CSV")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a classifier on a manifest (stratified split)");
  std::string tr_manifest, tr_out, tr_arch = "mlp";
  TrainConfig tcfg;
  std::vector<std::size_t> tr_hidden{32, 16};
  std::size_t tr_frames = 64;
  std::vector<std::size_t> tr_channels{8, 16};
  train->add_option("--manifest", tr_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Model file to write")->required();
  train->add_option("--arch", tr_arch, "mlp or cnn")->capture_default_str()->check(CLI::IsMember({"mlp", "cnn"}));
  train->add_option("--epochs", tcfg.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", tcfg.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--batch", tcfg.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--l2", tcfg.l2, "L2 weight penalty")->capture_default_str();
  train->add_option("--train-fraction", tcfg.train_fraction, "Share of each class used for training")
      ->capture_default_str();
  train->add_option("--hidden", tr_hidden, "MLP hidden layer widths (at least two)")->capture_default_str();
  train->add_option("--frames", tr_frames, "CNN input frames (25 ms each)")->capture_default_str();
  train->add_option("--channels", tr_channels, "CNN channels per conv stage")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a manifest");
  std::string ev_model, ev_manifest, ev_split = "auto";
  eval->add_option("--model", ev_model, "Model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", ev_split,
                   "test: held-out part of the training split; all: every entry; auto: test when the model records "
                   "its split")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "test", "all"}));

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  std::string gc_arch = "both";
  std::size_t gc_samples = 200;
  gradcheck->add_option("--arch", gc_arch, "mlp, cnn or both")
      ->capture_default_str()
      ->check(CLI::IsMember({"mlp", "cnn", "both"}));
  gradcheck->add_option("--samples", gc_samples, "Parameters probed per model")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the ingestion and report HTTP service");
  std::string sv_listen = "127.0.0.1:8080", sv_model, sv_store = "store";
  double sv_max_seconds = 60.0;
  serve->add_option("--listen", sv_listen, "host:port")->capture_default_str()->envname("COUGHPOC_LISTEN");
  serve->add_option("--model", sv_model, "Model file (without one the service reports degraded)")
      ->envname("COUGHPOC_MODEL");
  serve->add_option("--store", sv_store, "Store directory")->capture_default_str()->envname("COUGHPOC_STORE");
  serve->add_option("--max-clip-seconds", sv_max_seconds, "Longest accepted clip")
      ->capture_default_str()
      ->envname("COUGHPOC_MAX_CLIP_SECONDS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  const cli_detail::Logger log(err, g.verbose);
  try {
    if (*synth) {
      cli_detail::print_config(err, "synth", g, {{"n", synth_n}, {"snr_db", synth_snr}, {"out", synth_out}});
      CorpusOptions opts;
      opts.n_clips = synth_n;
      opts.snr_db = synth_snr;
      opts.seed = g.seed;
      const auto manifest = synth_corpus(opts, synth_out);
      std::map<std::string, std::size_t> counts;
      for (const auto& e : manifest.entries) ++counts[e.label];
      if (g.json) {
        out << nlohmann::json{{"out", synth_out}, {"clips", manifest.entries.size()}, {"labels", counts}}.dump() << "\n";
      } else {
        out << "wrote " << manifest.entries.size() << " clips to " << synth_out << "\n";
        for (const auto& [label, n] : counts) out << "  " << label << ": " << n << "\n";
      }
      return kExitOk;
    }

    if (*analyze) {
      cli_detail::print_config(err, "analyze", g,
                               {{"wav", an_wav},
                                {"threshold", an_theta},
                                {"mfcc_csv", an_mfcc_csv},
                                {"logmel_csv", an_logmel_csv},
                                {"model", an_model},
                                {"meta", an_meta}});
      const AudioClip clip = load_wav(an_wav);
      AnalysisOptions opts;
      opts.wet_dry_threshold = an_theta;
      const auto analysis = analyze_clip(clip, opts);
      auto j = analysis_to_json(analysis);
      if (!an_model.empty()) {
        const auto model = load_model(an_model);
        SensorRecord sensor;
        if (!an_meta.empty()) {
          try {
            sensor = sensor_from_json(nlohmann::json::parse(an_meta));
          } catch (const nlohmann::json::parse_error&) {
            throw ValidationError("--meta is not valid JSON");
          }
        }
        const auto mem = predict_clip(model, analysis, sensor);
        nlohmann::json mj = nullptr;
        if (mem) {
          mj = nlohmann::json::object();
          for (std::size_t k = 0; k < mem->size(); ++k) mj[model.classes[k]] = (*mem)[k];
          j["diagnosis"] = model.classes[detail::argmax(*mem)];
        } else {
          j["diagnosis"] = nullptr;
        }
        j["memberships"] = mj;
      }
      if (!an_mfcc_csv.empty()) {
        std::ostringstream csv;
        std::vector<std::string> header;
        for (int k = 2; k <= 13; ++k) header.push_back("c" + std::to_string(k));
        write_csv(csv, mfcc(analysis.clip, MfccConfig{}), header);
        cli_detail::write_text_file(an_mfcc_csv, csv.str());
      }
      if (!an_logmel_csv.empty()) {
        std::ostringstream csv;
        std::vector<std::string> header;
        for (int k = 0; k < 26; ++k) header.push_back("band" + std::to_string(k));
        write_csv(csv, log_mel_spectrogram(analysis.clip, FrameSpec{}, 26), header);
        cli_detail::write_text_file(an_logmel_csv, csv.str());
      }
      out << j.dump(g.json ? -1 : 2) << "\n";
      return kExitOk;
    }

    if (*features) {
      cli_detail::print_config(err, "features", g, {{"manifest", ft_manifest}, {"out", ft_out}});
      const auto manifest = load_manifest(ft_manifest);
      const auto ds = build_dataset(manifest);
      std::ofstream csv(ft_out, std::ios::trunc);
      if (!csv) throw std::runtime_error("cannot write " + ft_out);
      csv << std::setprecision(17) << "id,label";
      for (const auto& n : fused_names()) csv << "," << n;
      csv << "\n";
      for (std::size_t r = 0; r < ds.rows.rows(); ++r) {
        csv << ds.clip_ids[r] << "," << manifest.classes[static_cast<std::size_t>(ds.labels[r])];
        for (double v : ds.rows.row(r)) csv << "," << v;
        csv << "\n";
      }
      if (g.json) {
        out << nlohmann::json{{"rows", ds.rows.rows()}, {"skipped_clips", ds.skipped_clips}, {"out", ft_out}}.dump()
            << "\n";
      } else {
        out << "wrote " << ds.rows.rows() << " rows to " << ft_out << " (" << ds.skipped_clips
            << " clips without a detected cough)\n";
      }
      return kExitOk;
    }

    if (*train) {
      tcfg.seed = g.seed;
      const nlohmann::json cfg_json = {{"manifest", tr_manifest},
                                       {"out", tr_out},
                                       {"arch", tr_arch},
                                       {"epochs", tcfg.epochs},
                                       {"lr", tcfg.learning_rate},
                                       {"batch", tcfg.batch_size},
                                       {"l2", tcfg.l2},
                                       {"train_fraction", tcfg.train_fraction},
                                       {"hidden", tr_hidden},
                                       {"frames", tr_frames},
                                       {"channels", tr_channels}};
      cli_detail::print_config(err, "train", g, cfg_json);
      tcfg.validate();
      const bool cnn = tr_arch == "cnn";
      const auto manifest = load_manifest(tr_manifest);
      const auto [train_m, test_m] = split_dataset(manifest, tcfg.train_fraction, g.seed);
      log.info("split: " + std::to_string(train_m.entries.size()) + " training clips, " +
               std::to_string(test_m.entries.size()) + " held-out clips");

      // Held-out clips are not read until the model and normalizer are fixed.
      log.debug("extracting training features");
      const auto train_ds = build_dataset(train_m, cnn, tr_frames);
      Classifier clf;
      clf.classes = manifest.classes;
      TrainResult<MlpModel> mlp_res;
      TrainResult<CnnModel> cnn_res;
      const std::vector<double>* curve = nullptr;
      int rejected = 0;
      double final_lr = 0.0;
      if (cnn) {
        CnnArch arch;
        arch.input_frames = tr_frames;
        arch.channels = tr_channels;
        arch.n_classes = manifest.classes.size();
        log.debug("training CNN on " + std::to_string(train_ds.spectrograms.size()) + " spectrograms");
        cnn_res = train_cnn(train_ds.spectrograms, train_ds.labels, tcfg, arch);
        clf.net = cnn_res.model;
        curve = &cnn_res.loss_curve;
        rejected = cnn_res.rejected_epochs;
        final_lr = cnn_res.final_learning_rate;
      } else {
        const auto norm = fit_normalizer(train_ds.rows);
        log.info("normalizer fitted on " + std::to_string(train_ds.rows.rows()) + " training rows only");
        log.debug("training MLP");
        mlp_res = train_mlp(norm.apply(train_ds.rows), train_ds.labels, tcfg, tr_hidden, manifest.classes.size());
        clf.net = mlp_res.model;
        clf.normalizer = norm;
        curve = &mlp_res.loss_curve;
        rejected = mlp_res.rejected_epochs;
        final_lr = mlp_res.final_learning_rate;
      }
      clf.training = cfg_json;
      clf.training["seed"] = g.seed;
      save_model(clf, tr_out);

      log.debug("extracting held-out features");
      const auto test_ds = build_dataset(test_m, cnn, tr_frames);
      const Metrics m = cnn ? evaluate(clf.cnn(), test_ds.spectrograms, test_ds.labels, manifest.classes)
                            : evaluate(clf.mlp(), clf.normalizer->apply(test_ds.rows), test_ds.labels, manifest.classes);
      const nlohmann::json summary = {
          {"model", tr_out},
          {"model_version", clf.version()},
          {"split",
           {{"train_clips", train_m.entries.size()},
            {"test_clips", test_m.entries.size()},
            {"train_rows", train_ds.labels.size()},
            {"test_rows", test_ds.labels.size()},
            {"skipped_clips", train_ds.skipped_clips + test_ds.skipped_clips}}},
          {"training",
           {{"initial_loss", curve->front()},
            {"final_loss", curve->back()},
            {"rejected_epochs", rejected},
            {"final_learning_rate", final_lr}}},
          {"metrics", m.to_json()}};
      if (g.json) {
        out << summary.dump() << "\n";
      } else {
        out << "model " << tr_out << " (" << clf.version() << ")\n";
        out << "loss " << curve->front() << " -> " << curve->back() << " over " << tcfg.epochs << " epochs\n";
        out << "held-out rows " << test_ds.labels.size() << "\n";
        cli_detail::print_metrics_table(out, m);
      }
      return kExitOk;
    }

    if (*eval) {
      cli_detail::print_config(err, "eval", g, {{"model", ev_model}, {"manifest", ev_manifest}, {"split", ev_split}});
      const auto clf = load_model(ev_model);
      auto manifest = load_manifest(ev_manifest);
      if (manifest.classes != clf.classes) {
        throw ValidationError("manifest classes do not match the model's classes");
      }
      std::string split = ev_split;
      if (split == "auto") split = clf.training.is_object() ? "test" : "all";
      if (split == "test") {
        if (!clf.training.is_object()) throw ValidationError("model does not record its training split");
        const auto seed = clf.training.at("seed").get<std::uint64_t>();
        const auto frac = clf.training.at("train_fraction").get<double>();
        manifest = split_dataset(manifest, frac, seed).second;
        log.info("evaluating the held-out split (seed " + std::to_string(seed) + ")");
      }
      const std::size_t frames = clf.is_cnn() ? clf.cnn().arch.input_frames : 64;
      const auto ds = build_dataset(manifest, clf.is_cnn(), frames);
      const Metrics m =
          clf.is_cnn() ? evaluate(clf.cnn(), ds.spectrograms, ds.labels, clf.classes)
                       : evaluate(clf.mlp(), clf.normalizer ? clf.normalizer->apply(ds.rows) : ds.rows, ds.labels,
                                  clf.classes);
      if (g.json) {
        out << nlohmann::json{{"split", split}, {"rows", ds.labels.size()}, {"metrics", m.to_json()}}.dump() << "\n";
      } else {
        out << "split " << split << ", rows " << ds.labels.size() << "\n";
        cli_detail::print_metrics_table(out, m);
      }
      return kExitOk;
    }

    if (*gradcheck) {
      cli_detail::print_config(err, "gradcheck", g, {{"arch", gc_arch}, {"samples", gc_samples}});
      std::mt19937_64 rng(g.seed);
      std::normal_distribution<double> nd(0.0, 1.0);
      nlohmann::json result = nlohmann::json::object();
      bool ok = true;
      if (gc_arch != "cnn") {
        Matrix rows(12, kFusedDim);
        for (std::size_t r = 0; r < rows.rows(); ++r) {
          for (auto& v : rows.row(r)) v = nd(rng);
        }
        std::vector<int> labels;
        for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
        const auto model = MlpModel::create({kFusedDim, 8, 6, 3}, g.seed);
        const double e = gradient_check(model, rows, labels, 1e-3, gc_samples);
        result["mlp"] = {{"max_relative_error", e}, {"tolerance", kMlpGradTolerance}, {"pass", e < kMlpGradTolerance}};
        ok = ok && e < kMlpGradTolerance;
      }
      if (gc_arch != "mlp") {
        CnnArch arch;
        arch.input_frames = 12;
        arch.input_bands = 10;
        arch.channels = {2, 3};
        std::vector<Matrix> inputs;
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i) {
          Matrix x(arch.input_frames, arch.input_bands);
          for (std::size_t r = 0; r < x.rows(); ++r) {
            for (auto& v : x.row(r)) v = nd(rng);
          }
          inputs.push_back(std::move(x));
          labels.push_back(i % 3);
        }
        const auto model = CnnModel::create(arch, g.seed);
        const double e = gradient_check(model, inputs, labels, 1e-3, gc_samples);
        result["cnn"] = {{"max_relative_error", e}, {"tolerance", kCnnGradTolerance}, {"pass", e < kCnnGradTolerance}};
        ok = ok && e < kCnnGradTolerance;
      }
      if (g.json) {
        out << result.dump() << "\n";
      } else {
        for (const auto& [name, r] : result.items()) {
          out << name << ": max relative error " << r["max_relative_error"].get<double>() << " (tolerance "
              << r["tolerance"].get<double>() << ") " << (r["pass"].get<bool>() ? "PASS" : "FAIL") << "\n";
        }
      }
      return ok ? kExitOk : kExitRuntime;
    }

    if (*serve) {
      cli_detail::print_config(err, "serve", g,
                               {{"listen", sv_listen},
                                {"model", sv_model},
                                {"store", sv_store},
                                {"max_clip_seconds", sv_max_seconds}});
      const auto [host, port] = cli_detail::parse_listen(sv_listen);
      if (!(sv_max_seconds > 0.0)) throw ValidationError("--max-clip-seconds must be positive");
      std::optional<Classifier> model;
      if (!sv_model.empty()) model = load_model(sv_model);
      PocService service(ServiceConfig{sv_store, sv_max_seconds}, std::move(model));
      httplib::Server srv;
      service.mount(srv);
      srv.set_payload_max_length(64u << 20);
      log.info("listening on " + host + ":" + std::to_string(port) +
               (sv_model.empty() ? " without a model (degraded)" : ""));
      if (!srv.listen(host, port)) throw std::runtime_error("cannot listen on " + sv_listen);
      return kExitOk;
    }
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInvalid;
}

}  // namespace coughpoc
