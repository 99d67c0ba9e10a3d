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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>

#include "coughpoc/model_io.hpp"
#include "coughpoc/pipeline.hpp"
#include "coughpoc/service.hpp"
#include "coughpoc/synth.hpp"
#include "test_util.hpp"

using namespace coughpoc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

constexpr std::uint64_t kSeed = 7;
constexpr std::size_t kCorpusClips = 200;

// Shared state built once by the corpus-based criteria.
struct Shared {
  fs::path corpus;
  DatasetManifest manifest;
  std::optional<Classifier> model;
  Matrix test_rows;  // raw fused rows of the held-out split
};

Outcome mfcc_oracle() {
  double worst = 0.0, pipeline_s = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto x = testutil::white_noise(kCanonicalRateHz, 1000 + i, 0.5);
    AudioClip clip;
    clip.samples = x;
    const auto t0 = Clock::now();
    const auto m = mfcc(clip);
    pipeline_s += seconds_since(t0);
    const auto ref = testutil::oracle_mfcc(x);
    if (m.rows() != ref.size() || m.cols() != 12) return {false, "shape mismatch"};
    for (std::size_t r = 0; r < ref.size(); ++r) {
      for (std::size_t c = 0; c < 12; ++c) worst = std::max(worst, rel_err(m(r, c), ref[r][c]));
    }
  }
  return {worst < 1e-6 && pipeline_s < 10.0,
          "max relative error " + fmt(worst, 3) + " (< 1e-6), pipeline time " + fmt(pipeline_s, 3) + " s (< 10 s)"};
}

Outcome mel_round_trip() {
  double worst = 0.0;
  for (int f = 1; f <= 11025; ++f) worst = std::max(worst, std::abs(mel_to_hz(hz_to_mel(f)) - f) / f);
  return {worst < 1e-9, "max relative error " + fmt(worst, 3) + " over 1..11025 Hz (< 1e-9)"};
}

Outcome parseval() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<std::size_t> len(32, 2048);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = len(rng);
    const auto x = testutil::white_noise(n, rng(), 1.0);
    const std::size_t nfft = next_power_of_two(n);
    const auto ps = periodogram(x, nfft);
    double sum = ps.bins.front() + ps.bins.back();
    for (std::size_t k = 1; k + 1 < ps.bins.size(); ++k) sum += 2.0 * ps.bins[k];
    long double energy = 0.0L;
    for (double v : x) energy += static_cast<long double>(v) * v;
    worst = std::max(worst, rel_err(sum, static_cast<double>(energy)));
  }
  return {worst < 1e-9, "max relative error " + fmt(worst, 3) + " on 100 frames (< 1e-9)"};
}

std::vector<std::pair<std::size_t, std::size_t>> truth_events(const nlohmann::json& coughs, int fs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : coughs) {
    out.emplace_back(static_cast<std::size_t>(std::llround(c["start_ms"].get<double>() * fs / 1000.0)),
                     static_cast<std::size_t>(std::llround(c["end_ms"].get<double>() * fs / 1000.0)));
  }
  return out;
}

// Detection and wet/dry on the on-disk corpus, scored against truth.jsonl.
std::pair<Outcome, Outcome> detection_and_wet_dry(Shared& sh) {
  const auto t0 = Clock::now();
  CorpusOptions opts;
  opts.n_clips = kCorpusClips;
  opts.snr_db = 10.0;
  opts.seed = kSeed;
  sh.manifest = synth_corpus(opts, sh.corpus);
  const double synth_s = seconds_since(t0);

  std::map<std::string, nlohmann::json> truth;
  {
    std::ifstream in(sh.corpus / "truth.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      truth[j["id"].get<std::string>()] = j["coughs"];
    }
  }

  const auto t1 = Clock::now();
  std::size_t detected = 0, reference = 0, matched = 0, wd_total = 0, wd_correct = 0;
  std::vector<double> errors;
  for (const auto& e : sh.manifest.entries) {
    const auto analysis = analyze_clip(load_wav(sh.manifest.wav_path(e).string()));
    std::vector<std::pair<std::size_t, std::size_t>> det;
    for (const auto& c : analysis.coughs) det.emplace_back(c.segment.start_sample, c.segment.end_sample);
    const auto& t = truth.at(e.id);
    const auto m = testutil::match_events(det, truth_events(t, analysis.clip.sample_rate_hz), analysis.clip.sample_rate_hz);
    detected += m.detected;
    reference += m.reference;
    matched += m.matched;
    errors.insert(errors.end(), m.boundary_errors_ms.begin(), m.boundary_errors_ms.end());
    // Every reference cough counts for wet/dry; a missed or unclassifiable
    // cough counts as wrong.
    wd_total += t.size();
    for (auto [ri, di] : m.pairs) {
      const auto& wd = analysis.coughs[di].wet_dry;
      if (wd && (wd->label == WetDryLabel::wet) == t[ri]["wet"].get<bool>()) ++wd_correct;
    }
  }
  const double detect_s = seconds_since(t1);
  const double precision = detected ? static_cast<double>(matched) / detected : 0.0;
  const double recall = reference ? static_cast<double>(matched) / reference : 0.0;
  const double med = testutil::median(errors);
  const double total_s = synth_s + detect_s;
  Outcome det{precision >= 0.95 && recall >= 0.95 && med <= 25.0 && total_s < 60.0,
              std::to_string(kCorpusClips) + " clips at 10 dB: precision " + fmt(precision) + ", recall " + fmt(recall) +
                  " (>= 0.95), median boundary error " + fmt(med, 3) + " ms (<= 25 ms), run time " + fmt(total_s, 3) +
                  " s (< 60 s; synthesis " + fmt(synth_s, 3) + " s)"};
  const double wd_acc = wd_total ? static_cast<double>(wd_correct) / wd_total : 0.0;
  Outcome wd{wd_acc >= 0.95, "accuracy " + fmt(wd_acc) + " on " + std::to_string(wd_total) + " coughs (>= 0.95)"};
  return {det, wd};
}

Outcome gradient_checks() {
  std::mt19937_64 rng(kSeed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix rows(12, kFusedDim);
  for (auto& v : rows.data()) v = nd(rng);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
  const auto mlp = MlpModel::create({kFusedDim, 8, 6, 3}, kSeed);
  const double e_mlp = gradient_check(mlp, rows, labels, 1e-3, 1000);

  CnnArch arch;
  arch.input_frames = 12;
  arch.input_bands = 10;
  arch.channels = {2, 3};
  std::vector<Matrix> inputs;
  std::vector<int> cl;
  for (int i = 0; i < 6; ++i) {
    Matrix x(12, 10);
    for (auto& v : x.data()) v = nd(rng);
    inputs.push_back(std::move(x));
    cl.push_back(i % 3);
  }
  const auto cnn = CnnModel::create(arch, kSeed);
  const double e_cnn = gradient_check(cnn, inputs, cl, 1e-3, 1000);
  return {e_mlp < 1e-4 && e_cnn < 1e-3,
          "MLP max relative error " + fmt(e_mlp, 3) + " (< 1e-4), CNN " + fmt(e_cnn, 3) + " (< 1e-3)"};
}

struct E2eRun {
  Classifier model;
  Metrics metrics;
  Matrix test_rows;
  double train_s = 0.0;
};

E2eRun train_and_evaluate(const DatasetManifest& manifest) {
  E2eRun run;
  TrainConfig cfg;
  cfg.seed = kSeed;
  const auto t0 = Clock::now();
  const auto [train_m, test_m] = split_dataset(manifest, 0.8, kSeed);
  const auto train_ds = build_dataset(train_m);
  const auto norm = fit_normalizer(train_ds.rows);
  const auto res = train_mlp(norm.apply(train_ds.rows), train_ds.labels, cfg, {32, 16}, manifest.classes.size());
  run.train_s = seconds_since(t0);
  run.model.net = res.model;
  run.model.classes = manifest.classes;
  run.model.normalizer = norm;
  run.model.training = {{"seed", kSeed}, {"train_fraction", 0.8}};
  const auto test_ds = build_dataset(test_m);
  run.test_rows = test_ds.rows;
  run.metrics = evaluate(res.model, norm.apply(test_ds.rows), test_ds.labels, manifest.classes);
  return run;
}

Outcome end_to_end(Shared& sh) {
  const auto a = train_and_evaluate(sh.manifest);
  const auto b = train_and_evaluate(sh.manifest);
  sh.model = a.model;
  sh.test_rows = a.test_rows;
  const bool same = a.metrics.to_json().dump() == b.metrics.to_json().dump() && a.model.mlp() == b.model.mlp();
  const double acc = a.metrics.accuracy;
  return {acc >= 0.90 && a.train_s < 300.0 && same,
          "held-out accuracy " + fmt(acc) + " (>= 0.90) on " + std::to_string(a.test_rows.rows()) +
              " coughs, training " + fmt(a.train_s, 3) + " s (< 300 s), second run " +
              (same ? "identical" : "DIFFERENT")};
}

Outcome service(const Shared& sh, const fs::path& store) {
  if (!sh.model) return {false, "no trained model"};
  std::vector<std::string> wavs;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto bytes = read_file_bytes(sh.manifest.wav_path(sh.manifest.entries[i]).string());
    wavs.emplace_back(bytes.begin(), bytes.end());
  }
  std::vector<std::string> problems;
  nlohmann::json before;
  std::string first_id;
  {
    PocService svc(ServiceConfig{store, 60.0}, sh.model);
    httplib::Server server;
    svc.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    std::vector<int> status(10, 0);
    std::vector<nlohmann::json> bodies(10);
    std::vector<std::thread> clients;
    for (std::size_t i = 0; i < 10; ++i) {
      clients.emplace_back([&, i] {
        httplib::Client cli("127.0.0.1", port);
        cli.set_read_timeout(120);
        httplib::MultipartFormDataItems items{{"audio", wavs[i], "clip.wav", "audio/wav"},
                                              {"meta", sensor_to_json(sh.manifest.entries[i].sensor).dump(), "", ""}};
        if (auto r = cli.Post("/v1/clips", items)) {
          status[i] = r->status;
          bodies[i] = nlohmann::json::parse(r->body);
        }
      });
    }
    for (auto& t : clients) t.join();
    for (std::size_t i = 0; i < 10; ++i) {
      if (status[i] != 200) {
        problems.push_back("upload " + std::to_string(i) + " returned " + std::to_string(status[i]));
        continue;
      }
      double sum = 0.0;
      for (const auto& [k, v] : bodies[i]["memberships"].items()) sum += v.get<double>();
      if (std::abs(sum - 1.0) > 1e-6) problems.push_back("memberships sum to " + fmt(sum, 12));
    }
    if (problems.empty()) {
      first_id = bodies[0]["record_id"];
      httplib::Client cli("127.0.0.1", port);
      httplib::MultipartFormDataItems items{{"audio", wavs[0], "clip.wav", "audio/wav"},
                                            {"meta", sensor_to_json(sh.manifest.entries[0].sensor).dump(), "", ""}};
      auto dup = cli.Post("/v1/clips", items);
      if (!dup || nlohmann::json::parse(dup->body)["record_id"] != first_id) problems.push_back("duplicate not idempotent");
      for (std::size_t i = 0; i < 4; ++i) cli.Post("/v1/reports/" + bodies[i]["record_id"].get<std::string>() + "/submit");
      auto health = cli.Get("/v1/health");
      if (!health || nlohmann::json::parse(health->body)["record_count"] != 10) problems.push_back("record count != 10");
    }
    before = svc.list_reports("").body;
    server.stop();
    th.join();
  }
  PocService again(ServiceConfig{store, 60.0}, sh.model);
  const auto after = again.list_reports("").body;
  const bool replayed = after == before;
  if (!replayed) problems.push_back("replayed state differs");
  const auto submitted = again.list_reports("submitted").body["count"];
  if (submitted != 4) problems.push_back("expected 4 submitted after replay");
  std::string detail = problems.empty() ? "10 concurrent uploads ok, memberships sum to 1 within 1e-6, duplicate "
                                          "upload idempotent, restart replays " +
                                              std::to_string(after["count"].get<int>()) + " records identically"
                                        : "";
  for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  return {problems.empty(), detail};
}

Outcome model_round_trip(const Shared& sh, const fs::path& path) {
  if (!sh.model) return {false, "no trained model"};
  save_model(*sh.model, path);
  const auto back = load_model(path);
  const auto& pa = sh.model->params();
  const auto& pb = back.params();
  bool bits = pa.size() == pb.size() && sh.model->normalizer == back.normalizer;
  std::size_t n_params = 0;
  for (std::size_t b = 0; bits && b < pa.size(); ++b) {
    bits = pa[b].size() == pb[b].size() &&
           std::memcmp(pa[b].data(), pb[b].data(), pa[b].size() * sizeof(double)) == 0;
    n_params += pa[b].size();
  }
  bool preds = true;
  for (std::size_t r = 0; r < sh.test_rows.rows(); ++r) {
    preds = preds && sh.model->predict_fused(sh.test_rows.row(r)) == back.predict_fused(sh.test_rows.row(r));
  }
  return {bits && preds, std::to_string(n_params) + " parameters " + (bits ? "bit-exact" : "DIFFER") + ", " +
                             std::to_string(sh.test_rows.rows()) + " predictions " + (preds ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coughpoc acceptance run"};
  std::string work = (fs::temp_directory_path() / "coughpoc-acceptance").string();
  app.add_option("--work-dir", work, "Scratch directory (recreated)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);
  Shared sh;
  sh.corpus = fs::path(work) / "corpus";

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  };

  report("mfcc-oracle", mfcc_oracle);
  report("mel-round-trip", mel_round_trip);
  report("periodogram-parseval", parseval);
  std::optional<Outcome> wet_dry;
  report("detection", [&] {
    auto [det, wd] = detection_and_wet_dry(sh);
    wet_dry = wd;
    return det;
  });
  report("wet-dry", [&] { return wet_dry ? *wet_dry : Outcome{false, "corpus run did not complete"}; });
  report("gradient-checks", gradient_checks);
  report("end-to-end-diagnosis", [&] { return end_to_end(sh); });
  report("service", [&] { return service(sh, fs::path(work) / "store"); });
  report("model-round-trip", [&] { return model_round_trip(sh, fs::path(work) / "model.bin"); });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
