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

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "coughpoc/audio.hpp"
#include "coughpoc/error.hpp"
#include "coughpoc/features.hpp"
#include "coughpoc/model_io.hpp"
#include "coughpoc/pipeline.hpp"

namespace coughpoc {

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline std::string sha256_hex(const std::string& s) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

/// 128 random bits rendered as 32 hex digits.
inline std::string random_record_id() {
  static thread_local std::random_device rd;
  char buf[33];
  std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", rd(), rd(), rd(), rd());
  return buf;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

/// Content-addressed, write-once blob directory.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::string put(std::span<const std::uint8_t> bytes) {
    const std::string hash = sha256_hex(bytes);
    const auto path = path_for(hash);
    if (std::filesystem::exists(path)) return hash;
    // Write under a unique temporary name, then rename into place.
    const auto tmp = dir_ / (hash + ".tmp." + random_record_id());
    write_file_bytes(tmp.string(), bytes);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      if (!std::filesystem::exists(path)) throw std::runtime_error("cannot store blob " + hash);
    }
    return hash;
  }

  std::vector<std::uint8_t> get(const std::string& hash) const {
    auto bytes = read_file_bytes(path_for(hash).string());
    if (sha256_hex(bytes) != hash) throw std::runtime_error("blob " + hash + " failed its content check");
    return bytes;
  }

 private:
  std::filesystem::path path_for(const std::string& hash) const { return dir_ / (hash + ".wav"); }
  std::filesystem::path dir_;
};

enum class RecordStatus { draft, submitted };

inline std::string_view to_string(RecordStatus s) { return s == RecordStatus::draft ? "draft" : "submitted"; }

/// Persisted, anonymized unit of analysis. Holds no names, coordinates or
/// device identifiers; the optional region is free text stored only with
/// explicit consent.
struct AnalysisRecord {
  std::string record_id;
  std::string created_at;
  std::string clip_ref;  // SHA-256 of the stored WAV
  SensorRecord sensor;
  nlohmann::json segments = nlohmann::json::array();
  std::vector<std::string> classes;
  MembershipVector memberships;
  std::optional<std::string> diagnosis;
  RecordStatus status = RecordStatus::draft;
  std::optional<std::string> consent_location;
  std::string model_version;
  std::string upload_key;  // hash of clip + sensor payload, for idempotency
  std::uint64_t revision = 1;

  nlohmann::json to_json() const {
    nlohmann::json mem = nlohmann::json::object();
    for (std::size_t i = 0; i < memberships.size() && i < classes.size(); ++i) mem[classes[i]] = memberships[i];
    return {{"record_id", record_id},
            {"created_at", created_at},
            {"clip_ref", clip_ref},
            {"sensor", sensor_to_json(sensor)},
            {"segments", segments},
            {"classes", classes},
            {"memberships", mem},
            {"diagnosis", diagnosis ? nlohmann::json(*diagnosis) : nlohmann::json(nullptr)},
            {"status", to_string(status)},
            {"consent_location", consent_location ? nlohmann::json(*consent_location) : nlohmann::json(nullptr)},
            {"model_version", model_version},
            {"upload_key", upload_key},
            {"revision", revision}};
  }

  // API view: the log entry minus internal bookkeeping.
  nlohmann::json view() const {
    auto j = to_json();
    j.erase("upload_key");
    return j;
  }

  static AnalysisRecord from_json(const nlohmann::json& j) {
    AnalysisRecord r;
    r.record_id = j.at("record_id").get<std::string>();
    r.created_at = j.at("created_at").get<std::string>();
    r.clip_ref = j.at("clip_ref").get<std::string>();
    r.sensor = sensor_from_json(j.at("sensor"));
    r.segments = j.at("segments");
    r.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& c : r.classes) {
      if (j.at("memberships").contains(c)) r.memberships.push_back(j["memberships"][c].get<double>());
    }
    if (!j.at("diagnosis").is_null()) r.diagnosis = j["diagnosis"].get<std::string>();
    r.status = j.at("status").get<std::string>() == "submitted" ? RecordStatus::submitted : RecordStatus::draft;
    if (!j.at("consent_location").is_null()) r.consent_location = j["consent_location"].get<std::string>();
    r.model_version = j.at("model_version").get<std::string>();
    r.upload_key = j.at("upload_key").get<std::string>();
    r.revision = j.at("revision").get<std::uint64_t>();
    return r;
  }
};

/// Append-only JSON Lines log of record versions. The latest line for an id
/// supersedes earlier ones; replaying the log rebuilds the index.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path dir) : log_path_(dir / "records.jsonl") {
    std::filesystem::create_directories(dir);
    replay();
    log_.open(log_path_, std::ios::app);
    if (!log_) throw std::runtime_error("cannot open record log " + log_path_.string());
  }

  // Inserts `candidate` unless a record with the same upload key exists;
  // returns the stored record and whether it was newly created.
  std::pair<AnalysisRecord, bool> insert_if_absent(const AnalysisRecord& candidate) {
    std::unique_lock lock(mu_);
    if (auto it = by_key_.find(candidate.upload_key); it != by_key_.end()) return {records_.at(it->second), false};
    append_locked(candidate);
    return {candidate, true};
  }

  std::optional<AnalysisRecord> find_by_key(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = by_key_.find(key);
    if (it == by_key_.end()) return std::nullopt;
    return records_.at(it->second);
  }

  std::optional<AnalysisRecord> get(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  /// draft -> submitted. A second call is a no-op returning the record.
  std::optional<AnalysisRecord> submit(const std::string& id) {
    std::unique_lock lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) return std::nullopt;
    if (it->second.status == RecordStatus::submitted) return it->second;
    AnalysisRecord next = it->second;
    next.status = RecordStatus::submitted;
    next.revision += 1;
    append_locked(next);
    return next;
  }

  std::vector<AnalysisRecord> list(std::optional<RecordStatus> status = std::nullopt) const {
    std::shared_lock lock(mu_);
    std::vector<AnalysisRecord> out;
    for (const auto& id : order_) {
      const auto& r = records_.at(id);
      if (!status || r.status == *status) out.push_back(r);
    }
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return records_.size();
  }

 private:
  void replay() {
    std::ifstream in(log_path_);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      AnalysisRecord r;
      try {
        r = AnalysisRecord::from_json(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        // A torn final write is tolerated; anything earlier is corruption.
        if (in.peek() == EOF) break;
        throw FormatError("record log line " + std::to_string(line_no) + ": " + e.what());
      }
      apply(std::move(r));
    }
  }

  void apply(AnalysisRecord r) {
    if (!records_.contains(r.record_id)) order_.push_back(r.record_id);
    by_key_[r.upload_key] = r.record_id;
    records_[r.record_id] = std::move(r);
  }

  void append_locked(const AnalysisRecord& r) {
    log_ << r.to_json().dump() << '\n';
    log_.flush();
    if (!log_) throw std::runtime_error("failed to append to record log");
    apply(r);
  }

  std::filesystem::path log_path_;
  std::ofstream log_;
  mutable std::shared_mutex mu_;
  std::map<std::string, AnalysisRecord> records_;
  std::map<std::string, std::string> by_key_;
  std::vector<std::string> order_;
};

struct ServiceConfig {
  std::filesystem::path store_dir = "store";
  double max_clip_seconds = 60.0;
};

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Ingestion and report service. Handlers are plain member functions so they
/// can be exercised without a socket; `mount` wires them to HTTP routes.
class PocService {
 public:
  PocService(ServiceConfig cfg, std::optional<Classifier> model)
      : cfg_(std::move(cfg)),
        model_(model ? std::make_shared<const Classifier>(std::move(*model)) : nullptr),
        blobs_(cfg_.store_dir / "blobs"),
        records_(cfg_.store_dir) {}

  static ServiceResponse error(int status, const std::string& detail) { return {status, {{"detail", detail}}}; }

  ServiceResponse handle_upload(const std::string& wav_bytes, const std::string& meta_text) const {
    if (!model_) return error(503, "model not loaded");

    nlohmann::json meta = nlohmann::json::object();
    if (!meta_text.empty()) {
      try {
        meta = nlohmann::json::parse(meta_text);
      } catch (const nlohmann::json::parse_error&) {
        return error(400, "meta is not valid JSON");
      }
    }
    SensorRecord sensor;
    std::optional<std::string> region;
    try {
      std::tie(sensor, region) = parse_meta(meta);
    } catch (const ValidationError& e) {
      return error(400, e.what());
    }

    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(wav_bytes.data()), wav_bytes.size());
    AudioClip clip;
    try {
      clip = parse_wav(bytes);
      validate_clip(clip);
    } catch (const std::exception& e) {
      return error(400, std::string("malformed WAV: ") + e.what());
    }
    if (clip.duration_s() > cfg_.max_clip_seconds) {
      return error(413, "clip longer than " + std::to_string(static_cast<int>(cfg_.max_clip_seconds)) + " s");
    }

    const std::string clip_hash = sha256_hex(bytes);
    nlohmann::json key_payload = sensor_to_json(sensor);
    key_payload["region"] = region ? nlohmann::json(*region) : nlohmann::json(nullptr);
    const std::string key = sha256_hex(clip_hash + "|" + key_payload.dump());
    if (auto existing = records_.find_by_key(key)) return upload_response(*existing);

    const auto analysis = analyze_clip(clip);
    const auto memberships = predict_clip(*model_, analysis, sensor);

    AnalysisRecord rec;
    rec.record_id = random_record_id();
    rec.created_at = utc_timestamp();
    rec.clip_ref = blobs_.put(bytes);
    rec.sensor = sensor;
    rec.segments = analysis_to_json(analysis, false)["segments"];
    rec.classes = model_->classes;
    rec.consent_location = region;
    rec.model_version = model_->version();
    rec.upload_key = key;
    if (memberships) {
      rec.memberships = *memberships;
      rec.diagnosis = model_->classes[detail::argmax(*memberships)];
    }
    auto [stored, created] = records_.insert_if_absent(rec);
    return upload_response(stored);
  }

  ServiceResponse get_report(const std::string& id) const {
    auto r = records_.get(id);
    if (!r) return error(404, "unknown record id");
    return {200, r->view()};
  }

  ServiceResponse submit_report(const std::string& id) {
    auto r = records_.submit(id);
    if (!r) return error(404, "unknown record id");
    return {200, r->view()};
  }

  ServiceResponse list_reports(const std::string& status) const {
    std::optional<RecordStatus> filter;
    if (status == "submitted") {
      filter = RecordStatus::submitted;
    } else if (status == "draft") {
      filter = RecordStatus::draft;
    } else if (!status.empty()) {
      return error(400, "status must be draft or submitted");
    }
    nlohmann::json items = nlohmann::json::array();
    for (const auto& r : records_.list(filter)) items.push_back(r.view());
    return {200, {{"reports", items}, {"count", items.size()}}};
  }

  /// Log-mel matrix of the stored clip (non-overlapping 25 ms frames, 26
  /// bands) for client-side rendering.
  ServiceResponse spectrogram(const std::string& id) const {
    auto r = records_.get(id);
    if (!r) return error(404, "unknown record id");
    const auto bytes = blobs_.get(r->clip_ref);
    const auto clip = resample(parse_wav(bytes), kCanonicalRateHz);
    const FrameSpec spec{25.0, 25.0, Window::hann, 0};
    const Matrix lm = log_mel_spectrogram(clip, spec, 26);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < lm.rows(); ++i) rows.push_back(std::vector<double>(lm.row(i).begin(), lm.row(i).end()));
    return {200, {{"record_id", id}, {"frame_ms", 25.0}, {"n_bands", 26}, {"values", rows}}};
  }

  ServiceResponse health() const {
    nlohmann::json body = {{"status", model_ ? "ok" : "degraded"},
                           {"model_version", model_ ? nlohmann::json(model_->version()) : nlohmann::json(nullptr)},
                           {"record_count", records_.size()}};
    return {200, body};
  }

  void mount(httplib::Server& srv) {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_content(r.body.dump(), "application/json");
    };
    srv.Post("/v1/clips", [this, send](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("audio")) return send(res, error(400, "multipart field 'audio' is required"));
      const std::string meta = req.has_file("meta") ? req.get_file_value("meta").content : std::string();
      send(res, handle_upload(req.get_file_value("audio").content, meta));
    });
    srv.Get(R"(/v1/reports/([0-9a-f]+)/spectrogram)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, spectrogram(req.matches[1]));
    });
    srv.Get(R"(/v1/reports/([0-9a-f]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_report(req.matches[1]));
    });
    srv.Post(R"(/v1/reports/([0-9a-f]+)/submit)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, submit_report(req.matches[1]));
    });
    srv.Get("/v1/reports", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, list_reports(req.has_param("status") ? req.get_param_value("status") : std::string()));
    });
    srv.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    srv.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error(500, what));
    });
  }

 private:
  static constexpr std::size_t kMaxRegionLength = 64;

  // Only the documented keys are accepted, so identifying fields cannot
  // reach the store by accident.
  static std::pair<SensorRecord, std::optional<std::string>> parse_meta(const nlohmann::json& meta) {
    if (!meta.is_object()) throw ValidationError("meta must be a JSON object");
    static const std::vector<std::string> allowed{"temp_c", "airflow_peak_lps", "airflow_volume_l", "region",
                                                  "location_consent"};
    for (const auto& [k, v] : meta.items()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
        throw ValidationError("unsupported meta field '" + k + "'");
      }
    }
    SensorRecord sensor = sensor_from_json(meta);
    std::optional<std::string> region;
    const bool consent = meta.contains("location_consent") && meta["location_consent"].is_boolean() &&
                         meta["location_consent"].get<bool>();
    if (consent && meta.contains("region") && !meta["region"].is_null()) {
      if (!meta["region"].is_string()) throw ValidationError("region must be a string");
      auto r = meta["region"].get<std::string>();
      if (r.size() > kMaxRegionLength) throw ValidationError("region must be a coarse name of at most 64 characters");
      if (std::any_of(r.begin(), r.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw ValidationError("region must be a coarse place name, not coordinates or codes");
      }
      region = std::move(r);
    }
    return {sensor, region};
  }

  static ServiceResponse upload_response(const AnalysisRecord& r) {
    if (!r.diagnosis) {
      return {422, {{"detail", "no cough detected"}, {"record_id", r.record_id}}};
    }
    auto body = r.view();
    return {200, body};
  }

  ServiceConfig cfg_;
  std::shared_ptr<const Classifier> model_;
  mutable BlobStore blobs_;
  mutable RecordStore records_;
};

}  // namespace coughpoc
