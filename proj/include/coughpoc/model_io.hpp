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

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/error.hpp"
#include "coughpoc/features.hpp"
#include "coughpoc/nn.hpp"

// Model file layout (all integers little-endian):
//
//   offset 0   6 bytes   magic "CPOCM1"
//   offset 6   u32       format version (currently 1)
//   offset 10  u64       header length H in bytes
//   offset 18  H bytes   UTF-8 JSON header
//   then       f64[]     parameter blocks, little-endian IEEE-754, in the
//                        order listed by header["blocks"]
//
// Header keys: "arch" ("mlp" | "cnn"), "layer_sizes" (mlp) or "cnn" object
// {input_frames, input_bands, channels, kernel, n_classes}, "classes",
// "normalizer_dim" (0 when absent), "blocks" [{name, count}], optional
// "training" (run provenance). Normalizer
// mean/std, when present, are the last two blocks ("norm_mean", "norm_std").

namespace coughpoc {

inline constexpr char kModelMagic[6] = {'C', 'P', 'O', 'C', 'M', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// A trained network plus everything needed to run it on new recordings.
struct Classifier {
  std::variant<MlpModel, CnnModel> net;
  std::vector<std::string> classes;
  std::optional<Normalizer> normalizer;  // applied to fused rows (MLP only)
  // Free-form provenance of the training run (seed, split, hyperparameters);
  // stored in the file header, never used for inference.
  nlohmann::json training = nullptr;

  bool is_cnn() const { return std::holds_alternative<CnnModel>(net); }
  const MlpModel& mlp() const { return std::get<MlpModel>(net); }
  const CnnModel& cnn() const { return std::get<CnnModel>(net); }

  MembershipVector predict_fused(std::span<const double> row) const {
    if (is_cnn()) throw ShapeError("model expects a log-mel spectrogram, not a feature row");
    if (normalizer) return predict_memberships(mlp(), normalizer->apply(row));
    return predict_memberships(mlp(), row);
  }

  MembershipVector predict_logmel(const Matrix& x) const {
    if (!is_cnn()) throw ShapeError("model expects a feature row, not a spectrogram");
    return predict_memberships(cnn(), x);
  }

  const ParamBlocks& params() const {
    return std::visit([](const auto& m) -> const ParamBlocks& { return m.params; }, net);
  }

  /// Stable identifier derived from architecture and parameter bits.
  std::string version() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& blk : params()) mix(blk.data(), blk.size() * sizeof(double));
    for (const auto& c : classes) mix(c.data(), c.size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%016llx", is_cnn() ? "cnn" : "mlp", static_cast<unsigned long long>(h));
    return buf;
  }
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Classifier& c) {
  nlohmann::json header;
  header["format_version"] = kModelFormatVersion;
  header["classes"] = c.classes;
  std::vector<std::pair<std::string, const std::vector<double>*>> blocks;
  if (c.is_cnn()) {
    const auto& a = c.cnn().arch;
    header["arch"] = "cnn";
    header["cnn"] = {{"input_frames", a.input_frames}, {"input_bands", a.input_bands}, {"channels", a.channels},
                     {"kernel", a.kernel},             {"n_classes", a.n_classes}};
    const auto& p = c.cnn().params;
    for (std::size_t s = 0; s < a.channels.size(); ++s) {
      blocks.emplace_back("conv" + std::to_string(s + 1) + "_kernel", &p[2 * s]);
      blocks.emplace_back("conv" + std::to_string(s + 1) + "_bias", &p[2 * s + 1]);
    }
    blocks.emplace_back("dense_weight", &p[2 * a.channels.size()]);
    blocks.emplace_back("dense_bias", &p[2 * a.channels.size() + 1]);
  } else {
    const auto& m = c.mlp();
    header["arch"] = "mlp";
    header["layer_sizes"] = m.layer_sizes;
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
      blocks.emplace_back("layer" + std::to_string(l + 1) + "_weight", &m.params[2 * l]);
      blocks.emplace_back("layer" + std::to_string(l + 1) + "_bias", &m.params[2 * l + 1]);
    }
  }
  header["normalizer_dim"] = c.normalizer ? c.normalizer->dim() : 0;
  if (!c.training.is_null()) header["training"] = c.training;
  if (c.normalizer) {
    blocks.emplace_back("norm_mean", &c.normalizer->mean);
    blocks.emplace_back("norm_std", &c.normalizer->std);
  }
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, data] : blocks) list.push_back({{"name", name}, {"count", data->size()}});
  header["blocks"] = list;

  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 6);
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, data] : blocks) {
    for (double v : *data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Classifier deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 18 || std::memcmp(bytes.data(), kModelMagic, 6) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(bytes.data() + 6);
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  const std::uint64_t hlen = detail::read_u64(bytes.data() + 10);
  if (hlen > bytes.size() - 18) throw FormatError("corrupt model file: header overruns file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 18, bytes.begin() + 18 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt model header: ") + e.what());
  }

  try {
    std::size_t pos = 18 + hlen;
    std::vector<std::vector<double>> blocks;
    for (const auto& b : header.at("blocks")) {
      const auto count = b.at("count").get<std::size_t>();
      if (count > (bytes.size() - pos) / 8) throw FormatError("corrupt model file: truncated parameter block");
      std::vector<double> v(count);
      for (std::size_t i = 0; i < count; ++i, pos += 8) v[i] = std::bit_cast<double>(detail::read_u64(bytes.data() + pos));
      blocks.push_back(std::move(v));
    }
    if (pos != bytes.size()) throw FormatError("corrupt model file: trailing bytes");

    Classifier c;
    c.classes = header.at("classes").get<std::vector<std::string>>();
    if (header.contains("training")) c.training = header["training"];
    const auto norm_dim = header.at("normalizer_dim").get<std::size_t>();
    if (norm_dim > 0) {
      if (blocks.size() < 2) throw FormatError("corrupt model file: missing normalizer blocks");
      Normalizer n;
      n.std = std::move(blocks.back());
      blocks.pop_back();
      n.mean = std::move(blocks.back());
      blocks.pop_back();
      if (n.mean.size() != norm_dim || n.std.size() != norm_dim) throw FormatError("corrupt normalizer block");
      c.normalizer = std::move(n);
    }

    const auto arch = header.at("arch").get<std::string>();
    if (arch == "mlp") {
      MlpModel m;
      m.layer_sizes = header.at("layer_sizes").get<std::vector<std::size_t>>();
      if (m.layer_sizes.size() < 2 || blocks.size() != 2 * m.n_layers()) throw FormatError("MLP block count mismatch");
      for (std::size_t l = 0; l < m.n_layers(); ++l) {
        if (blocks[2 * l].size() != m.layer_sizes[l] * m.layer_sizes[l + 1] ||
            blocks[2 * l + 1].size() != m.layer_sizes[l + 1]) {
          throw FormatError("MLP block size mismatch");
        }
      }
      m.params = std::move(blocks);
      c.net = std::move(m);
    } else if (arch == "cnn") {
      const auto& j = header.at("cnn");
      CnnArch a;
      a.input_frames = j.at("input_frames").get<std::size_t>();
      a.input_bands = j.at("input_bands").get<std::size_t>();
      a.channels = j.at("channels").get<std::vector<std::size_t>>();
      a.kernel = j.at("kernel").get<std::size_t>();
      a.n_classes = j.at("n_classes").get<std::size_t>();
      a.validate();
      const auto ref = CnnModel::create(a, 0);
      if (blocks.size() != ref.params.size()) throw FormatError("CNN block count mismatch");
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].size() != ref.params[i].size()) throw FormatError("CNN block size mismatch");
      }
      CnnModel m{a, std::move(blocks)};
      c.net = std::move(m);
    } else {
      throw FormatError("unknown architecture '" + arch + "'");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt model header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("corrupt model header: ") + e.what());
  }
}

inline void save_model(const Classifier& c, const std::filesystem::path& path) {
  write_file_bytes(path.string(), serialize_model(c));
}

inline Classifier load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file_bytes(path.string()));
}

}  // namespace coughpoc
