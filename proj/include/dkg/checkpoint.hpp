// SPDX-License-Identifier: Apache-2.0
//
// Model checkpoints: a JSON header (spec, layout, seed, metrics, optional
// standardization stats) and the flat parameter array as base64 of
// little-endian IEEE-754 doubles.
#ifndef DKG_CHECKPOINT_HPP
#define DKG_CHECKPOINT_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dkg/data.hpp"
#include "dkg/error.hpp"
#include "dkg/models.hpp"

namespace dkg {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

namespace base64 {

inline constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const auto rest = bytes.size() - i; rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> decode(std::string_view text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
    lut[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
  }
  require(text.size() % 4 == 0, ErrorKind::CorruptArtifact,
          "base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        vals[k] = 0;
        ++pad;
        continue;
      }
      require(pad == 0, ErrorKind::CorruptArtifact, "misplaced base64 padding");
      vals[k] = lut[static_cast<unsigned char>(c)];
      require(vals[k] >= 0, ErrorKind::CorruptArtifact,
              "invalid base64 character");
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

}  // namespace base64

inline std::string encode_doubles(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) {
      bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return base64::encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view text) {
  const auto bytes = base64::decode(text);
  require(bytes.size() % 8 == 0, ErrorKind::CorruptArtifact,
          "parameter payload is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline Json to_json(const ClassifierSpec& s) {
  Json j{{"kind", std::string(to_string(s.kind))},
         {"input_dim", s.input_dim},
         {"num_classes", s.num_classes},
         {"seed", s.seed}};
  if (s.kind == ModelKind::MoMLP || s.kind == ModelKind::WideDeep) {
    j["hidden"] = s.hidden;
  }
  if (s.kind == ModelKind::CNN1D) {
    j["channels"] = s.channels;
    j["kernel"] = s.kernel;
    j["conv_layers"] = s.conv_layers;
  }
  return j;
}

inline ClassifierSpec classifier_spec_from_json(const Json& j) {
  ClassifierSpec s;
  s.kind = parse_model_kind(j.at("kind").get<std::string>());
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
  if (j.contains("channels")) s.channels = j["channels"].get<std::size_t>();
  if (j.contains("kernel")) s.kernel = j["kernel"].get<std::size_t>();
  if (j.contains("conv_layers")) s.conv_layers = j["conv_layers"].get<std::size_t>();
  return s;
}

inline Json to_json(const ColumnStats& s) {
  return Json{{"mean", s.mean}, {"stddev", s.stddev}, {"constant", s.constant}};
}

inline ColumnStats column_stats_from_json(const Json& j) {
  return {j.at("mean").get<std::vector<double>>(),
          j.at("stddev").get<std::vector<double>>(),
          j.at("constant").get<std::vector<bool>>()};
}

struct Checkpoint {
  ModelState model;
  std::vector<std::string> factor_names;
  std::optional<ColumnStats> standardization;
  Json provenance = Json::object();
};

inline Json to_json(const Checkpoint& c) {
  const auto& m = c.model;
  Json layout = Json::array();
  for (const auto& s : m.layout) {
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
  }
  Json j{{"format", "dkg-checkpoint"},
         {"version", kCheckpointVersion},
         {"spec", to_json(m.spec)},
         {"layout", layout},
         {"seed", m.spec.seed},
         {"metrics",
          {{"epochs", m.log.epochs},
           {"final_label_loss", m.log.final_label_loss},
           {"final_exp_loss", m.log.final_exp_loss},
           {"final_val_micro_f1", m.log.final_val_micro_f1}}},
         {"factor_names", c.factor_names},
         {"provenance", c.provenance},
         {"num_params", m.params.size()},
         {"params", encode_doubles(m.params)}};
  if (c.standardization) j["standardization"] = to_json(*c.standardization);
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  try {
    require(j.value("format", "") == "dkg-checkpoint", ErrorKind::CorruptArtifact,
            "not a checkpoint document");
    const int version = j.at("version").get<int>();
    require(version == kCheckpointVersion, ErrorKind::SchemaVersionMismatch,
            "checkpoint version " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
    Checkpoint c;
    c.model.spec = classifier_spec_from_json(j.at("spec"));
    for (const auto& s : j.at("layout")) {
      c.model.layout.push_back({s.at("name").get<std::string>(),
                                s.at("offset").get<std::size_t>(),
                                s.at("shape").get<std::vector<std::size_t>>()});
    }
    const auto& metrics = j.at("metrics");
    c.model.log.epochs = metrics.at("epochs").get<std::size_t>();
    c.model.log.final_label_loss = metrics.at("final_label_loss").get<double>();
    c.model.log.final_exp_loss = metrics.at("final_exp_loss").get<double>();
    c.model.log.final_val_micro_f1 = metrics.at("final_val_micro_f1").get<double>();
    c.model.params = decode_doubles(j.at("params").get<std::string>());
    require(c.model.params.size() == j.at("num_params").get<std::size_t>(),
            ErrorKind::CorruptArtifact, "parameter count mismatch");
    c.factor_names = j.at("factor_names").get<std::vector<std::string>>();
    c.provenance = j.value("provenance", Json::object());
    if (j.contains("standardization")) {
      c.standardization = column_stats_from_json(j["standardization"]);
    }
    attach_architecture(c.model);
    return c;
  } catch (const Json::exception& e) {
    fail(ErrorKind::CorruptArtifact, std::string("checkpoint: ") + e.what());
  }
}

namespace detail {

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::CorruptArtifact, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError,
          "cannot write '" + path + "'");
  out << text;
  require(static_cast<bool>(out), ErrorKind::IoError,
          "write failed for '" + path + "'");
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  detail::write_text_file(path, to_json(c).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_json(detail::read_json_file(path));
}

}  // namespace dkg

#endif  // DKG_CHECKPOINT_HPP
