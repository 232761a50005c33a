// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "parnet/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace parnet {

namespace {

using nlohmann::json;

std::int64_t positive(const json& j, const char* key) {
  if (!j.is_number_integer()) throw ConfigError(std::string(key) + " must be an integer");
  const auto v = j.get<std::int64_t>();
  if (v <= 0) throw ConfigError(std::string(key) + " must be positive");
  return v;
}

}  // namespace

Variant parse_variant(const std::string& s) {
  if (s == "S") return Variant::kS;
  if (s == "M") return Variant::kM;
  if (s == "L") return Variant::kL;
  if (s == "XL") return Variant::kXL;
  if (s == "custom") return Variant::kCustom;
  throw ConfigError("unknown variant '" + s + "'");
}

ModelConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {"variant",     "num_streams", "stream_widths", "stem_width",
                                              "final_width", "resolution",  "num_classes",   "dataset_shape"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "'");
  }
  if (!j.contains("variant") || !j["variant"].is_string()) throw ConfigError("variant is required");
  const Variant variant = parse_variant(j["variant"].get<std::string>());

  DatasetShape dataset = DatasetShape::kImageNet;
  if (j.contains("dataset_shape")) {
    if (!j["dataset_shape"].is_string()) throw ConfigError("dataset_shape must be a string");
    const auto d = j["dataset_shape"].get<std::string>();
    if (d == "cifar") {
      dataset = DatasetShape::kCifar;
    } else if (d != "imagenet") {
      throw ConfigError("unknown dataset_shape '" + d + "'");
    }
  }

  ModelConfig c;
  if (variant != Variant::kCustom) {
    if (dataset != DatasetShape::kImageNet) throw ConfigError("named variants are ImageNet models");
    c = ModelConfig::named(variant);
    if (j.contains("num_streams") && positive(j["num_streams"], "num_streams") != c.num_streams) {
      throw ConfigError(std::string("variant ") + to_string(variant) + " has 3 streams");
    }
  } else {
    for (const char* key : {"num_streams", "stream_widths", "final_width"}) {
      if (!j.contains(key)) throw ConfigError(std::string("custom config needs ") + key);
    }
    c.variant = Variant::kCustom;
    c.dataset = dataset;
    c.num_streams = static_cast<int>(positive(j["num_streams"], "num_streams"));
    if (dataset == DatasetShape::kCifar) {
      c.height = c.width = 32;
      c.num_classes = 10;
    }
  }

  if (j.contains("stream_widths")) {
    const auto& w = j["stream_widths"];
    if (!w.is_array()) throw ConfigError("stream_widths must be an array");
    std::vector<std::int64_t> widths;
    for (const auto& e : w) widths.push_back(positive(e, "stream_widths entry"));
    if (variant != Variant::kCustom && widths != c.stream_widths) {
      throw ConfigError(std::string("stream_widths disagree with variant ") + to_string(variant));
    }
    c.stream_widths = widths;
  }
  if (static_cast<int>(c.stream_widths.size()) != c.num_streams) {
    throw ConfigError("stream_widths needs one entry per stream");
  }
  if (j.contains("final_width")) {
    const auto fw = positive(j["final_width"], "final_width");
    if (variant != Variant::kCustom && fw != c.final_width) {
      throw ConfigError(std::string("final_width disagrees with variant ") + to_string(variant));
    }
    c.final_width = fw;
  }
  if (j.contains("stem_width")) {
    const auto sw = positive(j["stem_width"], "stem_width");
    if (variant != Variant::kCustom && sw != c.stem_width) {
      throw ConfigError(std::string("stem_width disagrees with variant ") + to_string(variant));
    }
    c.stem_width = sw;
  }
  if (j.contains("resolution")) {
    const auto& r = j["resolution"];
    if (r.is_array()) {
      if (r.size() != 2) throw ConfigError("resolution must be [height, width]");
      c.height = positive(r[0], "resolution");
      c.width = positive(r[1], "resolution");
    } else {
      c.height = c.width = positive(r, "resolution");
    }
  }
  if (j.contains("num_classes")) c.num_classes = positive(j["num_classes"], "num_classes");
  return c;
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["variant"] = to_string(c.variant);
  j["num_streams"] = c.num_streams;
  j["stream_widths"] = c.stream_widths;
  if (c.variant == Variant::kCustom && c.dataset == DatasetShape::kImageNet) j["stem_width"] = c.stem_width;
  j["final_width"] = c.final_width;
  j["resolution"] = {c.height, c.width};
  j["num_classes"] = c.num_classes;
  j["dataset_shape"] = to_string(c.dataset);
  return j.dump(2) + "\n";
}

ModelConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void save_config(const ModelConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write config " + path);
  f << config_to_json(cfg);
}

}  // namespace parnet
