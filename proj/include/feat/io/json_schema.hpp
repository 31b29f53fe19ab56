// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Validator for the JSON Schema subset used by the run configuration:
// type (single or list), properties, required, additionalProperties (bool),
// items, minItems, maxItems, enum, minimum, maximum, exclusiveMinimum,
// oneOf. Errors carry a JSONPath-style location such as $.train.iterations.

#pragma once

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace feat::io {

struct SchemaIssue {
  std::string path;
  std::string message;
};

namespace detail {

inline bool json_is_type(const nlohmann::json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer") {
    if (v.is_number_integer()) return true;
    if (v.is_number_float()) {
      const double d = v.get<double>();
      return std::isfinite(d) && d == std::floor(d);
    }
    return false;
  }
  return false;
}

inline void validate_node(const nlohmann::json& v, const nlohmann::json& s, const std::string& path,
                          std::vector<SchemaIssue>& out) {
  if (s.contains("type")) {
    const auto& t = s["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = json_is_type(v, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || json_is_type(v, alt.get<std::string>());
    }
    if (!ok) {
      out.push_back({path, "expected type " + t.dump() + ", got " + std::string(v.type_name())});
      return;
    }
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) out.push_back({path, "value " + v.dump() + " not in " + s["enum"].dump()});
  }
  if (v.is_number()) {
    const double d = v.get<double>();
    if (s.contains("minimum") && d < s["minimum"].get<double>()) {
      out.push_back({path, "value " + v.dump() + " below minimum " + s["minimum"].dump()});
    }
    if (s.contains("maximum") && d > s["maximum"].get<double>()) {
      out.push_back({path, "value " + v.dump() + " above maximum " + s["maximum"].dump()});
    }
    if (s.contains("exclusiveMinimum") && !(d > s["exclusiveMinimum"].get<double>())) {
      out.push_back({path, "value " + v.dump() + " must exceed " + s["exclusiveMinimum"].dump()});
    }
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& key : s["required"]) {
        if (!v.contains(key.get<std::string>())) {
          out.push_back({path, "missing required key '" + key.get<std::string>() + "'"});
        }
      }
    }
    const nlohmann::json props = s.value("properties", nlohmann::json::object());
    const bool closed = s.contains("additionalProperties") && s["additionalProperties"] == false;
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string child = path + "." + it.key();
      if (props.contains(it.key())) {
        validate_node(it.value(), props[it.key()], child, out);
      } else if (closed) {
        out.push_back({child, "unknown key"});
      } else if (s.contains("additionalProperties") && s["additionalProperties"].is_object()) {
        validate_node(it.value(), s["additionalProperties"], child, out);
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
      out.push_back({path, "needs at least " + s["minItems"].dump() + " items"});
    }
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
      out.push_back({path, "allows at most " + s["maxItems"].dump() + " items"});
    }
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        validate_node(v[i], s["items"], path + "[" + std::to_string(i) + "]", out);
      }
    }
  }
  if (s.contains("oneOf")) {
    std::size_t matches = 0;
    for (const auto& alt : s["oneOf"]) {
      std::vector<SchemaIssue> sub;
      validate_node(v, alt, path, sub);
      if (sub.empty()) ++matches;
    }
    if (matches != 1) {
      out.push_back({path, "must match exactly one alternative (matched " + std::to_string(matches) + ")"});
    }
  }
}

}  // namespace detail

/// All schema violations of `value`; empty when valid.
inline std::vector<SchemaIssue> validate_schema(const nlohmann::json& value, const nlohmann::json& schema) {
  std::vector<SchemaIssue> out;
  detail::validate_node(value, schema, "$", out);
  return out;
}

}  // namespace feat::io
