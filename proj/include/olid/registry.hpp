// olid/registry.hpp

// Copyright 2026  The Olid Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef OLID_REGISTRY_HPP
#define OLID_REGISTRY_HPP

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "olid/common.hpp"

namespace olid {

inline bool valid_language_code(const std::string& c) {
  if (c.size() != 3) return false;
  if (c[0] < 'a' || c[0] > 'z') return false;
  for (char ch : c)
    if (!((ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9'))) return false;
  return true;
}

/// Authoritative mapping of language codes to class ids.  in_set order is the
/// softmax index and is frozen once a model has been trained against it;
/// enrolled codes extend the out-of-set label space without disturbing it.
struct LanguageRegistry {
  std::vector<std::string> in_set;
  std::vector<std::string> out_of_set;
  std::vector<std::string> enrolled;

  /// out_of_set followed by enrolled: index = pLDA class id.
  std::vector<std::string> oos_codes() const {
    std::vector<std::string> all = out_of_set;
    all.insert(all.end(), enrolled.begin(), enrolled.end());
    return all;
  }

  std::optional<int> in_set_index(const std::string& code) const {
    auto it = std::find(in_set.begin(), in_set.end(), code);
    if (it == in_set.end()) return std::nullopt;
    return static_cast<int>(it - in_set.begin());
  }

  bool contains(const std::string& code) const {
    auto has = [&](const std::vector<std::string>& v) {
      return std::find(v.begin(), v.end(), code) != v.end();
    };
    return has(in_set) || has(out_of_set) || has(enrolled);
  }

  /// Fingerprint of the in-set ordering; models bind to it.
  uint64_t in_set_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& c : in_set) {
      h = fnv1a64_bytes(c.data(), c.size(), h);
      h = fnv1a64_bytes("\n", 1, h);
    }
    return h;
  }

  void validate() const {
    std::set<std::string> seen;
    auto check = [&](const std::vector<std::string>& v, const char* which) {
      for (const auto& c : v) {
        if (!valid_language_code(c))
          throw Error(ErrorCode::config, std::string("registry: bad language code '") + c +
                                             "' in " + which);
        if (!seen.insert(c).second)
          throw Error(ErrorCode::config, "registry: duplicate language code '" + c + "'");
      }
    };
    check(in_set, "in_set");
    check(out_of_set, "out_of_set");
    check(enrolled, "enrolled");
    if (in_set.empty()) throw Error(ErrorCode::config, "registry: in_set is empty");
  }

  nlohmann::json to_json() const {
    return {{"in_set", in_set}, {"out_of_set", out_of_set}, {"enrolled", enrolled}};
  }

  static LanguageRegistry from_json(const nlohmann::json& j) {
    LanguageRegistry r;
    r.in_set = j.at("in_set").get<std::vector<std::string>>();
    r.out_of_set = j.value("out_of_set", std::vector<std::string>{});
    r.enrolled = j.value("enrolled", std::vector<std::string>{});
    r.validate();
    return r;
  }

  void save(const std::string& path) const {
    auto os = open_out(path);
    os << to_json().dump(2) << "\n";
  }

  static LanguageRegistry load(const std::string& path) {
    auto is = open_in(path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, std::string("registry: ") + e.what());
    }
    return from_json(j);
  }

  bool operator==(const LanguageRegistry&) const = default;
};

}  // namespace olid

#endif  // OLID_REGISTRY_HPP
