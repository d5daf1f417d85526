#pragma once

#include "ivgen/world.hpp"

#include <json.hpp>

#include <set>
#include <stdexcept>
#include <string>

namespace ivgen::detail {

using Json = nlohmann::ordered_json;

// Strict object reader for config files: finish() rejects any key that was
// never asked for.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      throw std::invalid_argument(where_ + ": expected an object");
    }
  }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const Json* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const Json::exception&) {
        throw std::invalid_argument(where_ + "." + key + ": wrong type");
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw std::invalid_argument("unknown config key: " + where_ + "." +
                                    it.key());
      }
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Vec3 vec_from(const Json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument("expected a 3-vector");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline CorruptionModel corruption_preset(const std::string& name) {
  if (name == "none") return CorruptionModel::none();
  if (name == "peg_noise") return CorruptionModel::peg_noise();
  if (name == "receptacle_noise") return CorruptionModel::receptacle_noise();
  if (name == "radial_noise") return CorruptionModel::radial_noise();
  if (name == "block_noise") return CorruptionModel::block_noise();
  if (name == "geometry_flip") return CorruptionModel::geometry_flip(1.0);
  throw std::invalid_argument("unknown corruption preset: " + name);
}

// {"preset": name, ...field overrides}
inline CorruptionModel corruption_config(const Json& j) {
  Fields f(j, "corruption");
  CorruptionModel z;
  std::string name;
  f.read("preset", name);
  if (!name.empty()) z = corruption_preset(name);
  if (const Json* k = f.get("kind")) {
    z.kind = parse_corruption_kind(k->get<std::string>());
  }
  if (const Json* h = f.get("half_widths")) z.half_widths = vec_from(*h);
  f.read("min_offset", z.min_offset);
  if (const Json* a = f.get("min_offset_axis")) {
    z.min_offset_axis = parse_offset_axis(a->get<std::string>());
  }
  f.read("radial_min", z.radial_min);
  f.read("radial_max", z.radial_max);
  f.read("flip_probability", z.flip_probability);
  f.read("seed", z.seed);
  f.finish();
  return z;
}

}  // namespace ivgen::detail
