#include "ivgen/trajectory.hpp"

#include <stdexcept>
#include <string>

namespace ivgen {

std::string_view to_string(Actor a) {
  return a == Actor::policy ? "policy" : "expert";
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::base: return "base";
    case Provenance::synthetic: return "synthetic";
    case Provenance::source_human: return "source-human";
  }
  return "?";
}

Actor parse_actor(std::string_view s) {
  if (s == "policy") return Actor::policy;
  if (s == "expert") return Actor::expert;
  throw std::invalid_argument("unknown actor: " + std::string(s));
}

Provenance parse_provenance(std::string_view s) {
  if (s == "base") return Provenance::base;
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "source-human") return Provenance::source_human;
  throw std::invalid_argument("unknown provenance: " + std::string(s));
}

std::size_t Dataset::step_count() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  return n;
}

}  // namespace ivgen
