#include "gere/losses.hpp"

namespace gere {

WeightStrategy WeightStrategy::parse(const std::string& s) {
  if (s == "dynamic" || s == "d") return dynamic();
  if (s.rfind("fixed:", 0) == 0) return fixed(std::stod(s.substr(6)));
  return fixed(std::stod(s));  // bare number
}

std::string WeightStrategy::str() const {
  if (kind == Kind::Dynamic) return "dynamic";
  return "fixed:" + std::to_string(w);
}

}  // namespace gere
