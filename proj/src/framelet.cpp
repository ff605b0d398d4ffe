#include "ldct/framelet.hpp"

namespace ldct {

BankKind bank_kind_from_string(const std::string& s) {
  if (s == "bspline-linear") return BankKind::BsplineLinear;
  if (s == "gradient") return BankKind::Gradient;
  if (s == "learnable") return BankKind::Learnable;
  if (s == "none") return BankKind::None;
  throw std::invalid_argument("unknown filter bank kind: " + s);
}

std::string to_string(BankKind k) {
  switch (k) {
    case BankKind::BsplineLinear: return "bspline-linear";
    case BankKind::Gradient: return "gradient";
    case BankKind::Learnable: return "learnable";
    default: return "none";
  }
}

}  // namespace ldct
