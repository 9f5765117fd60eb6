#pragma once

#include "follmer/core.hpp"

#include <cstdint>
#include <cstdio>
#include <string>

namespace follmer {

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename M>
std::string fmt_matrix(const M& a) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (i + j > 0) s += ",";
      s += fmt17(a(i, j));
    }
  return s + "]";
}

}  // namespace follmer
