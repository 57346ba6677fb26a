#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <array>
#include <cstddef>

namespace smsckf {

/// 0.95 quantile of the chi-square distribution with `dof` degrees of freedom.
/// Values up to 512 dof are computed once and cached.
inline double chi_square_95(std::size_t dof) {
  if (dof == 0) return 0.0;
  auto quantile = [](std::size_t k) {
    return boost::math::quantile(boost::math::chi_squared(static_cast<double>(k)), 0.95);
  };
  static const auto table = [&] {
    std::array<double, 512> t{};
    for (std::size_t k = 1; k <= t.size(); ++k) t[k - 1] = quantile(k);
    return t;
  }();
  return dof <= table.size() ? table[dof - 1] : quantile(dof);
}

}  // namespace smsckf
