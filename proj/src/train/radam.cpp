#include <cmath>

#include "tripse/errors.hpp"
#include "tripse/train.hpp"

namespace tripse {

double radam_rho(double beta2, std::uint64_t t) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b2t = std::pow(beta2, static_cast<double>(t));
  return rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
}

template <typename T>
RAdamStepInfo radam_step(std::span<BasicTensor<T>> params, RAdamState<T>& s) {
  const RAdamConfig& c = s.cfg;
  if (s.m.empty() && s.v.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
  }
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ArgumentError("optimizer state tracks " + std::to_string(s.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.m[i].size() != params[i].numel() || s.v[i].size() != params[i].numel()) {
      throw ArgumentError("optimizer state for parameter " + std::to_string(i) + " does not match its shape " +
                          params[i].shape().to_string());
    }
  }

  s.step += 1;
  const double t = static_cast<double>(s.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
  RAdamStepInfo info;
  info.rho_t = radam_rho(c.beta2, s.step);
  info.rectified = info.rho_t > 4.0;
  double rect = 0.0;
  if (info.rectified) {
    rect = std::sqrt((info.rho_t - 4.0) * (info.rho_t - 2.0) * rho_inf /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * info.rho_t));
  }
  const double sqrt_bc2 = std::sqrt(bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      m[j] = static_cast<T>(c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * g);
      v[j] = static_cast<T>(c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * g * g);
      const double m_hat = static_cast<double>(m[j]) / bc1;
      double update;
      if (info.rectified) {
        update = c.lr * m_hat * rect * sqrt_bc2 / (std::sqrt(static_cast<double>(v[j])) + c.eps);
      } else {
        update = c.lr * m_hat;
      }
      values[j] = static_cast<T>(static_cast<double>(values[j]) - update);
    }
  }
  return info;
}

template RAdamStepInfo radam_step(std::span<BasicTensor<float>>, RAdamState<float>&);
template RAdamStepInfo radam_step(std::span<BasicTensor<double>>, RAdamState<double>&);

}  // namespace tripse
