// Copyright (c) the nvf authors
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

#include "nvf/rate_model.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nvf {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kProbabilityFloor = 0x1.0p-64;

double NormalCdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double NormalPdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// Phi(a) - Phi(b) for a > b, using the tail that keeps precision.
double CdfDifference(double a, double b) {
  if (a <= 0.0) return NormalCdf(a) - NormalCdf(b);
  // Mirror into the left tail: Phi(a) - Phi(b) = Phi(-b) - Phi(-a).
  return NormalCdf(-b) - NormalCdf(-a);
}

}  // namespace

double BinProbability(double value, double mu, double sigma, double delta) {
  if (sigma <= 0.0 || delta <= 0.0) {
    throw std::invalid_argument("BinProbability: sigma and delta must be > 0");
  }
  const double a = (value - mu + 0.5 * delta) / sigma;
  const double b = (value - mu - 0.5 * delta) / sigma;
  return std::max(CdfDifference(a, b), kProbabilityFloor);
}

Var GaussianRateNll(Graph& g, Var values, Var mu, Var log_sigma,
                    double delta) {
  if (mu->value.numel() != 1 || log_sigma->value.numel() != 1) {
    throw std::invalid_argument("GaussianRateNll: mu/log_sigma must be scalar");
  }
  const double m = mu->value.scalar();
  const double sigma = std::exp(log_sigma->value.scalar());
  const int64_t n = values->value.numel();

  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double a = (values->value.v[i] - m + 0.5 * delta) / sigma;
    const double b = (values->value.v[i] - m - 0.5 * delta) / sigma;
    total -= std::log(std::max(CdfDifference(a, b), 1e-300));
  }

  return g.Emit(Tensor::Scalar(total), {values, mu, log_sigma},
                [values, mu, log_sigma, m, sigma, delta, n](Node& self) {
    const double go = self.grad[0];
    if (values->requires_grad) values->EnsureGrad();
    if (mu->requires_grad) mu->EnsureGrad();
    if (log_sigma->requires_grad) log_sigma->EnsureGrad();
    double gmu = 0.0, glogsigma = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double a = (values->value.v[i] - m + 0.5 * delta) / sigma;
      const double b = (values->value.v[i] - m - 0.5 * delta) / sigma;
      const double q = std::max(CdfDifference(a, b), 1e-300);
      const double pa = NormalPdf(a), pb = NormalPdf(b);
      // d(-ln q)/dv = -(pa - pb) / (sigma q); mu gets the opposite sign.
      const double gv = -(pa - pb) / (sigma * q);
      if (values->requires_grad) values->grad[i] += go * gv;
      gmu -= gv;
      // d(-ln q)/d(log sigma) = (a pa - b pb) / q.
      glogsigma += (a * pa - b * pb) / q;
    }
    if (mu->requires_grad) mu->grad[0] += go * gmu;
    if (log_sigma->requires_grad) log_sigma->grad[0] += go * glogsigma;
  });
}

int64_t QuantizeIndex(double value, double delta) {
  return std::llround(value / delta);  // halfway cases away from zero
}

Tensor QuantizeTensor(const Tensor& values, double delta) {
  Tensor out{values.shape};
  for (int64_t i = 0; i < values.numel(); ++i) {
    out.v[i] = static_cast<double>(QuantizeIndex(values.v[i], delta));
  }
  return out;
}

std::vector<double> DiscretePmfTable(float mu, float sigma, double delta,
                                     int64_t index_lo, int64_t index_hi) {
  if (index_hi < index_lo) {
    throw std::invalid_argument("DiscretePmfTable: empty index range");
  }
  const double m = static_cast<double>(mu);
  const double s = static_cast<double>(sigma);
  std::vector<double> pmf;
  pmf.reserve(static_cast<size_t>(index_hi - index_lo + 1));
  for (int64_t i = index_lo; i <= index_hi; ++i) {
    pmf.push_back(BinProbability(static_cast<double>(i) * delta, m, s, delta));
  }
  // Fold tails into the extreme bins so the table covers the whole line.
  const double lo_edge = (static_cast<double>(index_lo) * delta - m -
                          0.5 * delta) / s;
  const double hi_edge = (static_cast<double>(index_hi) * delta - m +
                          0.5 * delta) / s;
  pmf.front() += NormalCdf(lo_edge);
  pmf.back() += NormalCdf(-hi_edge);
  return pmf;
}

void DefaultIndexRange(float mu, float sigma, double delta, int64_t* lo,
                       int64_t* hi) {
  const double m = static_cast<double>(mu);
  const double s = static_cast<double>(sigma);
  const int64_t center = QuantizeIndex(m, delta);
  int64_t half = static_cast<int64_t>(std::ceil(16.0 * s / delta)) + 1;
  half = std::clamp<int64_t>(half, 1, 2048);
  *lo = std::max<int64_t>(center - half, -32768);
  *hi = std::min<int64_t>(center + half, 32767);
  if (*lo > *hi) *lo = *hi;  // degenerate but non-empty
}

}  // namespace nvf
