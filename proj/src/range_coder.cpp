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

#include "nvf/range_coder.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nvf {

namespace {

constexpr uint32_t kTotal = 1u << 16;
constexpr uint32_t kTop = 1u << 24;
constexpr uint32_t kBottom = 1u << 16;

}  // namespace

FrozenCdf FrozenCdf::Freeze(const std::vector<double>& pmf, int64_t offset) {
  const size_t n = pmf.size();
  if (n == 0 || n > kTotal) {
    throw std::invalid_argument("Freeze: alphabet size out of range");
  }
  double sum = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("Freeze: pmf entries must be finite and >= 0");
    }
    sum += p;
  }
  if (sum <= 0.0) throw std::invalid_argument("Freeze: pmf sums to zero");

  std::vector<uint32_t> counts(n);
  std::vector<std::pair<double, size_t>> remainders(n);
  uint64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    const double scaled = pmf[i] / sum * kTotal;
    counts[i] = static_cast<uint32_t>(scaled);  // floor
    remainders[i] = {scaled - counts[i], i};
    assigned += counts[i];
  }
  // Largest remainder first; ties by lower index for determinism.
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  int64_t deficit = static_cast<int64_t>(kTotal) - static_cast<int64_t>(assigned);
  for (size_t k = 0; deficit > 0 && k < n; ++k, --deficit) {
    counts[remainders[k].second] += 1;
  }
  // Every symbol needs at least one count; steal from the largest bin.
  for (size_t i = 0; i < n; ++i) {
    if (counts[i] > 0) continue;
    size_t donor = 0;
    for (size_t j = 1; j < n; ++j) {
      if (counts[j] > counts[donor]) donor = j;
    }
    if (counts[donor] < 2) throw std::invalid_argument("Freeze: alphabet too large");
    counts[donor] -= 1;
    counts[i] = 1;
  }

  FrozenCdf cdf;
  cdf.offset_ = offset;
  cdf.cum_.resize(n + 1);
  cdf.cum_[0] = 0;
  for (size_t i = 0; i < n; ++i) cdf.cum_[i + 1] = cdf.cum_[i] + counts[i];
  if (cdf.cum_.back() != kTotal) {
    throw std::logic_error("Freeze: counts do not sum to 65536");
  }
  return cdf;
}

double FrozenCdf::EstimateBits(const std::vector<int64_t>& symbols) const {
  double bits = 0.0;
  for (int64_t s : symbols) {
    const int64_t i = s - offset_;
    if (i < 0 || i >= static_cast<int64_t>(size())) {
      throw std::invalid_argument("EstimateBits: symbol outside alphabet");
    }
    bits -= std::log2(static_cast<double>(count(static_cast<size_t>(i))) /
                      kTotal);
  }
  return bits;
}

std::vector<uint8_t> EncodeSymbols(const std::vector<int64_t>& symbols,
                                   const FrozenCdf& cdf) {
  std::vector<uint8_t> out;
  out.reserve(symbols.size() / 2 + 8);
  uint32_t low = 0;
  uint32_t range = 0xFFFFFFFFu;

  for (int64_t s : symbols) {
    const int64_t i = s - cdf.offset_;
    if (i < 0 || i >= static_cast<int64_t>(cdf.size())) {
      throw std::invalid_argument("EncodeSymbols: symbol outside alphabet");
    }
    const uint32_t cum_lo = cdf.cum(static_cast<size_t>(i));
    const uint32_t freq = cdf.count(static_cast<size_t>(i));
    range /= kTotal;
    low += cum_lo * range;
    range *= freq;
    // Renormalize: flush settled top bytes; on straddle, shrink range to the
    // distance to the next kBottom boundary (carry-less).
    while ((low ^ (low + range)) < kTop ||
           (range < kBottom && ((range = (0u - low) & (kBottom - 1)), true))) {
      out.push_back(static_cast<uint8_t>(low >> 24));
      low <<= 8;
      range <<= 8;
    }
  }
  for (int k = 0; k < 4; ++k) {
    out.push_back(static_cast<uint8_t>(low >> 24));
    low <<= 8;
  }
  return out;
}

std::vector<int64_t> DecodeSymbols(const std::vector<uint8_t>& bytes,
                                   size_t count, const FrozenCdf& cdf) {
  std::vector<int64_t> out;
  out.reserve(count);
  uint32_t low = 0;
  uint32_t range = 0xFFFFFFFFu;
  uint32_t code = 0;
  size_t pos = 0;
  auto next_byte = [&]() -> uint8_t {
    if (pos < bytes.size()) return bytes[pos++];
    throw DecodeError("range coder: truncated stream");
  };
  for (int k = 0; k < 4; ++k) code = (code << 8) | next_byte();

  for (size_t n = 0; n < count; ++n) {
    range /= kTotal;
    const uint32_t value = (code - low) / range;
    if (value >= kTotal) throw DecodeError("range coder: corrupt stream");
    // Find the symbol whose [cum, cum+count) contains value.
    const auto it = std::upper_bound(cdf.cum_.begin(), cdf.cum_.end(), value);
    const size_t idx = static_cast<size_t>(it - cdf.cum_.begin()) - 1;
    const uint32_t cum_lo = cdf.cum(idx);
    const uint32_t freq = cdf.count(idx);
    out.push_back(cdf.offset_ + static_cast<int64_t>(idx));
    low += cum_lo * range;
    range *= freq;
    while ((low ^ (low + range)) < kTop ||
           (range < kBottom && ((range = (0u - low) & (kBottom - 1)), true))) {
      code = (code << 8) | next_byte();
      low <<= 8;
      range <<= 8;
    }
  }
  return out;
}

}  // namespace nvf
