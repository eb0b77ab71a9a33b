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

#ifndef NVF_RANGE_CODER_H_
#define NVF_RANGE_CODER_H_

#include <cstdint>
#include <vector>

#include "nvf/common.h"

namespace nvf {

// Frozen cumulative-count table over a contiguous integer alphabet
// [offset, offset + size). Counts are 16-bit-scaled (total 65536) and every
// symbol holds at least one count, so any in-alphabet symbol is codable.
class FrozenCdf {
 public:
  // Quantizes pmf (any positive scale) to integer counts summing to 65536
  // with largest-remainder correction. pmf[i] is the probability of symbol
  // offset + i. Requires 1 <= pmf.size() <= 65536.
  static FrozenCdf Freeze(const std::vector<double>& pmf, int64_t offset);

  int64_t offset() const { return offset_; }
  size_t size() const { return cum_.size() - 1; }
  uint32_t count(size_t i) const { return cum_[i + 1] - cum_[i]; }
  uint32_t cum(size_t i) const { return cum_[i]; }

  // Estimated codeable length of `symbols` in bits (sum of -log2 count/2^16).
  double EstimateBits(const std::vector<int64_t>& symbols) const;

 private:
  int64_t offset_ = 0;
  std::vector<uint32_t> cum_;  // size + 1 entries, cum_[0] = 0, back = 65536

  friend std::vector<uint8_t> EncodeSymbols(const std::vector<int64_t>&,
                                            const FrozenCdf&);
  friend std::vector<int64_t> DecodeSymbols(const std::vector<uint8_t>&,
                                            size_t, const FrozenCdf&);
};

// Carry-less byte-oriented range coder (Subbotin style): 32-bit active
// window, 16-bit cumulative precision. Integer-only after Freeze, so encoded
// bytes are identical across platforms.
std::vector<uint8_t> EncodeSymbols(const std::vector<int64_t>& symbols,
                                   const FrozenCdf& cdf);

// Exact inverse of EncodeSymbols; `count` comes from the container header.
std::vector<int64_t> DecodeSymbols(const std::vector<uint8_t>& bytes,
                                   size_t count, const FrozenCdf& cdf);

}  // namespace nvf

#endif  // NVF_RANGE_CODER_H_
