// SPDX-License-Identifier: Apache-2.0
//
// Uniform midtread quantization of the latent triple with independent
// per-stream bit widths, plus exact feedback bit accounting.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpcsi/channel.hpp"
#include "dpcsi/common.hpp"
#include "dpcsi/kv.hpp"
#include "dpcsi/model.hpp"

namespace dpcsi {

struct QuantRange {
  double lo = 0.0;
  double hi = 1.0;
};

// Bit widths and fitted affine ranges for the three feedback streams:
// the shared latent, then the two polarization-specific latents.
struct QuantConfig {
  int q_sa = 3;
  int q_sp = 3;
  QuantRange w, v, h;

  void validate() const;
};

// Bit budget with the nominal (possibly fractional) stream length
// 2 n_s n_t / (3 sigma); kept as an exact rational.
Rational feedback_bits(int n_s, int n_t, const Rational& sigma, int q_sa,
                       int q_sp);

// Integer companion using the realized stream length M.
std::int64_t actual_bits(int latent_len, int q_sa, int q_sp);

// code = round((clamp(v, lo, hi) - lo) / (hi - lo) * (2^q - 1)).
// Out-of-range inputs clamp; never throws on values.
std::vector<std::uint32_t> quantize(const std::vector<float>& v, int q,
                                    const QuantRange& r);

// v_hat = lo + code / (2^q - 1) * (hi - lo).
std::vector<float> dequantize(const std::vector<std::uint32_t>& codes, int q,
                              const QuantRange& r);

// Min/max of the training-set latents per stream, widened by a 1% symmetric
// margin (or a tiny epsilon when a stream is constant). Bit widths in the
// result keep their defaults.
QuantConfig fit_ranges(CsiAutoencoder<float>& model,
                       const CsiDataset& train_normalized, int chunk = 100);

void ranges_to_kv(const QuantConfig& qc, KvFile& kv);
QuantConfig ranges_from_kv(const KvFile& kv);

struct BitReport {
  Rational nominal;
  std::int64_t actual = 0;
};

struct QuantizedInference {
  std::vector<CsiPair> recovered;
  BitReport bits;
};

// Encoder -> per-stream quantize -> dequantize -> decoder, all in eval mode;
// recovered pairs are denormalized against the dataset scaler.
QuantizedInference quantized_inference(CsiAutoencoder<float>& model,
                                       const CsiDataset& normalized,
                                       const QuantConfig& qc, int chunk = 100);

// --- feedback serialization ---

struct QuantStream {
  std::uint8_t q = 0;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint32_t> codes;
};

// Per stream: u8 q, f64 lo, f64 hi, then codes packed little-endian at
// q bits per element, zero-padded to a byte boundary.
std::vector<std::uint8_t> pack_streams(const std::vector<QuantStream>& streams);

// Element counts per stream must be supplied; the padding makes the packed
// form non-self-describing.
std::vector<QuantStream> unpack_streams(const std::vector<std::uint8_t>& bytes,
                                        const std::vector<std::int64_t>& counts);

}  // namespace dpcsi
