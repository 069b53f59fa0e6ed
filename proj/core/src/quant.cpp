// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dpcsi/autograd.hpp"

namespace dpcsi {

namespace {

void check_q(int q) {
  if (q < 1 || q > 16)
    throw std::invalid_argument("quant: bits must lie in [1, 16], got " +
                                std::to_string(q));
}

void check_range(const QuantRange& r, const char* name) {
  if (!(r.lo < r.hi))
    throw std::invalid_argument(std::string("quant: range for stream '") +
                                name + "' needs lo < hi");
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void QuantConfig::validate() const {
  check_q(q_sa);
  check_q(q_sp);
  check_range(w, "w");
  check_range(v, "v");
  check_range(h, "h");
}

Rational feedback_bits(int n_s, int n_t, const Rational& sigma, int q_sa,
                       int q_sp) {
  check_q(q_sa);
  check_q(q_sp);
  if (n_s < 1 || n_t < 1)
    throw std::invalid_argument("feedback_bits: grid must be positive");
  if (sigma <= Rational(0))
    throw std::invalid_argument("feedback_bits: sigma must be positive");
  const Rational stream_len =
      Rational(2) * Rational(n_s) * Rational(n_t) / (Rational(3) * sigma);
  return stream_len * Rational(q_sa + 2 * q_sp);
}

std::int64_t actual_bits(int latent_len, int q_sa, int q_sp) {
  check_q(q_sa);
  check_q(q_sp);
  if (latent_len < 1)
    throw std::invalid_argument("actual_bits: latent length must be >= 1");
  return static_cast<std::int64_t>(latent_len) *
         static_cast<std::int64_t>(q_sa + 2 * q_sp);
}

std::vector<std::uint32_t> quantize(const std::vector<float>& v, int q,
                                    const QuantRange& r) {
  check_q(q);
  check_range(r, "?");
  const double levels = static_cast<double>((1u << q) - 1u);
  const double span = r.hi - r.lo;
  std::vector<std::uint32_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = std::clamp(static_cast<double>(v[i]), r.lo, r.hi);
    const long code = std::lround((x - r.lo) / span * levels);
    out[i] = static_cast<std::uint32_t>(
        std::clamp<long>(code, 0, static_cast<long>(levels)));
  }
  return out;
}

std::vector<float> dequantize(const std::vector<std::uint32_t>& codes, int q,
                              const QuantRange& r) {
  check_q(q);
  check_range(r, "?");
  const double levels = static_cast<double>((1u << q) - 1u);
  const std::uint32_t cap = (1u << q) - 1u;
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > cap)
      throw std::invalid_argument("dequantize: code " +
                                  std::to_string(codes[i]) +
                                  " exceeds 2^q - 1");
    out[i] = static_cast<float>(
        r.lo + static_cast<double>(codes[i]) / levels * (r.hi - r.lo));
  }
  return out;
}

namespace {

// Runs the encoder over the dataset in chunks and hands each latent batch
// to the sink as three contiguous [cn * M] slabs.
template <typename Fn>
void for_each_latent_chunk(CsiAutoencoder<float>& model,
                           const CsiDataset& normalized, int chunk, Fn&& fn) {
  if (!normalized.scaler)
    throw std::invalid_argument("quant: dataset is not normalized");
  if (chunk < 1) throw std::invalid_argument("quant: chunk must be >= 1");
  const auto& cfg = model.config();
  if (normalized.n_s != cfg.n_s || normalized.n_t != cfg.n_t)
    throw std::invalid_argument("quant: dataset grid mismatch");
  const std::int64_t n = static_cast<std::int64_t>(normalized.size());
  ag::NoGradGuard ng;
  for (std::int64_t c0 = 0; c0 < n; c0 += chunk) {
    const std::int64_t cn = std::min<std::int64_t>(chunk, n - c0);
    std::vector<int> idx(static_cast<std::size_t>(cn));
    for (std::int64_t i = 0; i < cn; ++i)
      idx[static_cast<std::size_t>(i)] = static_cast<int>(c0 + i);
    auto hv = ag::make_const(maps_from_dataset<float>(normalized, idx, false));
    auto hh = ag::make_const(maps_from_dataset<float>(normalized, idx, true));
    auto enc = model.encode(hv, hh, ag::BnMode::Eval);
    fn(cn, enc.z.z_w->value, enc.z.z_v->value, enc.z.z_h->value);
  }
}

}  // namespace

QuantConfig fit_ranges(CsiAutoencoder<float>& model,
                       const CsiDataset& train_normalized, int chunk) {
  struct MinMax {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void eat(const Tensor<float>& t) {
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        lo = std::min(lo, static_cast<double>(t[i]));
        hi = std::max(hi, static_cast<double>(t[i]));
      }
    }
    QuantRange widen() const {
      const double span = hi - lo;
      const double eps = span > 0.0 ? 0.01 * span : 1e-6;
      return {lo - eps, hi + eps};
    }
  };
  MinMax mw, mv, mh;
  bool any = false;
  for_each_latent_chunk(model, train_normalized, chunk,
                        [&](std::int64_t, const Tensor<float>& zw,
                            const Tensor<float>& zv, const Tensor<float>& zh) {
                          mw.eat(zw);
                          mv.eat(zv);
                          mh.eat(zh);
                          any = true;
                        });
  if (!any) throw std::invalid_argument("fit_ranges: empty dataset");
  QuantConfig qc;
  qc.w = mw.widen();
  qc.v = mv.widen();
  qc.h = mh.widen();
  return qc;
}

void ranges_to_kv(const QuantConfig& qc, KvFile& kv) {
  auto put = [&](const std::string& key, double val) {
    kv.set(key, fmt17(val));
  };
  put("quant.w.lo", qc.w.lo);
  put("quant.w.hi", qc.w.hi);
  put("quant.v.lo", qc.v.lo);
  put("quant.v.hi", qc.v.hi);
  put("quant.h.lo", qc.h.lo);
  put("quant.h.hi", qc.h.hi);
}

QuantConfig ranges_from_kv(const KvFile& kv) {
  QuantConfig qc;
  auto get = [&](const std::string& key) {
    return std::stod(kv.get(key));
  };
  qc.w = {get("quant.w.lo"), get("quant.w.hi")};
  qc.v = {get("quant.v.lo"), get("quant.v.hi")};
  qc.h = {get("quant.h.lo"), get("quant.h.hi")};
  return qc;
}

QuantizedInference quantized_inference(CsiAutoencoder<float>& model,
                                       const CsiDataset& normalized,
                                       const QuantConfig& qc, int chunk) {
  qc.validate();
  const auto& cfg = model.config();
  const int m = cfg.latent_len();
  const int na = cfg.n_t / 2;
  const std::int64_t plane = static_cast<std::int64_t>(cfg.n_s) * na;
  const double lo = normalized.scaler ? normalized.scaler->lo : 0.0;
  const double span =
      normalized.scaler ? normalized.scaler->hi - normalized.scaler->lo : 1.0;

  QuantizedInference out;
  out.bits.nominal =
      feedback_bits(cfg.n_s, cfg.n_t, cfg.sigma, qc.q_sa, qc.q_sp);
  out.bits.actual = actual_bits(m, qc.q_sa, qc.q_sp);
  out.recovered.reserve(normalized.size());

  ag::NoGradGuard ng;
  auto roundtrip = [](const Tensor<float>& z, int q, const QuantRange& r) {
    std::vector<float> flat(z.data(), z.data() + z.numel());
    const std::vector<float> back = dequantize(quantize(flat, q, r), q, r);
    Tensor<float> t(z.shape());
    std::copy(back.begin(), back.end(), t.data());
    return t;
  };

  for_each_latent_chunk(
      model, normalized, chunk,
      [&](std::int64_t cn, const Tensor<float>& zw, const Tensor<float>& zv,
          const Tensor<float>& zh) {
        LatentTriple<float> z;
        z.z_w = ag::make_const(roundtrip(zw, qc.q_sa, qc.w));
        z.z_v = ag::make_const(roundtrip(zv, qc.q_sp, qc.v));
        z.z_h = ag::make_const(roundtrip(zh, qc.q_sp, qc.h));
        auto rec = model.decode(z, ag::BnMode::Eval);
        for (std::int64_t i = 0; i < cn; ++i) {
          const float* pv = rec.first->value.data() + i * 2 * plane;
          const float* ph = rec.second->value.data() + i * 2 * plane;
          CsiPair p;
          p.h_v.resize(cfg.n_s, na);
          p.h_h.resize(cfg.n_s, na);
          for (std::int64_t e = 0; e < plane; ++e) {
            p.h_v.data()[e] = std::complex<float>(
                static_cast<float>(pv[e] * span + lo),
                static_cast<float>(pv[plane + e] * span + lo));
            p.h_h.data()[e] = std::complex<float>(
                static_cast<float>(ph[e] * span + lo),
                static_cast<float>(ph[plane + e] * span + lo));
          }
          out.recovered.push_back(std::move(p));
        }
      });
  (void)m;
  return out;
}

std::vector<std::uint8_t> pack_streams(
    const std::vector<QuantStream>& streams) {
  std::vector<std::uint8_t> out;
  auto put_u64 = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b)
      out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
  };
  for (const auto& s : streams) {
    check_q(s.q);
    const std::uint32_t cap = (1u << s.q) - 1u;
    out.push_back(s.q);
    put_u64(std::bit_cast<std::uint64_t>(s.lo));
    put_u64(std::bit_cast<std::uint64_t>(s.hi));
    std::uint64_t acc = 0;
    int nbits = 0;
    for (std::uint32_t code : s.codes) {
      if (code > cap)
        throw std::invalid_argument("pack_streams: code exceeds 2^q - 1");
      acc |= static_cast<std::uint64_t>(code) << nbits;
      nbits += s.q;
      while (nbits >= 8) {
        out.push_back(static_cast<std::uint8_t>(acc & 0xffu));
        acc >>= 8;
        nbits -= 8;
      }
    }
    if (nbits > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xffu));
  }
  return out;
}

std::vector<QuantStream> unpack_streams(
    const std::vector<std::uint8_t>& bytes,
    const std::vector<std::int64_t>& counts) {
  std::vector<QuantStream> out;
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw io_error(io_errc::bad_value, "unpack_streams: truncated payload");
  };
  auto get_u64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
      v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * b);
    return v;
  };
  for (std::int64_t count : counts) {
    if (count < 0)
      throw std::invalid_argument("unpack_streams: negative element count");
    QuantStream s;
    need(1);
    s.q = bytes[pos++];
    check_q(s.q);
    s.lo = std::bit_cast<double>(get_u64());
    s.hi = std::bit_cast<double>(get_u64());
    s.codes.resize(static_cast<std::size_t>(count));
    std::uint64_t acc = 0;
    int nbits = 0;
    const std::uint32_t mask = (1u << s.q) - 1u;
    for (std::int64_t i = 0; i < count; ++i) {
      while (nbits < s.q) {
        need(1);
        acc |= static_cast<std::uint64_t>(bytes[pos++]) << nbits;
        nbits += 8;
      }
      s.codes[static_cast<std::size_t>(i)] =
          static_cast<std::uint32_t>(acc & mask);
      acc >>= s.q;
      nbits -= s.q;
    }
    acc = 0;
    nbits = 0;
    out.push_back(std::move(s));
  }
  if (pos != bytes.size())
    throw io_error(io_errc::bad_value,
                   "unpack_streams: trailing bytes after final stream");
  return out;
}

}  // namespace dpcsi
