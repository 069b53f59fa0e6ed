// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpcsi/autograd.hpp"
#include "dpcsi/common.hpp"
#include "dpcsi/kv.hpp"
#include "dpcsi/nn.hpp"
#include "dpcsi/rng.hpp"

namespace dpcsi {

// Nominal per-stream code length is 2*n_s*n_t/(3*sigma); the integer length
// rounds to nearest with ties toward the floor.
int latent_length(int n_s, int n_t, const Rational& sigma);

struct ModelConfig {
  int n_s = 32;
  int n_t = 32;
  Rational sigma{8, 1};
  std::vector<int> branch_kernels{0, 3, 5, 7};  // 0 is the identity branch
  int conv_channels = 16;
  int depth = 3;  // recover blocks in series per path
  int width = 5;  // parallel recover paths per polarization
  double leaky_slope = 0.3;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  void validate() const;
  int latent_len() const { return latent_length(n_s, n_t, sigma); }

  void to_kv(KvFile& kv) const;
  static ModelConfig from_kv(const KvFile& kv);
};

// Dense-layer parameter counts for the three framework variants, weights
// only, carried out with the nominal fractional code lengths.
struct FcParams {
  Rational p0, p1, p2;
};
FcParams count_fc_params(int n_s, int n_t, const Rational& sigma);

struct ParamBreakdown {
  std::int64_t encoder_fc_w = 0;
  std::int64_t encoder_fc_b = 0;
  std::int64_t decoder_fc_w = 0;
  std::int64_t decoder_fc_b = 0;
  std::int64_t conv_w = 0;
  std::int64_t conv_b = 0;
  std::int64_t norm = 0;        // scale and shift
  std::int64_t norm_stats = 0;  // running moments (non-learnable)
  std::vector<std::pair<std::string, std::int64_t>> by_module;

  std::int64_t learnable() const {
    return encoder_fc_w + encoder_fc_b + decoder_fc_w + decoder_fc_b + conv_w +
           conv_b + norm;
  }
  std::int64_t total() const { return learnable() + norm_stats; }
};

ParamBreakdown count_params_actual(const ModelConfig& cfg);

template <typename T>
struct LatentTriple {
  ag::Var<T> z_w, z_v, z_h;
};

// Attention extractor: lift to C channels, multi-kernel branch sum, 1x1 mask
// head, gated against a 1x1 projection of the raw input.
template <typename T>
struct ExtractBlock {
  CompositeConv<T> lift;
  struct Branch {
    int k = 0;  // 0 = identity
    CompositeConv<T> a, b;
  };
  std::vector<Branch> branches;
  CompositeConv<T> mask;
  Conv2d<T> inp;

  void build(ParamStore<T>& store, const std::string& prefix,
             const ModelConfig& cfg, int in_ch, Rng& rng);
  ag::Var<T> forward(const ag::Var<T>& x, ag::BnMode mode) const;
};

// Attention recoverer: same scheme with full square branch kernels on
// 2-channel maps, plus an identity shortcut.
template <typename T>
struct RecoverBlock {
  CompositeConv<T> lift;
  struct Branch {
    int k = 0;
    CompositeConv<T> a, b;
  };
  std::vector<Branch> branches;
  CompositeConv<T> mask;
  Conv2d<T> inp;

  void build(ParamStore<T>& store, const std::string& prefix,
             const ModelConfig& cfg, Rng& rng);
  ag::Var<T> forward(const ag::Var<T>& x, ag::BnMode mode) const;
};

template <typename T>
class CsiAutoencoder {
 public:
  struct EncodeOut {
    ag::Var<T> w, u_v, u_h;
    LatentTriple<T> z;
  };
  struct ForwardOut {
    EncodeOut enc;
    ag::Var<T> rec_v, rec_h;
  };

  void build(const ModelConfig& cfg, std::uint64_t seed);

  // Inputs are [B, 2, n_s, n_t/2] per polarization, values in [0, 1].
  EncodeOut encode(const ag::Var<T>& h_v, const ag::Var<T>& h_h,
                   ag::BnMode mode);
  std::pair<ag::Var<T>, ag::Var<T>> decode(const LatentTriple<T>& z,
                                           ag::BnMode mode);
  ForwardOut forward(const ag::Var<T>& h_v, const ag::Var<T>& h_h,
                     ag::BnMode mode);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

 private:
  struct PolDecoder {
    Linear<T> fc;
    std::vector<std::vector<RecoverBlock<T>>> paths;  // [width][depth]
    Conv2d<T> head;
  };

  ag::Var<T> decode_pol(const PolDecoder& d, const ag::Var<T>& z_pol,
                        const ag::Var<T>& z_w, ag::BnMode mode,
                        const char* tag) const;

  ModelConfig cfg_;
  ParamStore<T> params_;
  ExtractBlock<T> sa_, sp_v_, sp_h_;
  Linear<T> fc_w_, fc_v_, fc_h_;
  PolDecoder dec_v_, dec_h_;
};

extern template class CsiAutoencoder<float>;
extern template class CsiAutoencoder<double>;
extern template struct ExtractBlock<float>;
extern template struct ExtractBlock<double>;
extern template struct RecoverBlock<float>;
extern template struct RecoverBlock<double>;

}  // namespace dpcsi
