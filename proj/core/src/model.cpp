// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dpcsi {

namespace {

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

template <typename T>
void check_finite(const ag::Var<T>& v, const std::string& where) {
  const T* p = v->value.data();
  const std::int64_t n = v->value.numel();
  for (std::int64_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(p[i])))
      throw numeric_error(where + ": non-finite activation");
}

template <typename T>
void expect_map_shape(const ag::Var<T>& v, int channels, int n_s, int na,
                      const std::string& where) {
  const auto& s = v->value.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != n_s || s[3] != na) {
    throw shape_error(where + ": expected [B, " + std::to_string(channels) +
                      ", " + std::to_string(n_s) + ", " + std::to_string(na) +
                      "], got " + shape_to_string(s));
  }
}

}  // namespace

int latent_length(int n_s, int n_t, const Rational& sigma) {
  if (n_s < 1 || n_t < 1)
    throw std::invalid_argument("latent_length: grid dims must be positive");
  if (!(sigma > Rational(1)))
    throw std::invalid_argument("latent_length: sigma must exceed 1");
  const Rational nominal =
      Rational(2) * Rational(n_s) * Rational(n_t) / (Rational(3) * sigma);
  const long long m = rat_round_half_down(nominal);
  if (m < 1)
    throw std::invalid_argument(
        "latent_length: code length rounds to zero for this configuration");
  return static_cast<int>(m);
}

void ModelConfig::validate() const {
  if (n_s < 1 || n_t < 2 || n_t % 2 != 0)
    throw std::invalid_argument("model: need n_s >= 1 and even n_t >= 2");
  if (!(sigma > Rational(1)))
    throw std::invalid_argument("model: sigma must exceed 1");
  if (conv_channels < 1)
    throw std::invalid_argument("model: conv_channels must be >= 1");
  if (depth < 1) throw std::invalid_argument("model: depth must be >= 1");
  if (width < 1) throw std::invalid_argument("model: width must be >= 1");
  if (branch_kernels.empty())
    throw std::invalid_argument("model: branch_kernels must be non-empty");
  std::set<int> seen;
  for (int k : branch_kernels) {
    if (k != 0 && (k < 3 || k % 2 == 0))
      throw std::invalid_argument(
          "model: branch kernels must be 0 (identity) or odd and >= 3");
    if (!seen.insert(k).second)
      throw std::invalid_argument("model: duplicate branch kernel");
  }
  if (!(leaky_slope > 0.0) || leaky_slope >= 1.0)
    throw std::invalid_argument("model: leaky_slope must lie in (0, 1)");
  if (!(bn_momentum >= 0.0) || bn_momentum >= 1.0)
    throw std::invalid_argument("model: bn_momentum must lie in [0, 1)");
  if (!(bn_eps > 0.0)) throw std::invalid_argument("model: bn_eps must be > 0");
  (void)latent_len();  // raises if the code length would round to zero
}

void ModelConfig::to_kv(KvFile& kv) const {
  kv.set("n_s", std::to_string(n_s));
  kv.set("n_t", std::to_string(n_t));
  kv.set("sigma", rat_to_string(sigma));
  std::ostringstream ks;
  for (std::size_t i = 0; i < branch_kernels.size(); ++i) {
    if (i) ks << ",";
    ks << branch_kernels[i];
  }
  kv.set("branch_kernels", ks.str());
  kv.set("conv_channels", std::to_string(conv_channels));
  kv.set("depth", std::to_string(depth));
  kv.set("width", std::to_string(width));
  kv.set("leaky_slope", fmt_double(leaky_slope));
  kv.set("bn_momentum", fmt_double(bn_momentum));
  kv.set("bn_eps", fmt_double(bn_eps));
}

ModelConfig ModelConfig::from_kv(const KvFile& kv) {
  ModelConfig c;
  if (kv.has("n_s")) c.n_s = std::stoi(kv.get("n_s"));
  if (kv.has("n_t")) c.n_t = std::stoi(kv.get("n_t"));
  if (kv.has("sigma")) c.sigma = rat_parse(kv.get("sigma"));
  if (kv.has("branch_kernels")) {
    c.branch_kernels.clear();
    std::istringstream is(kv.get("branch_kernels"));
    std::string tok;
    while (std::getline(is, tok, ','))
      if (!tok.empty()) c.branch_kernels.push_back(std::stoi(tok));
  }
  if (kv.has("conv_channels")) c.conv_channels = std::stoi(kv.get("conv_channels"));
  if (kv.has("depth")) c.depth = std::stoi(kv.get("depth"));
  if (kv.has("width")) c.width = std::stoi(kv.get("width"));
  if (kv.has("leaky_slope")) c.leaky_slope = std::stod(kv.get("leaky_slope"));
  if (kv.has("bn_momentum")) c.bn_momentum = std::stod(kv.get("bn_momentum"));
  if (kv.has("bn_eps")) c.bn_eps = std::stod(kv.get("bn_eps"));
  c.validate();
  return c;
}

FcParams count_fc_params(int n_s, int n_t, const Rational& sigma) {
  if (!(sigma > Rational(1)))
    throw std::invalid_argument("count_fc_params: sigma must exceed 1");
  FcParams out;
  out.p0 = Rational(4) * Rational(n_s) * Rational(n_s) * Rational(n_t) *
           Rational(n_t) / sigma;
  out.p1 = out.p0 / Rational(2);
  out.p2 = out.p0 * Rational(2, 3);
  return out;
}

// --- blocks ---

template <typename T>
void ExtractBlock<T>::build(ParamStore<T>& store, const std::string& prefix,
                            const ModelConfig& cfg, int in_ch, Rng& rng) {
  const int C = cfg.conv_channels;
  const T slope = static_cast<T>(cfg.leaky_slope);
  const T mom = static_cast<T>(cfg.bn_momentum);
  const T eps = static_cast<T>(cfg.bn_eps);
  lift.build(store, prefix + ".lift", in_ch, C, 3, 3, slope, mom, eps, rng);
  branches.clear();
  for (int k : cfg.branch_kernels) {
    Branch br;
    br.k = k;
    if (k != 0) {
      const std::string kp = prefix + ".k" + std::to_string(k);
      br.a.build(store, kp + "a", C, C, 1, k, slope, mom, eps, rng);
      br.b.build(store, kp + "b", C, C, k, 1, slope, mom, eps, rng);
    }
    branches.push_back(std::move(br));
  }
  mask.build(store, prefix + ".mask", C, 2, 1, 1, slope, mom, eps, rng);
  inp.build(store, prefix + ".inp", in_ch, 2, 1, 1, rng);
}

template <typename T>
ag::Var<T> ExtractBlock<T>::forward(const ag::Var<T>& x,
                                    ag::BnMode mode) const {
  auto lifted = lift.forward(x, mode);
  ag::Var<T> sum;
  for (const auto& br : branches) {
    auto o = br.k == 0 ? lifted : br.b.forward(br.a.forward(lifted, mode), mode);
    sum = sum ? ag::add(sum, o) : o;
  }
  auto m = mask.forward(sum, mode);
  auto g = inp.forward(x);
  return ag::mul(g, m);
}

template <typename T>
void RecoverBlock<T>::build(ParamStore<T>& store, const std::string& prefix,
                            const ModelConfig& cfg, Rng& rng) {
  const int C = cfg.conv_channels;
  const T slope = static_cast<T>(cfg.leaky_slope);
  const T mom = static_cast<T>(cfg.bn_momentum);
  const T eps = static_cast<T>(cfg.bn_eps);
  lift.build(store, prefix + ".lift", 2, C, 3, 3, slope, mom, eps, rng);
  branches.clear();
  for (int k : cfg.branch_kernels) {
    Branch br;
    br.k = k;
    if (k != 0) {
      const std::string kp = prefix + ".k" + std::to_string(k);
      br.a.build(store, kp + "a", C, C, k, k, slope, mom, eps, rng);
      br.b.build(store, kp + "b", C, C, k, k, slope, mom, eps, rng);
    }
    branches.push_back(std::move(br));
  }
  mask.build(store, prefix + ".mask", C, 2, 1, 1, slope, mom, eps, rng);
  inp.build(store, prefix + ".inp", 2, 2, 1, 1, rng);
}

template <typename T>
ag::Var<T> RecoverBlock<T>::forward(const ag::Var<T>& x,
                                    ag::BnMode mode) const {
  auto lifted = lift.forward(x, mode);
  ag::Var<T> sum;
  for (const auto& br : branches) {
    auto o = br.k == 0 ? lifted : br.b.forward(br.a.forward(lifted, mode), mode);
    sum = sum ? ag::add(sum, o) : o;
  }
  auto m = mask.forward(sum, mode);
  auto g = inp.forward(x);
  return ag::add(ag::mul(g, m), x);
}

// --- autoencoder ---

template <typename T>
void CsiAutoencoder<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  cfg_ = cfg;
  params_ = ParamStore<T>{};
  Rng rng(substream(seed, "init"));

  sa_.build(params_, "enc.sa", cfg_, 4, rng);
  sp_v_.build(params_, "enc.sp_v", cfg_, 4, rng);
  sp_h_.build(params_, "enc.sp_h", cfg_, 4, rng);

  const std::int64_t flat =
      static_cast<std::int64_t>(cfg_.n_s) * cfg_.n_t;
  const int m = cfg_.latent_len();
  fc_w_.build(params_, "enc.fc_w", flat, m, rng);
  fc_v_.build(params_, "enc.fc_v", flat, m, rng);
  fc_h_.build(params_, "enc.fc_h", flat, m, rng);

  auto build_pol = [&](PolDecoder& d, const std::string& prefix) {
    d.fc.build(params_, prefix + ".fc", 2 * static_cast<std::int64_t>(m), flat,
               rng);
    d.paths.assign(static_cast<std::size_t>(cfg_.width), {});
    for (int i = 0; i < cfg_.width; ++i) {
      d.paths[i].resize(static_cast<std::size_t>(cfg_.depth));
      for (int j = 0; j < cfg_.depth; ++j)
        d.paths[i][j].build(params_,
                            prefix + ".p" + std::to_string(i) + ".b" +
                                std::to_string(j),
                            cfg_, rng);
    }
    d.head.build(params_, prefix + ".head", 2, 2, 1, 1, rng);
  };
  build_pol(dec_v_, "dec.v");
  build_pol(dec_h_, "dec.h");
}

template <typename T>
typename CsiAutoencoder<T>::EncodeOut CsiAutoencoder<T>::encode(
    const ag::Var<T>& h_v, const ag::Var<T>& h_h, ag::BnMode mode) {
  const int na = cfg_.n_t / 2;
  expect_map_shape(h_v, 2, cfg_.n_s, na, "encoder input (first polarization)");
  expect_map_shape(h_h, 2, cfg_.n_s, na, "encoder input (second polarization)");
  if (h_v->value.dim(0) != h_h->value.dim(0))
    throw shape_error("encoder input: batch sizes differ");
  const std::int64_t b = h_v->value.dim(0);
  const std::int64_t flat = static_cast<std::int64_t>(cfg_.n_s) * cfg_.n_t;

  EncodeOut out;
  out.w = sa_.forward(ag::concat1(h_v, h_h), mode);
  check_finite(out.w, "enc.sa");
  out.u_v = sp_v_.forward(ag::concat1(h_v, out.w), mode);
  check_finite(out.u_v, "enc.sp_v");
  out.u_h = sp_h_.forward(ag::concat1(h_h, out.w), mode);
  check_finite(out.u_h, "enc.sp_h");

  out.z.z_w = fc_w_.forward(ag::reshape(out.w, {b, flat}));
  check_finite(out.z.z_w, "enc.fc_w");
  out.z.z_v = fc_v_.forward(ag::reshape(out.u_v, {b, flat}));
  check_finite(out.z.z_v, "enc.fc_v");
  out.z.z_h = fc_h_.forward(ag::reshape(out.u_h, {b, flat}));
  check_finite(out.z.z_h, "enc.fc_h");
  return out;
}

template <typename T>
ag::Var<T> CsiAutoencoder<T>::decode_pol(const PolDecoder& d,
                                         const ag::Var<T>& z_pol,
                                         const ag::Var<T>& z_w, ag::BnMode mode,
                                         const char* tag) const {
  const std::int64_t b = z_pol->value.dim(0);
  auto f = d.fc.forward(ag::concat1(z_pol, z_w));
  auto r = ag::reshape(f, {b, 2, cfg_.n_s, cfg_.n_t / 2});
  ag::Var<T> sum;
  for (const auto& path : d.paths) {
    auto t = r;
    for (const auto& blk : path) t = blk.forward(t, mode);
    sum = sum ? ag::add(sum, t) : t;
  }
  auto y = ag::sigmoid(d.head.forward(sum));
  check_finite(y, tag);
  return y;
}

template <typename T>
std::pair<ag::Var<T>, ag::Var<T>> CsiAutoencoder<T>::decode(
    const LatentTriple<T>& z, ag::BnMode mode) {
  const int m = cfg_.latent_len();
  for (const auto* v : {&z.z_w, &z.z_v, &z.z_h}) {
    const auto& s = (*v)->value.shape();
    if (s.size() != 2 || s[1] != m)
      throw shape_error("decoder input: expected [B, " + std::to_string(m) +
                        "], got " + shape_to_string(s));
  }
  auto rv = decode_pol(dec_v_, z.z_v, z.z_w, mode, "dec.v");
  auto rh = decode_pol(dec_h_, z.z_h, z.z_w, mode, "dec.h");
  return {rv, rh};
}

template <typename T>
typename CsiAutoencoder<T>::ForwardOut CsiAutoencoder<T>::forward(
    const ag::Var<T>& h_v, const ag::Var<T>& h_h, ag::BnMode mode) {
  ForwardOut out;
  out.enc = encode(h_v, h_h, mode);
  auto [rv, rh] = decode(out.enc.z, mode);
  out.rec_v = rv;
  out.rec_h = rh;
  return out;
}

ParamBreakdown count_params_actual(const ModelConfig& cfg) {
  CsiAutoencoder<float> model;
  model.build(cfg, 0);

  ParamBreakdown out;
  auto module_of = [](const std::string& n) -> std::string {
    for (const char* p :
         {"enc.sa.", "enc.sp_v.", "enc.sp_h.", "dec.v.fc.", "dec.v.head.",
          "dec.h.fc.", "dec.h.head."})
      if (n.rfind(p, 0) == 0) return std::string(p, std::strlen(p) - 1);
    if (n.rfind("enc.fc_", 0) == 0) return "enc.fc";
    if (n.rfind("dec.v.p", 0) == 0) return "dec.v.trunk";
    if (n.rfind("dec.h.p", 0) == 0) return "dec.h.trunk";
    return "other";
  };
  auto bump = [&](const std::string& mod, std::int64_t n) {
    for (auto& [name, cnt] : out.by_module)
      if (name == mod) {
        cnt += n;
        return;
      }
    out.by_module.emplace_back(mod, n);
  };

  auto ends_with = [](const std::string& s, const char* suf) {
    const std::size_t n = std::strlen(suf);
    return s.size() >= n && s.compare(s.size() - n, n, suf) == 0;
  };

  for (const auto& e : model.params().entries()) {
    const std::int64_t n = e.var->value.numel();
    const std::string& name = e.name;
    if (!e.learnable) {
      out.norm_stats += n;
      continue;
    }
    bump(module_of(name), n);
    if (name.rfind("enc.fc_", 0) == 0) {
      (ends_with(name, ".w") ? out.encoder_fc_w : out.encoder_fc_b) += n;
    } else if (name.rfind("dec.v.fc.", 0) == 0 ||
               name.rfind("dec.h.fc.", 0) == 0) {
      (ends_with(name, ".w") ? out.decoder_fc_w : out.decoder_fc_b) += n;
    } else if (name.find(".bn.") != std::string::npos) {
      out.norm += n;
    } else {
      (ends_with(name, ".w") ? out.conv_w : out.conv_b) += n;
    }
  }
  return out;
}

template struct ExtractBlock<float>;
template struct ExtractBlock<double>;
template struct RecoverBlock<float>;
template struct RecoverBlock<double>;
template class CsiAutoencoder<float>;
template class CsiAutoencoder<double>;

}  // namespace dpcsi
