// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>

#include "dpcsi/miest.hpp"
#include "dpcsi/trainer.hpp"

namespace dpcsi {

namespace {

constexpr double kFdStep = 1e-4;
constexpr int kSamplesPerTensor = 8;

Tensor<double> flat2(const Tensor<double>& t) {
  const std::int64_t n = t.dim(0);
  Tensor<double> out({n, t.numel() / n});
  std::copy_n(t.data(), t.numel(), out.data());
  return out;
}

Tensor<double> flat2_concat(const Tensor<double>& a, const Tensor<double>& b) {
  const std::int64_t n = a.dim(0);
  const std::int64_t ra = a.numel() / n, rb = b.numel() / n;
  Tensor<double> out({n, ra + rb});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ra, ra, out.data() + i * (ra + rb));
    std::copy_n(b.data() + i * rb, rb, out.data() + i * (ra + rb) + ra);
  }
  return out;
}

struct Fixture {
  CsiAutoencoder<double> model;
  MiEstimator<double> f1, f2;
  Tensor<double> hv, hh;
  Tensor<double> w_frozen;  // shared-map snapshot for the likelihood terms
  std::int64_t b = 4;
  std::int64_t d = 0;

  // One differentiable scalar exercising every parameter group at once:
  // reconstruction error, a soft distance between the two estimates, and
  // both estimator likelihoods. The likelihoods score a frozen shared-map
  // snapshot (as the estimator update step does), so the scalar's analytic
  // gradient is exactly its finite-difference derivative; pure-batch
  // normalization keeps repeated evaluations bit-identical.
  ag::Var<double> loss() {
    auto vin = ag::make_const(hv);
    auto hin = ag::make_const(hh);
    auto fwd = model.forward(vin, hin, ag::BnMode::TrainPure);
    auto mse = ag::mse_pair(fwd.rec_v, fwd.rec_h, hv, hh);

    auto x1 = ag::make_const(flat2_concat(hv, hh));
    auto y1 = ag::reshape(fwd.enc.w, {b, d});
    auto x2 = ag::make_const(flat2(hv));
    auto y2 = ag::make_const(flat2(hh));

    auto i1 = club_mi_node(f1, x1, y1);
    auto i2 = club_mi_node(f2, x2, y2);
    auto gap = ag::square(ag::add_scalar(ag::sub(i1, i2), -0.1));

    auto nll1 = club_nll_loss(f1, x1, ag::make_const(w_frozen));
    auto nll2 = club_nll_loss(f2, x2, y2);

    return ag::add(ag::add(mse, ag::scale(gap, 1e-2)), ag::add(nll1, nll2));
  }

  double loss_value() {
    ag::NoGradGuard ng;
    return loss()->value[0];
  }
};

}  // namespace

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  for (const auto& g : groups)
    os << g.name << ": max_rel_err=" << g.max_rel_err
       << " worst=" << (g.worst_tensor.empty() ? "-" : g.worst_tensor)
       << (g.pass ? " ok" : " FAIL") << "\n";
  os << "tolerance=" << tolerance << " overall=" << (pass ? "ok" : "FAIL")
     << "\n";
  return os.str();
}

GradCheckReport finite_diff_gradcheck(std::uint64_t seed,
                                      const std::string& corrupt_tensor) {
  ModelConfig mcfg;
  mcfg.n_s = 8;
  mcfg.n_t = 8;
  mcfg.sigma = Rational(8);
  mcfg.branch_kernels = {0, 3};
  mcfg.conv_channels = 4;
  mcfg.depth = 1;
  mcfg.width = 1;
  mcfg.validate();

  Fixture fx;
  fx.model.build(mcfg, seed);
  auto [c1, c2] = mi_configs(mcfg, 16);
  fx.f1.build(c1, substream(seed, "mi1"));
  fx.f2.build(c2, substream(seed, "mi2"));
  fx.d = static_cast<std::int64_t>(mcfg.n_s) * mcfg.n_t;

  const int na = mcfg.n_t / 2;
  fx.hv = Tensor<double>({fx.b, 2, mcfg.n_s, na});
  fx.hh = Tensor<double>({fx.b, 2, mcfg.n_s, na});
  Rng rng(substream(seed, "data"));
  for (std::int64_t i = 0; i < fx.hv.numel(); ++i) fx.hv[i] = rng.uniform01();
  for (std::int64_t i = 0; i < fx.hh.numel(); ++i) fx.hh[i] = rng.uniform01();
  {
    ag::NoGradGuard ng;
    auto enc = fx.model.encode(ag::make_const(fx.hv), ag::make_const(fx.hh),
                               ag::BnMode::TrainPure);
    fx.w_frozen = flat2(enc.w->value);
  }

  fx.model.params().zero_grad();
  fx.f1.params().zero_grad();
  fx.f2.params().zero_grad();
  ag::backward(fx.loss());

  bool corrupt_seen = false;
  auto analytic = [&](const ParamStore<double>::Entry& e, std::int64_t i) {
    if (e.name == corrupt_tensor) {
      corrupt_seen = true;
      return 0.0;
    }
    if (!e.var->grad_ready) return 0.0;
    return e.var->grad[i];
  };

  GradCheckReport report;
  const double base = fx.loss_value();
  auto run_group = [&](const std::string& gname, ParamStore<double>& store,
                       const char* prefix) {
    GradCheckGroup g;
    g.name = gname;
    for (const auto& e : store.entries()) {
      if (!e.learnable) continue;
      if (prefix && e.name.rfind(prefix, 0) != 0) continue;
      const std::int64_t n = e.var->value.numel();
      const std::int64_t k = std::min<std::int64_t>(kSamplesPerTensor, n);
      const double floor = 1e-6 * std::max(1.0, std::fabs(base));
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t idx = j * n / k;
        const double saved = e.var->value[idx];
        const double a = analytic(e, idx);
        auto probe = [&](double h) {
          e.var->value[idx] = saved + h;
          const double up = fx.loss_value();
          e.var->value[idx] = saved - h;
          const double dn = fx.loss_value();
          e.var->value[idx] = saved;
          const double fd = (up - dn) / (2.0 * h);
          return std::fabs(a - fd) /
                 std::max({std::fabs(a), std::fabs(fd), floor});
        };
        double rel = probe(kFdStep);
        // The loss has piecewise-linear activations; a probe window that
        // lands across one of their corners makes the central difference
        // meaningless. Shrinking the window moves it off the corner, while
        // a wrong analytic gradient keeps failing at any step size.
        if (rel > report.tolerance) rel = std::min(rel, probe(kFdStep / 16));
        if (rel > report.tolerance) rel = std::min(rel, probe(kFdStep / 256));
        if (rel > g.max_rel_err) {
          g.max_rel_err = rel;
          g.worst_tensor = e.name;
        }
      }
    }
    g.pass = g.max_rel_err <= report.tolerance;
    report.groups.push_back(std::move(g));
  };

  run_group("encoder", fx.model.params(), "enc.");
  run_group("decoder", fx.model.params(), "dec.");
  run_group("mi1", fx.f1.params(), nullptr);
  run_group("mi2", fx.f2.params(), nullptr);

  if (!corrupt_tensor.empty() && !corrupt_seen)
    throw std::invalid_argument("gradcheck: unknown tensor " + corrupt_tensor);

  report.pass = true;
  for (const auto& g : report.groups) report.pass = report.pass && g.pass;
  return report;
}

}  // namespace dpcsi
