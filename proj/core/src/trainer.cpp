// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "dpcsi/evalkit.hpp"

namespace dpcsi {

namespace {

std::string fmt17(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::vector<std::int64_t> shuffled_indices(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n; i > 1; --i)
    std::swap(order[static_cast<std::size_t>(i - 1)],
              order[rng.uniform_int(static_cast<std::uint32_t>(i))]);
  return order;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& all,
                      const std::vector<std::int64_t>& order, std::int64_t b0,
                      std::int64_t bn) {
  Shape s = all.shape();
  const std::int64_t row = all.numel() / s[0];
  s[0] = bn;
  Tensor<T> out(std::move(s));
  for (std::int64_t i = 0; i < bn; ++i)
    std::copy_n(all.data() + order[static_cast<std::size_t>(b0 + i)] * row, row,
                out.data() + i * row);
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& all, std::int64_t r0, std::int64_t rn) {
  Shape s = all.shape();
  const std::int64_t row = all.numel() / s[0];
  s[0] = rn;
  Tensor<T> out(std::move(s));
  std::copy_n(all.data() + r0 * row, rn * row, out.data());
  return out;
}

template <typename T>
Tensor<T> flat(const Tensor<T>& t) {
  const std::int64_t n = t.dim(0);
  Tensor<T> out({n, t.numel() / n});
  std::copy_n(t.data(), t.numel(), out.data());
  return out;
}

template <typename T>
Tensor<T> flat_concat(const Tensor<T>& a, const Tensor<T>& b) {
  const std::int64_t n = a.dim(0);
  const std::int64_t ra = a.numel() / n, rb = b.numel() / n;
  Tensor<T> out({n, ra + rb});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ra, ra, out.data() + i * (ra + rb));
    std::copy_n(b.data() + i * rb, rb, out.data() + i * (ra + rb) + ra);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch < 2) throw std::invalid_argument("train: batch must be >= 2");
  if (chunk < 2) throw std::invalid_argument("train: chunk must be >= 2");
  if (!(clip_norm > 0.0))
    throw std::invalid_argument("train: clip_norm must be positive");
  if (ckpt_every < 0)
    throw std::invalid_argument("train: ckpt_every must be >= 0");
}

void TrainConfig::to_kv(KvFile& kv) const {
  kv.set("train.lr", fmt17(lr));
  kv.set("train.lambda", fmt17(lambda));
  kv.set("train.delta_nats", fmt17(delta_nats));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batch", std::to_string(batch));
  kv.set("train.chunk", std::to_string(chunk));
  kv.set("train.clip_norm", fmt17(clip_norm));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.ckpt_every", std::to_string(ckpt_every));
}

TrainConfig TrainConfig::from_kv(const KvFile& kv) {
  TrainConfig c;
  if (kv.has("train.lr")) c.lr = std::stod(kv.get("train.lr"));
  if (kv.has("train.lambda")) c.lambda = std::stod(kv.get("train.lambda"));
  if (kv.has("train.delta_nats"))
    c.delta_nats = std::stod(kv.get("train.delta_nats"));
  if (kv.has("train.epochs")) c.epochs = std::stoi(kv.get("train.epochs"));
  if (kv.has("train.batch")) c.batch = std::stoi(kv.get("train.batch"));
  if (kv.has("train.chunk")) c.chunk = std::stoi(kv.get("train.chunk"));
  if (kv.has("train.clip_norm"))
    c.clip_norm = std::stod(kv.get("train.clip_norm"));
  if (kv.has("train.seed")) c.seed = std::stoull(kv.get("train.seed"));
  if (kv.has("train.ckpt_every"))
    c.ckpt_every = std::stoi(kv.get("train.ckpt_every"));
  c.validate();
  return c;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream ss;
  ss << "epoch,train_mse,train_mi,val_nmse_db,mi_w,mi_pol,wall_s\n";
  for (const auto& r : rows) {
    ss << r.epoch << "," << fmt17(r.train_mse) << "," << fmt17(r.train_mi)
       << "," << fmt17(r.val_nmse_db) << "," << fmt17(r.mi_w) << ","
       << fmt17(r.mi_pol) << "," << fmt17(r.wall_s) << "\n";
  }
  return ss.str();
}

std::string TrainHistory::csv_without_wall() const {
  std::ostringstream ss;
  ss << "epoch,train_mse,train_mi,val_nmse_db,mi_w,mi_pol\n";
  for (const auto& r : rows) {
    ss << r.epoch << "," << fmt17(r.train_mse) << "," << fmt17(r.train_mi)
       << "," << fmt17(r.val_nmse_db) << "," << fmt17(r.mi_w) << ","
       << fmt17(r.mi_pol) << "\n";
  }
  return ss.str();
}

TrainHistory TrainHistory::from_csv(const std::string& text) {
  TrainHistory h;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ls, tok, ',')) cols.push_back(tok);
    if (cols.size() != 7)
      throw io_error(io_errc::bad_value, "history: malformed row");
    EpochRecord r;
    r.epoch = std::stoi(cols[0]);
    r.train_mse = std::stod(cols[1]);
    r.train_mi = std::stod(cols[2]);
    r.val_nmse_db = std::stod(cols[3]);
    r.mi_w = std::stod(cols[4]);
    r.mi_pol = std::stod(cols[5]);
    r.wall_s = std::stod(cols[6]);
    h.rows.push_back(r);
  }
  return h;
}

std::pair<MiEstimatorConfig, MiEstimatorConfig> mi_configs(
    const ModelConfig& cfg, std::int64_t hidden) {
  const std::int64_t d = static_cast<std::int64_t>(cfg.n_s) * cfg.n_t;
  MiEstimatorConfig c1, c2;
  c1.x_dim = 2 * d;
  c1.y_dim = d;
  c1.hidden = hidden;
  c1.leaky_slope = cfg.leaky_slope;
  c2.x_dim = d;
  c2.y_dim = d;
  c2.hidden = hidden;
  c2.leaky_slope = cfg.leaky_slope;
  return {c1, c2};
}

template <typename T>
ag::Var<T> mse_loss(const ag::Var<T>& rec_v, const ag::Var<T>& rec_h,
                    const Tensor<T>& h_v, const Tensor<T>& h_h) {
  return ag::mse_pair(rec_v, rec_h, h_v, h_h);
}

template <typename T>
StepMetrics train_step_main(CsiAutoencoder<T>& model, MiEstimator<T>& f1,
                            MiEstimator<T>& f2, const Tensor<T>& h_v,
                            const Tensor<T>& h_h, Adam<T>& opt,
                            const TrainConfig& cfg) {
  const std::int64_t b = h_v.dim(0);
  const std::int64_t d = h_v.numel() / b;  // real map size per polarization
  StepMetrics m;
  model.params().zero_grad();
  const std::int64_t chunk = std::min<std::int64_t>(cfg.chunk, b);

  for (std::int64_t c0 = 0; c0 < b; c0 += chunk) {
    const std::int64_t cn = std::min(chunk, b - c0);
    Tensor<T> hv_c = slice_rows(h_v, c0, cn);
    Tensor<T> hh_c = slice_rows(h_h, c0, cn);
    auto vin = ag::make_const(hv_c);
    auto hin = ag::make_const(hh_c);

    auto fwd = model.forward(vin, hin, ag::BnMode::Train);
    auto mse = ag::mse_pair(fwd.rec_v, fwd.rec_h, hv_c, hh_c);
    ag::Var<T> loss = mse;
    double regv = 0.0;
    if (cfg.lambda > 0.0) {
      auto x1 = ag::make_const(flat_concat(hv_c, hh_c));
      auto y1 = ag::reshape(fwd.enc.w, {cn, d});
      auto x2 = ag::make_const(flat(hv_c));
      auto y2 = ag::make_const(flat(hh_c));
      auto reg = mi_regularizer(f1, x1, y1, f2, x2, y2, cfg.delta_nats);
      regv = static_cast<double>(reg->value[0]);
      loss = ag::add(mse, ag::scale(reg, static_cast<T>(cfg.lambda)));
    }
    const double lv = static_cast<double>(loss->value[0]);
    if (!std::isfinite(lv)) {
      m.finite = false;
      return m;
    }
    const double w = static_cast<double>(cn) / static_cast<double>(b);
    m.mse += static_cast<double>(mse->value[0]) * w;
    m.mi_penalty += regv * w;
    ag::backward(ag::scale(loss, static_cast<T>(w)));
  }
  m.grad_norm_model = opt.clip_global_norm(cfg.clip_norm);
  opt.step();
  return m;
}

template <typename T>
StepMetrics train_step_mi(CsiAutoencoder<T>& model, MiEstimator<T>& f1,
                          MiEstimator<T>& f2, const Tensor<T>& h_v,
                          const Tensor<T>& h_h, Adam<T>& opt1, Adam<T>& opt2,
                          const TrainConfig& cfg) {
  const std::int64_t b = h_v.dim(0);
  StepMetrics m;
  f1.params().zero_grad();
  f2.params().zero_grad();
  const std::int64_t chunk = std::min<std::int64_t>(cfg.chunk, b);

  for (std::int64_t c0 = 0; c0 < b; c0 += chunk) {
    const std::int64_t cn = std::min(chunk, b - c0);
    Tensor<T> hv_c = slice_rows(h_v, c0, cn);
    Tensor<T> hh_c = slice_rows(h_h, c0, cn);

    Tensor<T> w_val;
    {
      ag::NoGradGuard ng;
      auto enc = model.encode(ag::make_const(hv_c), ag::make_const(hh_c),
                              ag::BnMode::TrainPure);
      w_val = enc.w->value;
    }

    auto x1 = ag::make_const(flat_concat(hv_c, hh_c));
    auto y1 = ag::make_const(flat(w_val));
    auto nll1 = club_nll_loss(f1, x1, y1);
    auto x2 = ag::make_const(flat(hv_c));
    auto y2 = ag::make_const(flat(hh_c));
    auto nll2 = club_nll_loss(f2, x2, y2);

    const double v1 = static_cast<double>(nll1->value[0]);
    const double v2 = static_cast<double>(nll2->value[0]);
    if (!std::isfinite(v1) || !std::isfinite(v2)) {
      m.finite = false;
      return m;
    }
    const double w = static_cast<double>(cn) / static_cast<double>(b);
    m.nll1 += v1 * w;
    m.nll2 += v2 * w;
    ag::backward(ag::scale(nll1, static_cast<T>(w)));
    ag::backward(ag::scale(nll2, static_cast<T>(w)));
  }
  m.grad_norm_mi = std::max(opt1.clip_global_norm(cfg.clip_norm),
                            opt2.clip_global_norm(cfg.clip_norm));
  opt1.step();
  opt2.step();
  return m;
}

FitOutput fit(const CsiDataset& train_set, const CsiDataset& val_set,
              const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (!train_set.scaler || !val_set.scaler)
    throw std::invalid_argument("fit: datasets must be normalized");
  if (train_set.scaler->lo != val_set.scaler->lo ||
      train_set.scaler->hi != val_set.scaler->hi)
    throw std::invalid_argument("fit: train and val normalizers differ");
  for (const CsiDataset* ds : {&train_set, &val_set})
    if (ds->n_s != mcfg.n_s || ds->n_t != mcfg.n_t)
      throw std::invalid_argument("fit: dataset grid does not match the model");
  const std::int64_t n = static_cast<std::int64_t>(train_set.size());
  const std::int64_t nv = static_cast<std::int64_t>(val_set.size());
  if (n < 2 || nv < 2)
    throw std::invalid_argument("fit: need at least two samples per split");

  const bool use_mi = tcfg.lambda > 0.0;
  CsiAutoencoder<float> model;
  model.build(mcfg, tcfg.seed);
  auto [c1, c2] = mi_configs(mcfg);
  MiEstimator<float> f1, f2;
  if (use_mi) {
    f1.build(c1, substream(tcfg.seed, "mi1"));
    f2.build(c2, substream(tcfg.seed, "mi2"));
  }

  Adam<float> opt(model.params().learnable(), tcfg.lr);
  std::optional<Adam<float>> opt1, opt2;
  if (use_mi) {
    opt1.emplace(f1.params().learnable(), tcfg.lr);
    opt2.emplace(f2.params().learnable(), tcfg.lr);
  }

  std::vector<int> all_train(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    all_train[static_cast<std::size_t>(i)] = static_cast<int>(i);
  std::vector<int> all_val(static_cast<std::size_t>(nv));
  for (std::int64_t i = 0; i < nv; ++i)
    all_val[static_cast<std::size_t>(i)] = static_cast<int>(i);
  const Tensor<float> tv_all = maps_from_dataset<float>(train_set, all_train, false);
  const Tensor<float> th_all = maps_from_dataset<float>(train_set, all_train, true);
  const Tensor<float> vv_all = maps_from_dataset<float>(val_set, all_val, false);
  const Tensor<float> vh_all = maps_from_dataset<float>(val_set, all_val, true);
  const CsiDataset val_denorm = invert_normalizer(val_set);
  const std::int64_t d = static_cast<std::int64_t>(mcfg.n_s) * mcfg.n_t;

  FitOutput out;
  auto snapshot = [&](std::uint64_t step, int epoch,
                      double val_db) -> CheckpointData {
    CheckpointData c;
    mcfg.to_kv(c.config);
    tcfg.to_kv(c.config);
    c.config.set("norm.lo", fmt17(train_set.scaler->lo));
    c.config.set("norm.hi", fmt17(train_set.scaler->hi));
    c.config.set("epoch", std::to_string(epoch));
    c.config.set("val_nmse_db", fmt17(val_db));
    store_to_checkpoint(model.params(), "", c);
    if (use_mi) {
      store_to_checkpoint(f1.params(), "mi1.", c);
      store_to_checkpoint(f2.params(), "mi2.", c);
    }
    c.step = step;
    return c;
  };
  auto persist = [&]() {
    if (tcfg.out_dir.empty()) return;
    std::filesystem::create_directories(tcfg.out_dir);
    save_checkpoint(out.best, tcfg.out_dir + "/best.ckpt");
    save_checkpoint(out.final, tcfg.out_dir + "/final.ckpt");
    std::ofstream hf(tcfg.out_dir + "/history.csv", std::ios::binary);
    hf << out.history.to_csv();
  };

  if (tcfg.epochs == 0) {
    out.final = snapshot(0, -1, std::numeric_limits<double>::quiet_NaN());
    out.best = out.final;
    persist();
    return out;
  }

  Rng bat(substream(tcfg.seed, "batching"));
  std::uint64_t gstep = 0;
  CheckpointData last_good =
      snapshot(0, -1, std::numeric_limits<double>::quiet_NaN());

  for (int ep = 0; ep < tcfg.epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    auto order = shuffled_indices(n, bat);
    double mse_acc = 0.0, reg_acc = 0.0;
    std::int64_t used = 0;
    bool bad = false;
    std::string why;

    for (std::int64_t b0 = 0; b0 + 2 <= n; b0 += tcfg.batch) {
      const std::int64_t bn = std::min<std::int64_t>(tcfg.batch, n - b0);
      if (bn < 2) break;
      Tensor<float> hv_b = gather_rows(tv_all, order, b0, bn);
      Tensor<float> hh_b = gather_rows(th_all, order, b0, bn);

      auto m1 = train_step_main(model, f1, f2, hv_b, hh_b, opt, tcfg);
      if (!m1.finite) {
        bad = true;
        why = "non-finite training loss";
        break;
      }
      mse_acc += m1.mse * static_cast<double>(bn);
      reg_acc += m1.mi_penalty * static_cast<double>(bn);
      used += bn;

      if (use_mi) {
        auto m2 = train_step_mi(model, f1, f2, hv_b, hh_b, *opt1, *opt2, tcfg);
        if (!m2.finite) {
          bad = true;
          why = "non-finite estimator loss";
          break;
        }
      }
      ++gstep;
    }
    if (bad) {
      out.aborted = true;
      out.abort_reason = why;
      break;
    }

    const auto rec = reconstruct(model, val_set, tcfg.chunk);
    const double val_db = nmse_db(rec, val_denorm.samples);
    double mi_w = std::numeric_limits<double>::quiet_NaN();
    double mi_pol = std::numeric_limits<double>::quiet_NaN();
    if (use_mi) {
      Tensor<float> wv({nv, 2, mcfg.n_s, mcfg.n_t / 2});
      {
        ag::NoGradGuard ng;
        const std::int64_t row = wv.numel() / nv;
        for (std::int64_t c0 = 0; c0 < nv; c0 += tcfg.chunk) {
          const std::int64_t cn = std::min<std::int64_t>(tcfg.chunk, nv - c0);
          auto enc = model.encode(ag::make_const(slice_rows(vv_all, c0, cn)),
                                  ag::make_const(slice_rows(vh_all, c0, cn)),
                                  ag::BnMode::Eval);
          std::copy_n(enc.w->value.data(), cn * row, wv.data() + c0 * row);
        }
      }
      mi_w = club_mi_estimate(f1, flat_concat(vv_all, vh_all), flat(wv));
      mi_pol = club_mi_estimate(f2, flat(vv_all), flat(vh_all));
    }
    if (!std::isfinite(val_db)) {
      out.aborted = true;
      out.abort_reason = "non-finite validation metric";
      break;
    }

    EpochRecord r;
    r.epoch = ep;
    r.train_mse = used ? mse_acc / static_cast<double>(used) : 0.0;
    r.train_mi = used ? reg_acc / static_cast<double>(used) : 0.0;
    r.val_nmse_db = val_db;
    r.mi_w = mi_w;
    r.mi_pol = mi_pol;
    r.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    out.history.rows.push_back(r);

    last_good = snapshot(gstep, ep, val_db);
    if (val_db < out.best_val_db) {
      out.best_val_db = val_db;
      out.best_epoch = ep;
      out.best = last_good;
    }
    if (!tcfg.out_dir.empty() && tcfg.ckpt_every > 0 &&
        (ep + 1) % tcfg.ckpt_every == 0) {
      std::filesystem::create_directories(tcfg.out_dir);
      save_checkpoint(last_good,
                      tcfg.out_dir + "/epoch_" + std::to_string(ep) + ".ckpt");
    }
    // Flush after every epoch so long runs are observable and resumable
    // from disk; the end state is byte-identical either way.
    out.final = last_good;
    if (out.best_epoch < 0) out.best = out.final;
    persist();
  }

  out.final = last_good;
  if (out.best_epoch < 0) out.best = out.final;
  persist();
  return out;
}

#define DPCSI_TRAINER_FNS(T)                                               \
  template ag::Var<T> mse_loss<T>(const ag::Var<T>&, const ag::Var<T>&,    \
                                  const Tensor<T>&, const Tensor<T>&);     \
  template StepMetrics train_step_main<T>(                                 \
      CsiAutoencoder<T>&, MiEstimator<T>&, MiEstimator<T>&,                \
      const Tensor<T>&, const Tensor<T>&, Adam<T>&, const TrainConfig&);   \
  template StepMetrics train_step_mi<T>(                                   \
      CsiAutoencoder<T>&, MiEstimator<T>&, MiEstimator<T>&,                \
      const Tensor<T>&, const Tensor<T>&, Adam<T>&, Adam<T>&,              \
      const TrainConfig&);

DPCSI_TRAINER_FNS(float)
DPCSI_TRAINER_FNS(double)
#undef DPCSI_TRAINER_FNS

}  // namespace dpcsi
