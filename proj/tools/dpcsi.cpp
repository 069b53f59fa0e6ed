// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. One command is one process; every command that
// produces files writes a manifest of its fully resolved configuration, and
// re-running with --config <manifest> reproduces the outputs bit for bit.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "dpcsi/channel.hpp"
#include "dpcsi/checkpoint.hpp"
#include "dpcsi/evalkit.hpp"
#include "dpcsi/miest.hpp"
#include "dpcsi/model.hpp"
#include "dpcsi/quant.hpp"
#include "dpcsi/trainer.hpp"
#include "dpcsi/version.hpp"

namespace {

using namespace dpcsi;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using ManifestRows = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const std::string& path, const std::string& command,
                    const ManifestRows& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "cannot write " + path);
  f << "# dpcsi " << kVersion << " " << command << "\n";
  for (const auto& [k, v] : rows) f << k << " = " << v << "\n";
  if (!f) throw io_error(io_errc::io_fail, "write failed for " + path);
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw std::invalid_argument("not a number: '" + tok + "' in '" + csv +
                                  "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty list: '" + csv + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (double v : parse_grid(csv)) out.push_back(static_cast<int>(v));
  return out;
}

CsiDataset read_raw_dataset(const std::string& path) {
  CsiDataset ds = read_dataset(path);
  if (ds.scaler)
    throw std::invalid_argument(path + ": expected a raw (unnormalized) set");
  return ds;
}

// A checkpoint carries its model configuration and normalizer, so a model
// can be reattached from the file alone.
struct LoadedModel {
  CheckpointData ckpt;
  ModelConfig mcfg;
  CsiAutoencoder<float> model;
  NormScaler scaler;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel lm;
  lm.ckpt = load_checkpoint(path);
  lm.mcfg = ModelConfig::from_kv(lm.ckpt.config);
  lm.model.build(lm.mcfg, 0);
  checkpoint_to_store(lm.ckpt, "", lm.model.params());
  lm.scaler.lo = std::stod(lm.ckpt.config.get("norm.lo"));
  lm.scaler.hi = std::stod(lm.ckpt.config.get("norm.hi"));
  return lm;
}

CsiDataset normalize_for(const LoadedModel& lm, const CsiDataset& raw) {
  if (raw.n_s != lm.mcfg.n_s || raw.n_t != lm.mcfg.n_t)
    throw std::invalid_argument("dataset grid does not match the checkpoint");
  return apply_normalizer(raw, lm.scaler).data;
}

// ----------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::string scenario = "cdla";
  int count = 1000;
  int ns = 32, nt = 32;
  std::uint64_t seed = 1;
  std::string out;
  int paths = 0;
  double coupling = -1.0, delay = -1.0, angle = -1.0, shadow = -1.0;
};

void cmd_gen_data(CLI::App* app) {
  auto opt = std::make_shared<GenDataOpts>();
  app->add_option("--scenario", opt->scenario,
                  "preset name: cdla, cdlb, cdlc, custom");
  app->add_option("--count", opt->count, "number of samples");
  app->add_option("--ns", opt->ns, "subbands");
  app->add_option("--nt", opt->nt, "transmit antennas (both polarizations)");
  app->add_option("--seed", opt->seed, "generator seed");
  app->add_option("--out", opt->out, "output dataset path")->required();
  app->add_option("--paths", opt->paths, "override: multipath count");
  app->add_option("--coupling", opt->coupling,
                  "override: polarization coupling in [0,1]");
  app->add_option("--delay", opt->delay, "override: delay spread");
  app->add_option("--angle", opt->angle, "override: angle spread");
  app->add_option("--shadow", opt->shadow, "override: antenna shadow sigma");

  app->callback([app, opt] {
    ScenarioConfig sc = scenario_preset(opt->scenario);
    if (app->count("--paths")) sc.n_paths = opt->paths;
    if (app->count("--coupling")) sc.phase_coupling = opt->coupling;
    if (app->count("--delay")) sc.delay_spread = opt->delay;
    if (app->count("--angle")) sc.angle_spread = opt->angle;
    if (app->count("--shadow")) sc.antenna_shadow = opt->shadow;
    CsiDataset ds = generate_dataset(sc, opt->count, opt->ns, opt->nt,
                                     opt->seed);
    write_dataset(ds, opt->out);
    write_manifest(opt->out + ".run.kv", "gen-data",
                   {{"scenario", sc.name},
                    {"count", std::to_string(opt->count)},
                    {"ns", std::to_string(opt->ns)},
                    {"nt", std::to_string(opt->nt)},
                    {"seed", std::to_string(opt->seed)},
                    {"out", opt->out},
                    {"paths", std::to_string(sc.n_paths)},
                    {"coupling", fmt17(sc.phase_coupling)},
                    {"delay", fmt17(sc.delay_spread)},
                    {"angle", fmt17(sc.angle_spread)},
                    {"shadow", fmt17(sc.antenna_shadow)}});
    std::printf("wrote %s: %d samples, %dx%d, scenario %s\n",
                opt->out.c_str(), opt->count, opt->ns, opt->nt,
                sc.name.c_str());
  });
}

// --------------------------------------------------------------- inspect-gcs

struct InspectOpts {
  std::string data;
  std::string out;
};

void cmd_inspect_gcs(CLI::App* app) {
  auto opt = std::make_shared<InspectOpts>();
  app->add_option("--data", opt->data, "dataset path")->required();
  app->add_option("--out", opt->out, "optional report directory");

  app->callback([opt] {
    CsiDataset ds = read_raw_dataset(opt->data);
    if (ds.samples.empty()) throw std::invalid_argument("empty dataset");
    GcsProfile acc;
    for (const auto& s : ds.samples) {
      GcsProfile g = gcs_profile(s);
      acc.original += g.original;
      acc.real_part += g.real_part;
      acc.imag_part += g.imag_part;
      acc.magnitude += g.magnitude;
      acc.phase += g.phase;
    }
    const double n = static_cast<double>(ds.samples.size());
    const std::vector<std::pair<std::string, double>> rows = {
        {"original", acc.original / n}, {"real", acc.real_part / n},
        {"imag", acc.imag_part / n},    {"magnitude", acc.magnitude / n},
        {"phase", acc.phase / n}};
    std::printf("%-10s %s\n", "input", "mean_gcs");
    for (const auto& [k, v] : rows) std::printf("%-10s %.6f\n", k.c_str(), v);
    if (!opt->out.empty()) {
      std::filesystem::create_directories(opt->out);
      write_manifest(opt->out + "/manifest.kv", "inspect-gcs",
                     {{"data", opt->data}, {"out", opt->out}});
      std::ofstream f(opt->out + "/gcs.csv", std::ios::binary);
      f << "input,mean_gcs\n";
      for (const auto& [k, v] : rows) f << k << "," << fmt17(v) << "\n";
    }
  });
}

// -------------------------------------------------------------------- train

struct TrainOpts {
  std::string data, val, out;
  std::string sigma = "8";
  int epochs = 100;
  int batch = 200;
  int chunk = 50;
  double lr = 1e-3;
  double lambda = 1e-5;
  double mi_target_bits = 0.0;
  double clip = 5.0;
  std::uint64_t seed = 0;
  int depth = 3, width = 5, channels = 16;
  std::string kernels = "0,3,5,7";
  int ckpt_every = 0;
};

ManifestRows train_manifest_rows(const TrainOpts& o) {
  return {{"data", o.data},
          {"val", o.val},
          {"out", o.out},
          {"sigma", o.sigma},
          {"epochs", std::to_string(o.epochs)},
          {"batch", std::to_string(o.batch)},
          {"chunk", std::to_string(o.chunk)},
          {"lr", fmt17(o.lr)},
          {"lambda", fmt17(o.lambda)},
          {"mi-target-bits", fmt17(o.mi_target_bits)},
          {"clip-norm", fmt17(o.clip)},
          {"seed", std::to_string(o.seed)},
          {"depth", std::to_string(o.depth)},
          {"width", std::to_string(o.width)},
          {"channels", std::to_string(o.channels)},
          {"kernels", o.kernels},
          {"ckpt-every", std::to_string(o.ckpt_every)}};
}

void add_train_options(CLI::App* app, TrainOpts& o, bool need_out) {
  app->add_option("--data", o.data, "training dataset")->required();
  app->add_option("--val", o.val, "validation dataset")->required();
  auto* out = app->add_option("--out", o.out, "run directory");
  if (need_out) out->required();
  app->add_option("--sigma", o.sigma, "compression ratio, integer or a/b");
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--batch", o.batch, "batch size");
  app->add_option("--chunk", o.chunk, "normalization sub-batch");
  app->add_option("--lr", o.lr, "learning rate");
  app->add_option("--lambda", o.lambda, "MI regularization weight");
  app->add_option("--mi-target-bits", o.mi_target_bits,
                  "target MI gap in bits (converted to nats)");
  app->add_option("--clip-norm", o.clip, "global gradient clip");
  app->add_option("--seed", o.seed, "run seed");
  app->add_option("--depth", o.depth, "recover blocks per path");
  app->add_option("--width", o.width, "parallel recover paths");
  app->add_option("--channels", o.channels, "convolution channels");
  app->add_option("--kernels", o.kernels, "branch kernels, comma list");
  app->add_option("--ckpt-every", o.ckpt_every,
                  "extra checkpoint every N epochs, 0 disables");
}

ModelConfig model_config_from(const TrainOpts& o, const CsiDataset& train) {
  ModelConfig m;
  m.n_s = train.n_s;
  m.n_t = train.n_t;
  m.sigma = rat_parse(o.sigma);
  m.branch_kernels = parse_int_list(o.kernels);
  m.conv_channels = o.channels;
  m.depth = o.depth;
  m.width = o.width;
  m.validate();
  return m;
}

TrainConfig train_config_from(const TrainOpts& o) {
  TrainConfig t;
  t.lr = o.lr;
  t.lambda = o.lambda;
  t.delta_nats = o.mi_target_bits * std::numbers::ln2;
  t.epochs = o.epochs;
  t.batch = o.batch;
  t.chunk = o.chunk;
  t.clip_norm = o.clip;
  t.seed = o.seed;
  t.ckpt_every = o.ckpt_every;
  t.validate();
  return t;
}

void cmd_train(CLI::App* app) {
  auto opt = std::make_shared<TrainOpts>();
  add_train_options(app, *opt, true);

  app->callback([opt] {
    CsiDataset train_raw = read_raw_dataset(opt->data);
    CsiDataset val_raw = read_raw_dataset(opt->val);
    const ModelConfig mcfg = model_config_from(*opt, train_raw);
    TrainConfig tcfg = train_config_from(*opt);
    tcfg.out_dir = opt->out;

    const NormScaler scaler = fit_normalizer(train_raw);
    CsiDataset train_n = apply_normalizer(train_raw, scaler).data;
    CsiDataset val_n = apply_normalizer(val_raw, scaler).data;

    std::filesystem::create_directories(opt->out);
    write_manifest(opt->out + "/manifest.kv", "train",
                   train_manifest_rows(*opt));

    FitOutput out = fit(train_n, val_n, mcfg, tcfg);
    if (out.aborted)
      throw numeric_error("training aborted: " + out.abort_reason);
    std::printf("best epoch %d, val nmse %.4f dB; outputs in %s\n",
                out.best_epoch, out.best_val_db, opt->out.c_str());
  });
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
  std::string ckpt, data, report;
};

void cmd_eval(CLI::App* app) {
  auto opt = std::make_shared<EvalOpts>();
  app->add_option("--ckpt", opt->ckpt, "checkpoint path")->required();
  app->add_option("--data", opt->data, "evaluation dataset")->required();
  app->add_option("--report", opt->report, "report directory")->required();

  app->callback([opt] {
    LoadedModel lm = load_model(opt->ckpt);
    CsiDataset raw = read_raw_dataset(opt->data);
    CsiDataset norm = normalize_for(lm, raw);
    std::vector<CsiPair> rec = reconstruct(lm.model, norm);

    EvalReport rep;
    rep.per_sample_db = nmse_per_sample_db(rec, raw.samples);
    rep.aggregate_db = nmse_db(rec, raw.samples);
    rep.cdf = nmse_cdf(rep.per_sample_db);
    rep.summary.set("command", "eval");
    rep.summary.set("ckpt", opt->ckpt);
    rep.summary.set("data", opt->data);
    rep.summary.set("samples", std::to_string(raw.samples.size()));
    rep.summary.set("nmse_db", fmt17(rep.aggregate_db));

    std::filesystem::create_directories(opt->report);
    write_manifest(opt->report + "/manifest.kv", "eval",
                   {{"ckpt", opt->ckpt},
                    {"data", opt->data},
                    {"report", opt->report}});
    emit_report(rep, opt->report);
    std::printf("nmse %.4f dB over %zu samples; report in %s\n",
                rep.aggregate_db, raw.samples.size(), opt->report.c_str());
  });
}

// --------------------------------------------------------------- quant-eval

struct QuantEvalOpts {
  std::string ckpt, data, train, report;
  int qsa = 3, qsp = 3;
};

void cmd_quant_eval(CLI::App* app) {
  auto opt = std::make_shared<QuantEvalOpts>();
  app->add_option("--ckpt", opt->ckpt, "checkpoint path")->required();
  app->add_option("--data", opt->data, "evaluation dataset")->required();
  app->add_option("--train", opt->train,
                  "dataset for quantizer range fitting (default: --data)");
  app->add_option("--qsa", opt->qsa, "bits per shared-latent entry");
  app->add_option("--qsp", opt->qsp, "bits per specific-latent entry");
  app->add_option("--report", opt->report, "report directory")->required();

  app->callback([opt] {
    LoadedModel lm = load_model(opt->ckpt);
    CsiDataset raw = read_raw_dataset(opt->data);
    CsiDataset norm = normalize_for(lm, raw);

    const std::string fit_path = opt->train.empty() ? opt->data : opt->train;
    CsiDataset fit_norm =
        opt->train.empty() ? norm
                           : normalize_for(lm, read_raw_dataset(opt->train));
    QuantConfig qc = fit_ranges(lm.model, fit_norm);
    qc.q_sa = opt->qsa;
    qc.q_sp = opt->qsp;
    qc.validate();

    QuantizedInference qi = quantized_inference(lm.model, norm, qc);
    EvalReport rep;
    rep.per_sample_db = nmse_per_sample_db(qi.recovered, raw.samples);
    rep.aggregate_db = nmse_db(qi.recovered, raw.samples);
    rep.cdf = nmse_cdf(rep.per_sample_db);
    rep.summary.set("command", "quant-eval");
    rep.summary.set("ckpt", opt->ckpt);
    rep.summary.set("data", opt->data);
    rep.summary.set("ranges_from", fit_path);
    rep.summary.set("q_sa", std::to_string(opt->qsa));
    rep.summary.set("q_sp", std::to_string(opt->qsp));
    rep.summary.set("bits_nominal", rat_to_string(qi.bits.nominal));
    rep.summary.set("bits_actual", std::to_string(qi.bits.actual));
    rep.summary.set("nmse_db", fmt17(rep.aggregate_db));
    ranges_to_kv(qc, rep.summary);

    std::filesystem::create_directories(opt->report);
    write_manifest(opt->report + "/manifest.kv", "quant-eval",
                   {{"ckpt", opt->ckpt},
                    {"data", opt->data},
                    {"train", opt->train},
                    {"qsa", std::to_string(opt->qsa)},
                    {"qsp", std::to_string(opt->qsp)},
                    {"report", opt->report}});
    emit_report(rep, opt->report);
    std::printf(
        "nmse %.4f dB at (%d,%d) bits: nominal %s, actual %lld; report in "
        "%s\n",
        rep.aggregate_db, opt->qsa, opt->qsp,
        rat_to_string(qi.bits.nominal).c_str(),
        static_cast<long long>(qi.bits.actual), opt->report.c_str());
  });
}

// --------------------------------------------------------------------- bits

struct BitsOpts {
  int ns = 32, nt = 32;
  std::string sigma = "8";
  int qsa = 3, qsp = 3;
};

void cmd_bits(CLI::App* app) {
  auto opt = std::make_shared<BitsOpts>();
  app->add_option("--ns", opt->ns, "subbands");
  app->add_option("--nt", opt->nt, "transmit antennas");
  app->add_option("--sigma", opt->sigma, "compression ratio");
  app->add_option("--qsa", opt->qsa, "bits per shared-latent entry");
  app->add_option("--qsp", opt->qsp, "bits per specific-latent entry");

  app->callback([opt] {
    const Rational sigma = rat_parse(opt->sigma);
    const Rational nominal =
        feedback_bits(opt->ns, opt->nt, sigma, opt->qsa, opt->qsp);
    const int m = latent_length(opt->ns, opt->nt, sigma);
    const std::int64_t actual = actual_bits(m, opt->qsa, opt->qsp);
    std::printf("nominal %s bits, actual %lld bits (latent length %d)\n",
                rat_to_string(nominal).c_str(),
                static_cast<long long>(actual), m);
  });
}

// ------------------------------------------------------------------- params

struct ParamsOpts {
  int ns = 32, nt = 32;
  std::string sigma = "8";
  int depth = 3, width = 5, channels = 16;
  std::string kernels = "0,3,5,7";
};

void cmd_params(CLI::App* app) {
  auto opt = std::make_shared<ParamsOpts>();
  app->add_option("--ns", opt->ns, "subbands");
  app->add_option("--nt", opt->nt, "transmit antennas");
  app->add_option("--sigma", opt->sigma, "compression ratio");
  app->add_option("--depth", opt->depth, "recover blocks per path");
  app->add_option("--width", opt->width, "parallel recover paths");
  app->add_option("--channels", opt->channels, "convolution channels");
  app->add_option("--kernels", opt->kernels, "branch kernels, comma list");

  app->callback([opt] {
    const Rational sigma = rat_parse(opt->sigma);
    const FcParams fc = count_fc_params(opt->ns, opt->nt, sigma);
    std::printf("P0=%s P1=%s P2=%s\n", rat_to_string(fc.p0).c_str(),
                rat_to_string(fc.p1).c_str(), rat_to_string(fc.p2).c_str());
    ModelConfig m;
    m.n_s = opt->ns;
    m.n_t = opt->nt;
    m.sigma = sigma;
    m.branch_kernels = parse_int_list(opt->kernels);
    m.conv_channels = opt->channels;
    m.depth = opt->depth;
    m.width = opt->width;
    m.validate();
    const ParamBreakdown b = count_params_actual(m);
    std::printf("%-14s %s\n", "module", "parameters");
    for (const auto& [name, count] : b.by_module)
      std::printf("%-14s %lld\n", name.c_str(),
                  static_cast<long long>(count));
    std::printf("%-14s %lld\n", "learnable",
                static_cast<long long>(b.learnable()));
    std::printf("%-14s %lld\n", "total", static_cast<long long>(b.total()));
  });
}

// --------------------------------------------------------------------- rate

struct RateOpts {
  std::string ckpt, data, report;
  int users = 4;
  std::string grid = "0,5,10,15,20,25,30";
  int trials = 100;
  std::uint64_t seed = 1;
};

void cmd_rate(CLI::App* app) {
  auto opt = std::make_shared<RateOpts>();
  app->add_option("--ckpt", opt->ckpt, "checkpoint path")->required();
  app->add_option("--data", opt->data, "evaluation dataset")->required();
  app->add_option("--users", opt->users, "users per precoding group");
  app->add_option("--snr-grid", opt->grid, "SNR grid in dB, comma list");
  app->add_option("--trials", opt->trials, "user draws per SNR point");
  app->add_option("--seed", opt->seed, "user sampling seed");
  app->add_option("--report", opt->report, "optional report directory");

  app->callback([opt] {
    LoadedModel lm = load_model(opt->ckpt);
    CsiDataset raw = read_raw_dataset(opt->data);
    CsiDataset norm = normalize_for(lm, raw);
    std::vector<CsiPair> rec = reconstruct(lm.model, norm);
    const std::vector<double> grid = parse_grid(opt->grid);
    RateTable rt = rate_experiment(raw.samples, rec, opt->users, grid,
                                   opt->trials, opt->seed);
    std::printf("%8s %14s %14s\n", "snr_db", "rate_perfect", "rate_recovered");
    for (std::size_t i = 0; i < rt.snr_db.size(); ++i)
      std::printf("%8.1f %14.6f %14.6f\n", rt.snr_db[i], rt.perfect[i],
                  rt.recovered[i]);
    if (rt.regularized_solves > 0)
      std::printf("note: %lld regularized precoder solves\n",
                  static_cast<long long>(rt.regularized_solves));
    if (!opt->report.empty()) {
      std::filesystem::create_directories(opt->report);
      write_manifest(opt->report + "/manifest.kv", "rate",
                     {{"ckpt", opt->ckpt},
                      {"data", opt->data},
                      {"users", std::to_string(opt->users)},
                      {"snr-grid", opt->grid},
                      {"trials", std::to_string(opt->trials)},
                      {"seed", std::to_string(opt->seed)},
                      {"report", opt->report}});
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < rt.snr_db.size(); ++i)
        rows.push_back({rt.snr_db[i], rt.perfect[i], rt.recovered[i]});
      write_table(opt->report + "/rate.csv",
                  "snr_db,rate_perfect,rate_recovered", rows);
    }
  });
}

// ----------------------------------------------------------------- sweep-mi

void cmd_sweep_mi(CLI::App* app) {
  auto opt = std::make_shared<TrainOpts>();
  auto targets = std::make_shared<std::string>("0");
  add_train_options(app, *opt, true);
  app->add_option("--targets", *targets,
                  "MI target gaps in bits, comma list");

  app->callback([opt, targets] {
    CsiDataset train_raw = read_raw_dataset(opt->data);
    CsiDataset val_raw = read_raw_dataset(opt->val);
    const ModelConfig mcfg = model_config_from(*opt, train_raw);
    const NormScaler scaler = fit_normalizer(train_raw);
    CsiDataset train_n = apply_normalizer(train_raw, scaler).data;
    CsiDataset val_n = apply_normalizer(val_raw, scaler).data;

    std::filesystem::create_directories(opt->out);
    ManifestRows rows = train_manifest_rows(*opt);
    rows.emplace_back("targets", *targets);
    write_manifest(opt->out + "/manifest.kv", "sweep-mi", rows);

    const std::vector<double> bits = parse_grid(*targets);
    std::ofstream sf(opt->out + "/sweep.csv", std::ios::binary);
    sf << "target_bits,delta_nats,best_epoch,best_val_nmse_db,mi_gap_nats\n";
    std::printf("%12s %12s %12s %18s %14s\n", "target_bits", "delta_nats",
                "best_epoch", "best_val_nmse_db", "mi_gap_nats");
    for (double b : bits) {
      TrainOpts sub = *opt;
      sub.mi_target_bits = b;
      TrainConfig tcfg = train_config_from(sub);
      std::ostringstream dir;
      dir << opt->out << "/target_" << b;
      tcfg.out_dir = dir.str();
      FitOutput out = fit(train_n, val_n, mcfg, tcfg);
      if (out.aborted)
        throw numeric_error("training aborted: " + out.abort_reason);
      const auto& best = out.history.rows.at(
          static_cast<std::size_t>(out.best_epoch));
      const double gap = std::fabs(best.mi_w - best.mi_pol);
      sf << fmt17(b) << "," << fmt17(tcfg.delta_nats) << ","
         << out.best_epoch << "," << fmt17(out.best_val_db) << ","
         << fmt17(gap) << "\n";
      std::printf("%12g %12.6f %12d %18.4f %14.6f\n", b, tcfg.delta_nats,
                  out.best_epoch, out.best_val_db, gap);
    }
  });
}

// ---------------------------------------------------------------- gradcheck

int g_gradcheck_rc = 0;

struct GradcheckOpts {
  std::uint64_t seed = 1;
  std::string corrupt;
};

void cmd_gradcheck(CLI::App* app) {
  auto opt = std::make_shared<GradcheckOpts>();
  app->add_option("--seed", opt->seed, "fixture seed");
  app->add_option("--corrupt", opt->corrupt,
                  "zero this tensor's gradient to prove the check trips");

  app->callback([opt] {
    GradCheckReport rep = finite_diff_gradcheck(opt->seed, opt->corrupt);
    std::fputs(rep.to_text().c_str(), stdout);
    if (!rep.pass) g_gradcheck_rc = 2;
  });
}

// A manifest is re-applied by expanding it into ordinary options right after
// the subcommand name. Explicit flags come later and take precedence through
// the take-last policy; unknown manifest keys fail parsing loudly.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0].empty() || args[0][0] == '-') return args;
  std::string cfg;
  for (std::size_t i = 1; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size())
        throw std::invalid_argument("--config needs a file argument");
      cfg = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      cfg = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (cfg.empty()) return args;
  const KvFile kv = kv_read_file(cfg);
  std::vector<std::string> out = {args[0]};
  for (const auto& [k, v] : kv.items) {
    out.push_back("--" + k);
    out.push_back(v);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled dual-polarized CSI compression toolkit"};
  app.set_version_flag("--version", dpcsi::kVersion);
  app.require_subcommand(1);

  const std::vector<std::pair<const char*, void (*)(CLI::App*)>> commands = {
      {"gen-data", cmd_gen_data},     {"inspect-gcs", cmd_inspect_gcs},
      {"train", cmd_train},           {"eval", cmd_eval},
      {"quant-eval", cmd_quant_eval}, {"bits", cmd_bits},
      {"params", cmd_params},         {"rate", cmd_rate},
      {"sweep-mi", cmd_sweep_mi},     {"gradcheck", cmd_gradcheck}};
  for (const auto& [name, setup] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->option_defaults()->multi_option_policy(
        CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config",
                    "manifest of a previous run, applied before other flags");
    setup(sub);
  }

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "dpcsi: " << e.what() << "\n";
    return 1;
  }
  return g_gradcheck_rc;
}
