// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpcsi/channel.hpp"
#include "dpcsi/kv.hpp"
#include "dpcsi/version.hpp"

namespace dpcsi {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'C', 'S', 'I', '1', '\n', '\0'};
constexpr std::uint32_t kFlagNormalized = 1u;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t take_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw io_error(io_errc::truncated,
                   std::string("dataset: truncated before ") + what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

double take_f64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw io_error(io_errc::truncated,
                   std::string("dataset: truncated before ") + what);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void write_dataset(const CsiDataset& ds, const std::string& path) {
  if (ds.n_s < 1 || ds.n_t < 2 || ds.n_t % 2 != 0)
    throw io_error(io_errc::bad_dims, "dataset: invalid dimensions on write");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "dataset: cannot open " + path);

  f.write(kMagic, 8);
  put_u32(f, static_cast<std::uint32_t>(ds.n_s));
  put_u32(f, static_cast<std::uint32_t>(ds.n_t));
  put_u32(f, static_cast<std::uint32_t>(ds.samples.size()));
  put_u32(f, ds.scaler ? kFlagNormalized : 0u);
  put_f64(f, ds.scaler ? ds.scaler->lo : 0.0);
  put_f64(f, ds.scaler ? ds.scaler->hi : 0.0);

  const std::size_t plane =
      static_cast<std::size_t>(ds.n_s) * (ds.n_t / 2);
  for (const auto& s : ds.samples) {
    if (s.h_v.rows() != ds.n_s || s.h_v.cols() != ds.n_t / 2 ||
        s.h_h.rows() != ds.n_s || s.h_h.cols() != ds.n_t / 2)
      throw io_error(io_errc::bad_dims, "dataset: sample shape mismatch");
    f.write(reinterpret_cast<const char*>(s.h_v.data()),
            static_cast<std::streamsize>(plane * sizeof(std::complex<float>)));
    f.write(reinterpret_cast<const char*>(s.h_h.data()),
            static_cast<std::streamsize>(plane * sizeof(std::complex<float>)));
  }
  if (!f) throw io_error(io_errc::io_fail, "dataset: write failed for " + path);
  f.close();

  KvFile man;
  man.set("format", "DPCSI1");
  man.set("generator", kGeneratorVersion);
  man.set("scenario", ds.scenario.name);
  man.set("n_paths", std::to_string(ds.scenario.n_paths));
  man.set("phase_coupling", fmt_double(ds.scenario.phase_coupling));
  man.set("delay_spread", fmt_double(ds.scenario.delay_spread));
  man.set("angle_spread", fmt_double(ds.scenario.angle_spread));
  man.set("antenna_shadow", fmt_double(ds.scenario.antenna_shadow));
  man.set("seed", std::to_string(ds.seed));
  man.set("count", std::to_string(ds.samples.size()));
  man.set("n_s", std::to_string(ds.n_s));
  man.set("n_t", std::to_string(ds.n_t));
  man.set("normalized", ds.scaler ? "1" : "0");
  kv_write_file(man, path + ".manifest");
}

CsiDataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "dataset: cannot open " + path);

  char magic[8];
  if (!f.read(magic, 8))
    throw io_error(io_errc::truncated, "dataset: file shorter than header");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw io_error(io_errc::bad_magic, "dataset: bad magic in " + path);

  CsiDataset ds;
  const std::uint32_t n_s = take_u32(f, "n_s");
  const std::uint32_t n_t = take_u32(f, "n_t");
  const std::uint32_t count = take_u32(f, "count");
  const std::uint32_t flags = take_u32(f, "flags");
  const double lo = take_f64(f, "scaler lo");
  const double hi = take_f64(f, "scaler hi");

  if (n_s < 1 || n_t < 2 || n_t % 2 != 0 || n_s > (1u << 20) ||
      n_t > (1u << 20))
    throw io_error(io_errc::bad_dims, "dataset: implausible dimensions");
  if (flags & ~kFlagNormalized)
    throw io_error(io_errc::bad_value, "dataset: unknown flag bits");
  if ((flags & kFlagNormalized) && !(hi > lo))
    throw io_error(io_errc::bad_value, "dataset: invalid scaler range");

  ds.n_s = static_cast<int>(n_s);
  ds.n_t = static_cast<int>(n_t);
  if (flags & kFlagNormalized) ds.scaler = NormScaler{lo, hi};

  const std::size_t plane = static_cast<std::size_t>(n_s) * (n_t / 2);
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.h_v.resize(n_s, n_t / 2);
    s.h_h.resize(n_s, n_t / 2);
    if (!f.read(reinterpret_cast<char*>(s.h_v.data()),
                static_cast<std::streamsize>(plane *
                                             sizeof(std::complex<float>))) ||
        !f.read(reinterpret_cast<char*>(s.h_h.data()),
                static_cast<std::streamsize>(plane *
                                             sizeof(std::complex<float>))))
      throw io_error(io_errc::truncated, "dataset: payload shorter than count");
  }
  // make sure there is no trailing garbage
  char probe;
  if (f.read(&probe, 1))
    throw io_error(io_errc::bad_value, "dataset: trailing bytes after payload");

  std::ifstream mf(path + ".manifest");
  if (mf) {
    mf.close();
    try {
      const KvFile man = kv_read_file(path + ".manifest");
      ds.scenario.name = man.get_or("scenario", "custom");
      if (man.has("n_paths")) ds.scenario.n_paths = std::stoi(man.get("n_paths"));
      if (man.has("phase_coupling"))
        ds.scenario.phase_coupling = std::stod(man.get("phase_coupling"));
      if (man.has("delay_spread"))
        ds.scenario.delay_spread = std::stod(man.get("delay_spread"));
      if (man.has("angle_spread"))
        ds.scenario.angle_spread = std::stod(man.get("angle_spread"));
      if (man.has("antenna_shadow"))
        ds.scenario.antenna_shadow = std::stod(man.get("antenna_shadow"));
      if (man.has("seed")) ds.seed = std::stoull(man.get("seed"));
    } catch (const std::exception&) {
      // sidecar is advisory; the binary payload stays authoritative
    }
  }
  return ds;
}

}  // namespace dpcsi
