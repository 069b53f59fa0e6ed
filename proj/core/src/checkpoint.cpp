// SPDX-License-Identifier: Apache-2.0
#include "dpcsi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dpcsi/common.hpp"

namespace dpcsi {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t take_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw io_error(io_errc::truncated,
                   std::string("checkpoint: truncated before ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t take_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw io_error(io_errc::truncated,
                   std::string("checkpoint: truncated before ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor<float>* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void CheckpointData::add(const std::string& name, Tensor<float> t) {
  if (find(name))
    throw std::invalid_argument("checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

void save_checkpoint(const CheckpointData& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "checkpoint: cannot open " + path);

  f.write(kMagic, 8);
  std::ostringstream cfg;
  for (const auto& [k, v] : ckpt.config.items) cfg << k << "=" << v << "\n";
  const std::string block = cfg.str();
  put_u32(f, static_cast<std::uint32_t>(block.size()));
  f.write(block.data(), static_cast<std::streamsize>(block.size()));

  put_u32(f, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d)
      put_u32(f, static_cast<std::uint32_t>(t.shape()[d]));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  put_u64(f, ckpt.step);
  if (!f)
    throw io_error(io_errc::io_fail, "checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(io_errc::io_fail, "checkpoint: cannot open " + path);

  char magic[8];
  if (!f.read(magic, 8))
    throw io_error(io_errc::truncated, "checkpoint: file shorter than header");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw io_error(io_errc::bad_magic, "checkpoint: bad magic in " + path);

  CheckpointData out;
  const std::uint32_t blen = take_u32(f, "config block length");
  std::string block(blen, '\0');
  if (blen && !f.read(block.data(), blen))
    throw io_error(io_errc::truncated, "checkpoint: truncated config block");
  out.config = kv_parse(block);

  const std::uint32_t count = take_u32(f, "tensor count");
  out.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = take_u32(f, "tensor name length");
    if (nlen == 0 || nlen > 4096)
      throw io_error(io_errc::bad_value, "checkpoint: implausible name length");
    std::string name(nlen, '\0');
    if (!f.read(name.data(), nlen))
      throw io_error(io_errc::truncated, "checkpoint: truncated tensor name");
    const std::uint32_t rank = take_u32(f, "tensor rank");
    if (rank > 8)
      throw io_error(io_errc::bad_dims, "checkpoint: implausible rank");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = take_u32(f, "tensor dim");
      if (dim == 0 || dim > (1u << 28))
        throw io_error(io_errc::bad_dims, "checkpoint: implausible dimension");
      shape[d] = static_cast<std::int64_t>(dim);
      numel *= shape[d];
    }
    Tensor<float> t(std::move(shape));
    if (!f.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(numel * sizeof(float))))
      throw io_error(io_errc::truncated, "checkpoint: truncated tensor data");
    out.add(name, std::move(t));
  }
  out.step = take_u64(f, "step counter");
  char probe;
  if (f.read(&probe, 1))
    throw io_error(io_errc::bad_value,
                   "checkpoint: trailing bytes after step counter");
  return out;
}

void store_to_checkpoint(const ParamStore<float>& store,
                         const std::string& prefix, CheckpointData& ckpt) {
  for (const auto& e : store.entries()) ckpt.add(prefix + e.name, e.var->value);
}

void checkpoint_to_store(const CheckpointData& ckpt, const std::string& prefix,
                         ParamStore<float>& store) {
  for (const auto& e : store.entries()) {
    const Tensor<float>* t = ckpt.find(prefix + e.name);
    if (!t)
      throw io_error(io_errc::bad_value,
                     "checkpoint: missing tensor '" + prefix + e.name + "'");
    if (!t->same_shape(e.var->value))
      throw io_error(io_errc::bad_dims,
                     "checkpoint: shape mismatch for '" + prefix + e.name +
                         "': file " + shape_to_string(t->shape()) +
                         " vs model " + shape_to_string(e.var->value.shape()));
    e.var->value = *t;
  }
}

}  // namespace dpcsi
