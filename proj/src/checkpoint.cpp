// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace phantom {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error(ErrorCode::kFormat, std::string("PCKPT: truncated ") + what);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact(in, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  read_exact(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::kFormat, std::string("PCKPT: ") + what + " too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_pckpt(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, checked_u32(tensors.size(), "tensor count"));
  for (const auto& t : tensors) {
    put_u32(out, checked_u32(t.name.size(), "name"));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    out.put(static_cast<char>(t.dtype));
    put_u32(out, checked_u32(t.tensor.ndim(), "rank"));
    for (std::size_t d : t.tensor.shape()) put_u32(out, checked_u32(d, "dimension"));
    for (double v : t.tensor.data()) {
      if (t.dtype == StorageDtype::kF64) {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "PCKPT: write failed");
}

std::vector<NamedTensor> read_pckpt(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::kFormat, "PCKPT: bad magic bytes");
  const std::uint32_t version = get_u32(in, "version");
  if (version != kVersion) throw Error(ErrorCode::kFormat, "PCKPT: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in, "tensor count");
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get_u32(in, "name length"));
    read_exact(in, t.name.data(), t.name.size(), "name");
    unsigned char dtype = 0;
    read_exact(in, &dtype, 1, "dtype");
    if (dtype > 1) throw Error(ErrorCode::kFormat, "PCKPT: unknown dtype " + std::to_string(dtype) + " for '" + t.name + "'");
    t.dtype = static_cast<StorageDtype>(dtype);
    Shape shape(get_u32(in, "rank"));
    for (auto& d : shape) d = get_u32(in, "dimension");
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) {
      v = t.dtype == StorageDtype::kF64 ? std::bit_cast<double>(get_u64(in, "data"))
                                        : static_cast<double>(std::bit_cast<float>(get_u32(in, "data")));
    }
    t.tensor = Tensor::from_data(std::move(shape), std::move(data));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void write_pckpt_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_pckpt(out, tensors);
}

std::vector<NamedTensor> read_pckpt_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return read_pckpt(in);
}

void save_checkpoint(const PhantomModel& model, const std::filesystem::path& path, StorageDtype dtype) {
  std::vector<NamedTensor> tensors;
  for (const auto& e : model.params().entries()) tensors.push_back(NamedTensor{e.name, e.tensor, dtype});
  write_pckpt_file(path, tensors);
}

void load_checkpoint(PhantomModel& model, const std::filesystem::path& path) {
  auto tensors = read_pckpt_file(path);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& e : model.params().entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw Error(ErrorCode::kFormat, "checkpoint '" + path.string() + "' lacks parameter '" + e.name + "'");
    const Tensor& src = it->second->tensor;
    if (src.shape() != e.tensor.shape()) {
      throw Error(ErrorCode::kFormat, "checkpoint parameter '" + e.name + "' has shape " + shape_str(src.shape()) +
                                          ", model expects " + shape_str(e.tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), e.tensor.mutable_data().begin());
  }
}

void save_features(const std::filesystem::path& path, const Tensor& features) {
  write_pckpt_file(path, {NamedTensor{"features", features, StorageDtype::kF64}});
}

Tensor load_features(const std::filesystem::path& path) {
  auto tensors = read_pckpt_file(path);
  for (auto& t : tensors) {
    if (t.name == "features") {
      if (t.tensor.ndim() != 2) throw Error(ErrorCode::kFormat, "feature file '" + path.string() + "' must hold a 2-D tensor");
      return t.tensor;
    }
  }
  throw Error(ErrorCode::kFormat, "feature file '" + path.string() + "' has no 'features' tensor");
}

}  // namespace phantom
