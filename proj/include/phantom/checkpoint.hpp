// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "phantom/model.hpp"
#include "phantom/tensor.hpp"

namespace phantom {

// PCKPT v1 layout, all integers little-endian:
//   "PCKP" | u32 version=1 | u32 count |
//   count x { u32 name_len | name | u8 dtype (0=f32, 1=f64) | u32 ndim | u32 dims[ndim] | data }
enum class StorageDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  StorageDtype dtype = StorageDtype::kF64;
};

void write_pckpt(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_pckpt(std::istream& in);
void write_pckpt_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_pckpt_file(const std::filesystem::path& path);

void save_checkpoint(const PhantomModel& model, const std::filesystem::path& path, StorageDtype dtype = StorageDtype::kF64);
/// Loads every parameter of `model` by name; shapes must match exactly.
void load_checkpoint(PhantomModel& model, const std::filesystem::path& path);

/// Image features are a single f64 tensor named "features" of shape [P, dim].
void save_features(const std::filesystem::path& path, const Tensor& features);
Tensor load_features(const std::filesystem::path& path);

}  // namespace phantom
