#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stun/moe_model.hpp"

namespace stun {

// Container layout (all integers little-endian):
//   8 bytes   magic ("STUNMOE1" for models, "STUNCAL1" for calibration)
//   8 bytes   header length H
//   H bytes   UTF-8 JSON header with a "tensors" directory
//   blob      float32 tensors in directory order; ".mask" entries are
//             bit-packed (LSB first) and padded to 4 bytes
//   4 bytes   CRC32 of the blob
//   4 bytes   CRC32 of the header bytes
inline constexpr int kFormatVersion = 1;

struct TensorEntry {
  std::string name;
  std::uint64_t offset = 0;  // byte offset into the blob
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool bitmask = false;

  std::uint64_t byte_size() const noexcept;
};

struct LayerHeader {
  std::size_t experts = 0;
  std::size_t hidden_dim = 0;
  std::size_t top_k = 0;
  std::vector<Activation> activations;
};

struct ModelHeader {
  int version = 0;
  std::string name;
  std::uint64_t seed = 0;
  std::size_t model_dim = 0;
  std::vector<LayerHeader> layers;
  ForwardFlags flags;
  std::vector<TensorEntry> tensors;
  std::uint64_t blob_size = 0;
};

void save_model(const MoeModel& model, const std::filesystem::path& path);
MoeModel load_model(const std::filesystem::path& path);

// Reads magic and header only; the tensor blob is not touched.
ModelHeader read_model_header(const std::filesystem::path& path);

// In-memory variants; the file functions are thin wrappers over these.
std::vector<std::uint8_t> encode_model(const MoeModel& model);
MoeModel decode_model(std::span<const std::uint8_t> bytes);

void save_calibration(const CalibrationSet& data, const std::filesystem::path& path);
CalibrationSet load_calibration(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_calibration(const CalibrationSet& data);
CalibrationSet decode_calibration(std::span<const std::uint8_t> bytes);

}  // namespace stun
