#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sneakdoor/tensor.hpp"

namespace sneakdoor::io {

// On-disk framing: one line of UTF-8 JSON
//   {"version":1,"dtype":"f32","shape":[...],"order":"row-major", ...extra}
// terminated by '\n', followed by the raw little-endian payload.
enum class DType { f32, f64, i32 };

inline constexpr int kFormatVersion = 1;

std::string_view dtype_name(DType dtype);
DType dtype_from_name(std::string_view name);
std::size_t dtype_size(DType dtype);

struct TensorFile {
  nlohmann::json header;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> reals;        // f32 / f64 payloads
  std::vector<std::int32_t> ints;   // i32 payloads
};

// `extra` must be a JSON object; its keys are merged into the header.
void write_real_tensor(const std::filesystem::path& path, const Shape& shape,
                       std::span<const double> values, DType dtype,
                       const nlohmann::json& extra = nlohmann::json::object());
void write_int_tensor(const std::filesystem::path& path, const Shape& shape,
                      std::span<const std::int32_t> values,
                      const nlohmann::json& extra = nlohmann::json::object());

TensorFile read_tensor(const std::filesystem::path& path);

// Serialized bytes; used by the writers and by tests that inspect framing.
std::string encode_real_tensor(const Shape& shape, std::span<const double> values, DType dtype,
                               const nlohmann::json& extra = nlohmann::json::object());
std::string encode_int_tensor(const Shape& shape, std::span<const std::int32_t> values,
                              const nlohmann::json& extra = nlohmann::json::object());
TensorFile decode_tensor(std::string_view bytes, std::string_view origin = "<memory>");

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

// FNV-1a over a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);
std::string hash_hex(std::string_view bytes);

}  // namespace sneakdoor::io
