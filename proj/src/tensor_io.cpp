#include "sneakdoor/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sneakdoor/errors.hpp"

namespace sneakdoor::io {

namespace {

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string header_line(const Shape& shape, DType dtype, const nlohmann::json& extra) {
  if (!extra.is_object()) throw ArgumentError("tensor header extra must be a JSON object");
  nlohmann::json header = extra;
  header["version"] = kFormatVersion;
  header["dtype"] = dtype_name(dtype);
  header["shape"] = shape;
  header["order"] = "row-major";
  return header.dump() + "\n";
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
  }
  return "f32";
}

DType dtype_from_name(std::string_view name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  if (name == "i32") return DType::i32;
  throw FormatError("unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType dtype) { return dtype == DType::f64 ? 8 : 4; }

std::string encode_real_tensor(const Shape& shape, std::span<const double> values, DType dtype,
                               const nlohmann::json& extra) {
  if (dtype == DType::i32) throw ArgumentError("encode_real_tensor: integer dtype");
  if (values.size() != shape_numel(shape)) {
    throw ArgumentError("tensor payload size does not match shape " + shape_to_string(shape));
  }
  std::string out = header_line(shape, dtype, extra);
  out.reserve(out.size() + values.size() * dtype_size(dtype));
  for (double v : values) {
    if (dtype == DType::f32) {
      append_le(out, static_cast<float>(v));
    } else {
      append_le(out, v);
    }
  }
  return out;
}

std::string encode_int_tensor(const Shape& shape, std::span<const std::int32_t> values,
                              const nlohmann::json& extra) {
  if (values.size() != shape_numel(shape)) {
    throw ArgumentError("tensor payload size does not match shape " + shape_to_string(shape));
  }
  std::string out = header_line(shape, DType::i32, extra);
  for (std::int32_t v : values) append_le(out, v);
  return out;
}

TensorFile decode_tensor(std::string_view bytes, std::string_view origin) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) {
    throw FormatError(std::string(origin) + ": missing header line");
  }
  TensorFile file;
  try {
    file.header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(origin) + ": malformed header: " + e.what());
  }
  const auto& h = file.header;
  if (!h.is_object() || !h.contains("version") || !h.contains("dtype") || !h.contains("shape")) {
    throw FormatError(std::string(origin) + ": header lacks version/dtype/shape");
  }
  if (!h["version"].is_number_integer() || h["version"].get<int>() != kFormatVersion) {
    throw FormatError(std::string(origin) + ": unsupported version " + h["version"].dump());
  }
  if (h.contains("order") && h["order"] != "row-major") {
    throw FormatError(std::string(origin) + ": unsupported order " + h["order"].dump());
  }
  try {
    file.dtype = dtype_from_name(h["dtype"].get<std::string>());
    file.shape = h["shape"].get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string(origin) + ": bad header field: " + e.what());
  }
  const std::size_t count = shape_numel(file.shape);
  const std::string_view payload = bytes.substr(newline + 1);
  const std::size_t expected = count * dtype_size(file.dtype);
  if (payload.size() != expected) {
    throw FormatError(std::string(origin) + ": payload has " + std::to_string(payload.size()) +
                      " bytes, header implies " + std::to_string(expected));
  }
  const char* p = payload.data();
  switch (file.dtype) {
    case DType::f32:
      file.reals.resize(count);
      for (std::size_t i = 0; i < count; ++i) file.reals[i] = read_le<float>(p + 4 * i);
      break;
    case DType::f64:
      file.reals.resize(count);
      for (std::size_t i = 0; i < count; ++i) file.reals[i] = read_le<double>(p + 8 * i);
      break;
    case DType::i32:
      file.ints.resize(count);
      for (std::size_t i = 0; i < count; ++i) file.ints[i] = read_le<std::int32_t>(p + 4 * i);
      break;
  }
  return file;
}

void write_real_tensor(const std::filesystem::path& path, const Shape& shape,
                       std::span<const double> values, DType dtype, const nlohmann::json& extra) {
  write_text(path, encode_real_tensor(shape, values, dtype, extra));
}

void write_int_tensor(const std::filesystem::path& path, const Shape& shape,
                      std::span<const std::int32_t> values, const nlohmann::json& extra) {
  write_text(path, encode_int_tensor(shape, values, extra));
}

TensorFile read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_text(path), path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string hash_hex(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string file_checksum(const std::filesystem::path& path) { return hash_hex(read_text(path)); }

}  // namespace sneakdoor::io
