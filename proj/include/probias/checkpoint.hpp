#pragma once

// Checkpoint format: a flat little-endian binary of float64 values plus a text
// manifest at `<path>.manifest`:
//
//   # probias-checkpoint v1
//   <name>\t<rows>x<cols>\tf64\t<byte offset>
//
// Entries appear in parameter registration order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

#include "probias/io.hpp"
#include "probias/tensor.hpp"

namespace probias::nn {

namespace detail {

inline void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& path) {
  std::filesystem::path m = path;
  m += ".manifest";
  return m;
}

inline void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path) {
  std::string blob;
  std::ostringstream manifest;
  manifest << "# probias-checkpoint v1\n";
  for (const Parameter& p : params) {
    manifest << p.name << '\t' << p.value.rows() << 'x' << p.value.cols() << "\tf64\t" << blob.size() << '\n';
    for (double v : p.value.data()) detail::append_le(blob, v);
  }
  io::write_file_atomic(path, blob);
  io::write_file_atomic(manifest_path(path), manifest.str());
}

// Loads into an existing store; every parameter in `params` must be present
// with a matching shape.
inline void load_checkpoint(ParameterStore& params, const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  const auto lines = io::split_lines(io::read_file(manifest_path(path)));
  if (lines.empty() || lines.front() != "# probias-checkpoint v1") throw DataError("bad checkpoint manifest header");
  std::size_t found = 0;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    std::istringstream ss(lines[ln]);
    std::string name, shape, dtype;
    std::size_t offset = 0;
    if (!std::getline(ss, name, '\t') || !std::getline(ss, shape, '\t') || !std::getline(ss, dtype, '\t') ||
        !(ss >> offset))
      throw DataError("checkpoint manifest line " + std::to_string(ln + 1) + " malformed");
    if (dtype != "f64") throw DataError("unsupported checkpoint dtype " + dtype);
    const auto x = shape.find('x');
    if (x == std::string::npos) throw DataError("bad shape in checkpoint manifest: " + shape);
    const std::size_t rows = std::stoul(shape.substr(0, x));
    const std::size_t cols = std::stoul(shape.substr(x + 1));
    if (!params.contains(name)) continue;
    Parameter& p = params.get(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape + " vs " + shape_string(p.value));
    if (offset + rows * cols * 8 > blob.size()) throw DataError("checkpoint truncated at " + name);
    for (std::size_t i = 0; i < rows * cols; ++i) p.value[i] = detail::read_le(blob.data() + offset + 8 * i);
    ++found;
  }
  if (found != params.size())
    throw DataError("checkpoint is missing " + std::to_string(params.size() - found) + " parameter(s)");
}

}  // namespace probias::nn
