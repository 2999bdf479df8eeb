#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

#include "clotseg/errors.hpp"
#include "clotseg/tensor.hpp"

namespace clotseg {

// CSTN tensor record: magic "CSTN", u32 version, u32 rank, u64 dims[], then
// little-endian values row-major. Version 1 stores 64-bit floats, version 2
// stores 32-bit floats.

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("unexpected end of stream");
  return value;
}

}  // namespace detail

template <typename S>
void write_cstn(std::ostream& os, const Shape& shape, const std::vector<S>& values) {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  os.write("CSTN", 4);
  detail::write_pod<std::uint32_t>(os, std::is_same_v<S, double> ? 1u : 2u);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(S)));
  if (!os) throw IoError("CSTN write failed");
}

template <typename S>
void write_cstn(std::ostream& os, const Tensor<S>& t) {
  std::vector<S> values(t.data().begin(), t.data().end());
  write_cstn(os, t.shape(), values);
}

/// Reads one CSTN record; converts between float widths when the stored
/// width differs from S.
template <typename S>
Tensor<S> read_cstn(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "CSTN") throw IoError("bad CSTN magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1 && version != 2) {
    throw IoError("unsupported CSTN version " + std::to_string(version));
  }
  const auto rank = detail::read_pod<std::uint32_t>(is);
  if (rank > 16) throw IoError("CSTN rank overflow: " + std::to_string(rank));
  Shape shape(rank);
  std::int64_t numel = 1;
  for (auto& d : shape) {
    const auto dim = detail::read_pod<std::uint64_t>(is);
    if (dim == 0 || dim > (1ull << 32)) throw IoError("CSTN dimension overflow");
    d = static_cast<std::int64_t>(dim);
    numel *= d;
    if (numel > (std::int64_t(1) << 33)) throw IoError("CSTN element count overflow");
  }
  std::vector<S> values(static_cast<std::size_t>(numel));
  if (version == (std::is_same_v<S, double> ? 1u : 2u)) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(S)));
    if (!is) throw IoError("CSTN payload truncated");
  } else if (version == 1) {
    std::vector<double> raw(values.size());
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(double)));
    if (!is) throw IoError("CSTN payload truncated");
    for (std::size_t i = 0; i < raw.size(); ++i) values[i] = static_cast<S>(raw[i]);
  } else {
    std::vector<float> raw(values.size());
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!is) throw IoError("CSTN payload truncated");
    for (std::size_t i = 0; i < raw.size(); ++i) values[i] = static_cast<S>(raw[i]);
  }
  return Tensor<S>::from_data(std::move(shape), std::move(values));
}

}  // namespace clotseg
