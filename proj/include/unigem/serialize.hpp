#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/tensor.hpp"

namespace unigem {

// Named-tensor container, format "UGTN1":
//   magic "UGTN1"
//   repeated records until end of stream:
//     u64 LE  name byte count
//     bytes   UTF-8 name
//     u64 LE  rank
//     u64 LE  extents[rank]
//     f64 LE  elements[product(extents)]
// The container owns the rest of the stream, so it is the final section of
// any file that embeds it.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("tensor container: truncated u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline constexpr const char* kTensorMagic = "UGTN1";

template <class Real>
void write_tensors(std::ostream& os, const NamedTensors<Real>& tensors) {
  os.write(kTensorMagic, 5);
  for (const auto& [name, t] : tensors) {
    detail::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(os, t.rank());
    for (std::size_t e : t.shape()) detail::write_u64(os, e);
    for (std::size_t i = 0; i < t.size(); ++i)
      detail::write_f64(os, static_cast<double>(t.data()[i]));
  }
  if (!os) throw DataError("tensor container: write failed");
}

template <class Real>
NamedTensors<Real> read_tensors(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != kTensorMagic)
    throw DataError("tensor container: bad magic, expected UGTN1");
  NamedTensors<Real> out;
  while (true) {
    std::uint64_t name_len;
    {
      unsigned char b[8];
      is.read(reinterpret_cast<char*>(b), 8);
      if (is.gcount() == 0 && is.eof()) break;  // clean end of container
      if (!is) throw DataError("tensor container: truncated record header");
      name_len = 0;
      for (int i = 0; i < 8; ++i) name_len |= std::uint64_t(b[i]) << (8 * i);
    }
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw DataError("tensor container: truncated name");
    const std::uint64_t rank = detail::read_u64(is);
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_u64(is);
    Tensor<Real> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<Real>(detail::read_f64(is));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace unigem
