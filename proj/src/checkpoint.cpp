#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "budgetdet/diffkit.hpp"

namespace budgetdet {

namespace {

constexpr char kMagic[8] = {'B', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

void put_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long");
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get_le<std::uint16_t>(is);
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  for (const auto& [key, value] : header) {
    put_string(os, key);
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(value));
  }
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& a : params) {
    put_string(os, a.name);
    put_le<std::uint64_t>(os, a.rows);
    put_le<std::uint64_t>(os, a.cols);
    for (const double x : a.data) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  if (const auto v = get_le<std::uint32_t>(is); v != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  const auto n_header = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_header; ++i) {
    auto key = get_string(is);
    ck.header[key] = static_cast<std::int64_t>(get_le<std::uint64_t>(is));
  }
  const auto n_arrays = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = get_string(is);
    const auto rows = get_le<std::uint64_t>(is);
    const auto cols = get_le<std::uint64_t>(is);
    const auto idx = ck.params.add(std::move(name), rows, cols);
    for (auto& x : ck.params[idx].data) x = std::bit_cast<double>(get_le<std::uint64_t>(is));
  }
  return ck;
}

}  // namespace budgetdet
