#include "wsf/common/binary_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "wsf/common/error.hpp"

namespace wsf {

void BinaryReader::raw(void* p, std::size_t n) {
  if (remaining() < n) {
    throw DataError("truncated binary payload: need " + std::to_string(n) + " bytes, have " +
                    std::to_string(remaining()));
  }
  std::memcpy(p, bytes_.data() + pos_, n);
  pos_ += n;
}

void BinaryReader::expect_magic(std::string_view m) {
  std::string got(m.size(), '\0');
  raw(got.data(), got.size());
  if (got != m) throw DataError("bad magic: expected '" + std::string(m) + "', got '" + got + "'");
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

std::int32_t BinaryReader::i32() {
  std::int32_t v;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

void BinaryReader::f64s(std::span<double> out) { raw(out.data(), out.size_bytes()); }

std::string BinaryReader::str() {
  const auto n = u32();
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace wsf
