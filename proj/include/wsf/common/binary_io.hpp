#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace wsf {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

// Append-only little-endian byte buffer.
class BinaryWriter {
 public:
  void magic(std::string_view m) { buf_.append(m); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  const std::string& bytes() const& { return buf_; }
  std::string bytes() && { return std::move(buf_); }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

// Bounds-checked reader over a byte buffer; truncation raises DataError.
class BinaryReader {
 public:
  explicit BinaryReader(std::string_view bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m);
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  double f64();
  void f64s(std::span<double> out);
  std::string str();

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void raw(void* p, std::size_t n);
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace wsf
