#pragma once

#include "locodec/error.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace locodec {

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string_view> split_csv_row(std::string_view row);
std::string_view trim(std::string_view s);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);
std::uint64_t parse_u64(std::string_view s);
// Shortest representation that round-trips through parse_double.
std::string format_double(double v);

// `key=value` lines; blank lines and `#` comments skipped. Keys keep their order.
std::vector<std::pair<std::string, std::string>> parse_dotted_lines(std::string_view text);

// Little-endian cursor over a byte buffer; throws LoadError-compatible
// IntegrityError on overrun.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T take() {
    need(sizeof(T));
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError(source_ + ": truncated file");
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

}  // namespace locodec
