#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "distillkit/error.hpp"

namespace distillkit::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

class ByteWriter {
public:
  template <typename T> void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto *p = reinterpret_cast<const char *>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void *data, std::size_t n) {
    const auto *p = static_cast<const char *>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(std::string_view s) { put_bytes(s.data(), s.size()); }
  void pad_to(std::size_t offset) {
    if (bytes_.size() < offset) bytes_.resize(offset, '\0');
  }
  template <typename T> void patch(std::size_t offset, T value) {
    std::memcpy(bytes_.data() + offset, &value, sizeof(T));
  }
  std::size_t size() const { return bytes_.size(); }
  const std::vector<char> &bytes() const { return bytes_; }

private:
  std::vector<char> bytes_;
};

/// Bounds-checked cursor over a byte buffer; truncation raises E.
template <typename E> class ByteReader {
public:
  ByteReader(const std::vector<char> &bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  template <typename T> T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    require(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void require(std::size_t n) const {
    if (n > bytes_.size() || pos_ > bytes_.size() - n)
      throw E(context_ + ": truncated or corrupt file");
  }
  void seek(std::size_t pos) {
    if (pos > bytes_.size()) throw E(context_ + ": offset beyond end of file");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }
  const char *at(std::size_t pos) const { return bytes_.data() + pos; }

private:
  const std::vector<char> &bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

template <typename E> std::vector<char> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw E("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

template <typename E>
void write_file_bytes(const std::filesystem::path &path, const std::vector<char> &bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw E("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw E("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw E("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

} // namespace distillkit::detail
