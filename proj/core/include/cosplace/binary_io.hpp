#pragma once

// Little-endian, section-tagged binary containers shared by the checkpoint,
// index and feature-store formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cosplace/error.hpp"

namespace cosplace::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* bytes = reinterpret_cast<const char*>(&value);
    buffer_.insert(buffer_.end(), bytes, bytes + sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_span(std::span<const T> values) {
    const auto* bytes = reinterpret_cast<const char*>(values.data());
    buffer_.insert(buffer_.end(), bytes, bytes + values.size_bytes());
  }

  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buffer_.insert(buffer_.end(), s.begin(), s.end());
  }

  void put_raw(std::string_view bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

  const std::vector<char>& bytes() const { return buffer_; }
  std::string_view view() const { return {buffer_.data(), buffer_.size()}; }

 private:
  std::vector<char> buffer_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes, std::string context = "binary file")
      : bytes_(bytes), context_(std::move(context)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_span(std::span<T> out) {
    const std::string_view raw = take(out.size_bytes());
    if (!out.empty()) std::memcpy(out.data(), raw.data(), raw.size());
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    return std::string(take(n));
  }

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCode::kParse, context_ + ": truncated");
    }
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  void expect_end() const {
    if (!at_end()) throw Error(ErrorCode::kParse, context_ + ": trailing bytes");
  }

  const std::string& context() const { return context_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

using Tag = std::array<char, 4>;

struct Section {
  Tag tag{};
  std::string payload;
};

/// Container layout: 8-byte magic, u32 version, u32 section count, then for
/// each section a 4-byte tag, u64 payload length and the payload.
struct Container {
  std::string magic;  // exactly 8 bytes
  std::uint32_t version = 0;
  std::vector<Section> sections;

  std::size_t count(std::string_view tag) const;
  const Section& only(std::string_view tag) const;
  std::vector<const Section*> all(std::string_view tag) const;
};

std::string encode_container(const Container& c);
Container decode_container(std::string_view bytes, std::string_view magic,
                           std::uint32_t version, const std::string& context);

Tag make_tag(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace cosplace::io
