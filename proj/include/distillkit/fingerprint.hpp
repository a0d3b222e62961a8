#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace distillkit {

using Digest = std::array<std::uint8_t, 16>;

/// Incremental 128-bit BLAKE2b digest.
class Hasher {
public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher &) = delete;
  Hasher &operator=(const Hasher &) = delete;

  Hasher &update(std::span<const std::uint8_t> bytes);
  Hasher &update(std::string_view text);
  template <typename T> Hasher &update_pod(const T &value) {
    return update(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t *>(&value), sizeof(T)));
  }
  Digest finish();

private:
  struct State;
  std::unique_ptr<State> state_;
  bool finished_ = false;
};

Digest digest_of(std::string_view text);
std::string to_hex(const Digest &digest);
Digest digest_from_hex(std::string_view hex);

} // namespace distillkit
