#include "distillkit/fingerprint.hpp"

#include <sodium.h>

#include "distillkit/error.hpp"

namespace distillkit {

struct Hasher::State {
  crypto_generichash_state st;
};

Hasher::Hasher() : state_(std::make_unique<State>()) {
  if (sodium_init() < 0) throw Error("libsodium initialisation failed");
  crypto_generichash_init(&state_->st, nullptr, 0, Digest{}.size());
}

Hasher::~Hasher() = default;

Hasher &Hasher::update(std::span<const std::uint8_t> bytes) {
  crypto_generichash_update(&state_->st, bytes.data(), bytes.size());
  return *this;
}

Hasher &Hasher::update(std::string_view text) {
  // length prefix keeps concatenations unambiguous
  const std::uint64_t n = text.size();
  update_pod(n);
  return update(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

Digest Hasher::finish() {
  if (finished_) throw InvalidStateError("Hasher::finish called twice");
  finished_ = true;
  Digest out{};
  crypto_generichash_final(&state_->st, out.data(), out.size());
  return out;
}

Digest digest_of(std::string_view text) { return Hasher().update(text).finish(); }

std::string to_hex(const Digest &digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (auto b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

Digest digest_from_hex(std::string_view hex) {
  if (hex.size() != 32) throw InvalidArgumentError("digest hex must be 32 chars");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw InvalidArgumentError("invalid hex digit in digest");
  };
  Digest out{};
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

} // namespace distillkit
