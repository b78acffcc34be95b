#include "dsgd/rng.hpp"

namespace dsgd {

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t h = mix64(master);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

Rng Rng::stream(std::uint64_t master, StreamTag tag, std::uint64_t a, std::uint64_t b,
                std::uint64_t c) {
  return Rng(derive_seed(master, {static_cast<std::uint64_t>(tag), a, b, c}));
}

}  // namespace dsgd
