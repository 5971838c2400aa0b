#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace spinesim {

// Philox4x32-10 (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter block(Counter ctr, Key key) noexcept;
};

// Counter-based stream keyed by (seed, stream index). The 128-bit counter holds
// the draw-block index in its low half and the stream index in its high half,
// so distinct streams never overlap and any stream can be recreated directly.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;
  std::uint32_t next_u32() noexcept;

  // [0, 1) with 53 random bits.
  double uniform() noexcept;
  // (0, 1], safe for log().
  double uniform_pos() noexcept { return 1.0 - uniform(); }
  double exponential(double rate) noexcept;
  double gamma(double shape, double scale);
  std::uint64_t poisson(double mean);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t blocks_used() const noexcept { return block_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buf_{};
  int pos_ = 4;
};

}  // namespace spinesim
