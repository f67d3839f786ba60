#pragma once

// Counter-based random streams (Philox 4x32-10). Each particle owns a stream
// keyed by (master seed, particle index), so trajectories are reproducible
// independently of thread scheduling or worker count.

#include <array>
#include <cmath>
#include <cstdint>

namespace wflow {

namespace detail {

struct Philox4x32 {
    static constexpr uint32_t kMul0 = 0xD2511F53u;
    static constexpr uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr uint32_t kWeyl1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                         std::array<uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = static_cast<uint64_t>(kMul0) * ctr[0];
            const uint64_t p1 = static_cast<uint64_t>(kMul1) * ctr[2];
            const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
            const uint32_t lo0 = static_cast<uint32_t>(p0);
            const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
            const uint32_t lo1 = static_cast<uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

}  // namespace detail

class CounterRng {
  public:
    CounterRng(uint64_t master_seed, uint64_t stream) {
        key_ = {static_cast<uint32_t>(master_seed),
                static_cast<uint32_t>(master_seed >> 32)};
        ctr_hi_ = stream;
        ctr_lo_ = 0;
        buf_pos_ = 4;
    }

    // Uniform on (0,1); never returns 0 or 1.
    double uniform() {
        const uint64_t bits =
            (static_cast<uint64_t>(next_u32()) << 32) | next_u32();
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller, caching the second draw.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    uint32_t next_u32() {
        if (buf_pos_ >= 4) {
            buf_ = detail::Philox4x32::block(
                {static_cast<uint32_t>(ctr_lo_),
                 static_cast<uint32_t>(ctr_lo_ >> 32),
                 static_cast<uint32_t>(ctr_hi_),
                 static_cast<uint32_t>(ctr_hi_ >> 32)},
                key_);
            ++ctr_lo_;
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

  private:
    std::array<uint32_t, 2> key_{};
    uint64_t ctr_hi_ = 0, ctr_lo_ = 0;
    std::array<uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace wflow
