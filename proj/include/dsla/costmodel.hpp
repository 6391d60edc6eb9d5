#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dsla/types.hpp"

namespace dsla {

enum class Phase { Prefill, Decode };

// Per-layer latency constants in milliseconds. Teacher prefill is quadratic
// in context length, teacher decode linear, DSLA prefill linear, DSLA decode
// constant. Defaults put the prefill crossover at s = 2000 tokens.
struct CostModel {
    double teacher_prefill_a = 1e-6;
    double teacher_prefill_c = 0.05;
    double teacher_decode_a = 2e-4;
    double teacher_decode_c = 0.02;
    double dsla_prefill_a = 2e-3;
    double dsla_prefill_c = 0.05;
    double dsla_decode_c = 0.02;
    // seeded latency spikes modeling allocator stalls; off by default
    double jitter_prob = 0.0;
    double jitter_mult = 1.0;

    static CostModel defaults() { return {}; }
    static CostModel from_file(const std::filesystem::path& path);
    std::string to_text() const;
    void validate() const;
    // prefill context length where teacher and DSLA per-layer cost meet
    double prefill_crossover() const;
};

// KVCache bytes = 2 * n * b * s * h * d_h * bytes_per_elem, computed in wide
// arithmetic; throws std::overflow_error past 64 bits.
std::uint64_t kv_cache_bytes(long n, long b, long s, long h, long d_h, long bytes_per_elem);

// Per-layer cost of one step for context length s, in milliseconds.
double step_cost(LayerKind kind, Phase phase, long s, const CostModel& cm);

}  // namespace dsla
