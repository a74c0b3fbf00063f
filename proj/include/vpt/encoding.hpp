#pragma once

#include "vpt/autodiff.hpp"
#include "vpt/sinusoid.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace vpt {

// Sinusoidal lifting gamma(v) with frequencies 2^0 .. 2^{N-1}.
struct EncodingConfig {
    std::size_t n_freqs = 10;
    bool include_input = false;

    std::size_t width_per_component() const { return detail::sinusoid_width(n_freqs, include_input); }
    std::size_t output_dim(std::size_t input_dim) const { return input_dim * width_per_component(); }
};

inline constexpr std::size_t kDefaultPositionFreqs = 10;
inline constexpr std::size_t kDefaultDirectionFreqs = 4;

// Per component: [v?] sin(2^k pi v), cos(2^k pi v) for k = 0..N-1, blocks
// concatenated in input order.
inline std::vector<double> encode(std::span<const double> v, const EncodingConfig &cfg) {
    for (double x : v) {
        if (!std::isfinite(x)) throw OverflowError("encode: non-finite input component");
    }
    const std::size_t w = cfg.width_per_component();
    std::vector<double> out(v.size() * w);
    for (std::size_t i = 0; i < v.size(); ++i) {
        detail::sinusoid_block(v[i], cfg.n_freqs, cfg.include_input, out.data() + i * w);
    }
    return out;
}

// Same lifting recorded on a tape, row by row: [N,k] -> [N, k * width].
inline ad::Var encode(ad::Tape &tape, ad::Var v, const EncodingConfig &cfg) {
    return tape.sinusoid(v, cfg.n_freqs, cfg.include_input);
}

} // namespace vpt
