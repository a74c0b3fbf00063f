#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>

namespace vpt::detail {

// sin(pi x) and cos(pi x) with exact argument reduction, so multiples of 1/2
// land on exact 0 / +-1 instead of 6e-17 residues.
struct SinCosPi {
    double sin;
    double cos;
};

inline SinCosPi sincos_pi(double x) {
    const double a = std::fabs(x);
    const double r = std::fmod(a, 2.0);                 // exact, in [0, 2)
    const double n = std::nearbyint(2.0 * r);           // quadrant in {0..4}
    const double f = r - 0.5 * n;                       // exact, |f| <= 1/4
    const double s = f == 0.0 ? 0.0 : std::sin(std::numbers::pi * f);
    const double c = f == 0.0 ? 1.0 : std::cos(std::numbers::pi * f);
    SinCosPi out{};
    switch (static_cast<int>(n) & 3) {
    case 0: out = {s, c}; break;
    case 1: out = {c, -s}; break;
    case 2: out = {-s, -c}; break;
    default: out = {-c, s}; break;
    }
    if (x < 0) out.sin = -out.sin;
    // Normalize -0.0 so encodings of equal inputs are bit-identical.
    if (out.sin == 0.0) out.sin = 0.0;
    if (out.cos == 0.0) out.cos = 0.0;
    return out;
}

inline std::size_t sinusoid_width(std::size_t n_freqs, bool include_input) {
    return 2 * n_freqs + (include_input ? 1 : 0);
}

// Writes [v?, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{N-1} pi v), cos(2^{N-1} pi v)].
// Octave 0 is reduced exactly; higher octaves use the double-angle identities,
// which keep exact values exact (0, +-1) and lose about one ulp per octave otherwise.
inline void sinusoid_block(double v, std::size_t n_freqs, bool include_input, double *out) {
    if (include_input) *out++ = v;
    if (n_freqs == 0) return;
    auto [s, c] = sincos_pi(v);
    for (std::size_t k = 0;; ++k) {
        *out++ = s;
        *out++ = c;
        if (k + 1 == n_freqs) break;
        const double s2 = 2.0 * s * c;
        const double c2 = (c - s) * (c + s);
        s = s2 == 0.0 ? 0.0 : s2;
        c = c2 == 0.0 ? 0.0 : c2;
    }
}

} // namespace vpt::detail
