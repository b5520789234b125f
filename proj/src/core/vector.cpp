#include "mmem/core/vector.hpp"

#include <algorithm>
#include <cmath>

#include "mmem/error.hpp"

namespace mmem {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "dimension mismatch: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector normalized(std::span<const double> v) {
    const double n = l2_norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw Error(ErrorCode::DegenerateFeature, "cannot normalize a zero or non-finite vector");
    }
    Vector out(v.begin(), v.end());
    for (auto& x : out) x /= n;
    return out;
}

double unit_cosine(std::span<const double> a, std::span<const double> b) {
    return std::clamp(dot(a, b), -1.0, 1.0);
}

}  // namespace mmem
