#pragma once

#include <span>
#include <vector>

namespace mmem {

using Vector = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// Unit-length copy; throws DegenerateFeature for an all-zero or non-finite input.
Vector normalized(std::span<const double> v);

// Cosine of two unit vectors, clamped to [-1, 1].
double unit_cosine(std::span<const double> a, std::span<const double> b);

}  // namespace mmem
