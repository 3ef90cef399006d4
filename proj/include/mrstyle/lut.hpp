#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrstyle/image.hpp"

namespace mrstyle::lut {

using Rgb = std::array<float, 3>;

inline constexpr int kDefaultLutSize = 33;

class LutError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parse failure in a .cube stream; `line()` is 1-based.
class CubeParseError : public LutError {
public:
    CubeParseError(int line, const std::string& what);
    [[nodiscard]] int line() const noexcept { return line_; }

private:
    int line_;
};

/// Lattice coordinate i of an n-point axis, i / (n - 1). Every identity
/// table in the library is built from this so they agree bit for bit.
float identity_value(int i, int size);

/// Dense D x D x D RGB table. Entry (r, g, b) lives at index r + D*(g + D*b)
/// (red fastest, the .cube order). Immutable once built.
class Lut3d {
public:
    /// Values are clamped to [0,1]; non-finite values, a wrong lattice
    /// length, D < 2 or an empty domain throw LutError.
    Lut3d(int size, std::vector<float> lattice, Rgb domain_min = {0.0f, 0.0f, 0.0f},
          Rgb domain_max = {1.0f, 1.0f, 1.0f});

    [[nodiscard]] int size() const noexcept { return size_; }
    [[nodiscard]] std::span<const float> lattice() const noexcept { return lattice_; }
    [[nodiscard]] const Rgb& domain_min() const noexcept { return domain_min_; }
    [[nodiscard]] const Rgb& domain_max() const noexcept { return domain_max_; }
    [[nodiscard]] std::size_t entry_count() const noexcept { return lattice_.size() / 3; }
    [[nodiscard]] bool is_identity() const noexcept { return is_identity_; }

    [[nodiscard]] Rgb at(int r, int g, int b) const;

    /// Trilinear lookup of one pixel. Inputs are clamped to the domain
    /// first; the output is clamped to [0,1]. NaN input throws.
    [[nodiscard]] Rgb apply(const Rgb& px) const;

    bool operator==(const Lut3d& other) const {
        return size_ == other.size_ && lattice_ == other.lattice_ && domain_min_ == other.domain_min_ &&
               domain_max_ == other.domain_max_;
    }

    /// apply() without the NaN check, for pixel loops that check up front.
    void apply_unchecked(const float* in, float* out) const noexcept;

private:

    int size_;
    std::vector<float> lattice_;
    // Same entries padded to four floats, for the vectorized lookup.
    std::vector<float> padded_;
    bool unit_domain_ = true;
    // Identity tables pass pixels through untouched.
    bool is_identity_ = false;
    Rgb domain_min_;
    Rgb domain_max_;
    Rgb inv_extent_;
};

Lut3d identity_lut(int size = kDefaultLutSize);

/// Applies `lut` to every pixel. Rows are split across `threads` workers;
/// the result does not depend on the thread count. Throws on NaN pixels.
Image apply_lut(const Lut3d& lut, const Image& image, int threads = 1);

/// apply_lut(second, apply_lut(first, image)) in one pass without the
/// intermediate image; bit-identical to the two-step form.
Image apply_lut_chain(const Lut3d& first, const Lut3d& second, const Image& image, int threads = 1);

Lut3d parse_cube(std::istream& in);
Lut3d read_cube(const std::filesystem::path& path);

/// Serializes with shortest round-trip float formatting, so parse_cube
/// recovers the table exactly.
std::string write_cube(const Lut3d& lut, const std::string& title = {});
void save_cube(const Lut3d& lut, const std::filesystem::path& path, const std::string& title = {});

/// Lattice of the table that equals applying `first` then `second`.
/// Exact at the lattice points of `first`.
Lut3d compose_luts(const Lut3d& first, const Lut3d& second);

/// Identity plus a weighted sum of K residual basis tables.
struct ClutBank {
    int size = kDefaultLutSize;
    int basis_count = 0;
    std::vector<float> basis;  // basis_count * size^3 * 3, basis-major

    ClutBank() = default;
    ClutBank(int size, int basis_count, std::vector<float> basis);

    [[nodiscard]] std::size_t table_length() const {
        return static_cast<std::size_t>(size) * size * size * 3;
    }
    [[nodiscard]] std::span<const float> table(int k) const;
};

struct LutWeights {
    std::vector<double> values;
};

/// clamp(identity + sum_k w_k * basis_k, 0, 1).
Lut3d materialize_clut(const ClutBank& bank, const LutWeights& weights);

}  // namespace mrstyle::lut
