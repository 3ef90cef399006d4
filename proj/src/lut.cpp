#include "mrstyle/lut.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <thread>

namespace mrstyle::lut {

CubeParseError::CubeParseError(int line, const std::string& what)
    : LutError("line " + std::to_string(line) + ": " + what), line_(line) {}

float identity_value(int i, int size) {
    return static_cast<float>(static_cast<double>(i) / static_cast<double>(size - 1));
}

namespace {

std::size_t lattice_length(int size) {
    return static_cast<std::size_t>(size) * size * size * 3;
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

inline float lerp(float a, float b, float t) { return a + t * (b - a); }

// xn must already be normalized into [0,1]. Nested lerps keep constant
// cells exact.
inline void sample(const float* lattice, int size, const float* xn, float* out) {
    const float scale = static_cast<float>(size - 1);
    int idx[3];
    float f[3];
    for (int c = 0; c < 3; ++c) {
        const float pos = xn[c] * scale;
        idx[c] = std::min(static_cast<int>(pos), size - 2);
        f[c] = pos - static_cast<float>(idx[c]);
    }
    const std::size_t sr = 3;
    const std::size_t sg = 3 * static_cast<std::size_t>(size);
    const std::size_t sb = sg * static_cast<std::size_t>(size);
    const float* p = lattice + idx[0] * sr + idx[1] * sg + idx[2] * sb;
    for (int c = 0; c < 3; ++c) {
        const float c00 = lerp(p[c], p[sr + c], f[0]);
        const float c10 = lerp(p[sg + c], p[sr + sg + c], f[0]);
        const float c01 = lerp(p[sb + c], p[sr + sb + c], f[0]);
        const float c11 = lerp(p[sg + sb + c], p[sr + sg + sb + c], f[0]);
        const float c0 = lerp(c00, c10, f[1]);
        const float c1 = lerp(c01, c11, f[1]);
        out[c] = clamp01(lerp(c0, c1, f[2]));
    }
}

// Same arithmetic as sample() on a 4-float-per-entry lattice; the channel
// loop vectorizes and the fourth lane is ignored.
inline void sample_padded(const float* lattice, int size, const float* xn, float* out) {
    const float scale = static_cast<float>(size - 1);
    int idx[3];
    float f[3];
    for (int c = 0; c < 3; ++c) {
        const float pos = xn[c] * scale;
        idx[c] = std::min(static_cast<int>(pos), size - 2);
        f[c] = pos - static_cast<float>(idx[c]);
    }
    const std::size_t sr = 4;
    const std::size_t sg = 4 * static_cast<std::size_t>(size);
    const std::size_t sb = sg * static_cast<std::size_t>(size);
    const float* p = lattice + idx[0] * sr + idx[1] * sg + idx[2] * sb;
    float res[4];
    for (int c = 0; c < 4; ++c) {
        const float c00 = lerp(p[c], p[sr + c], f[0]);
        const float c10 = lerp(p[sg + c], p[sr + sg + c], f[0]);
        const float c01 = lerp(p[sb + c], p[sr + sb + c], f[0]);
        const float c11 = lerp(p[sg + sb + c], p[sr + sg + sb + c], f[0]);
        const float c0 = lerp(c00, c10, f[1]);
        const float c1 = lerp(c01, c11, f[1]);
        res[c] = clamp01(lerp(c0, c1, f[2]));
    }
    out[0] = res[0];
    out[1] = res[1];
    out[2] = res[2];
}

}  // namespace

Lut3d::Lut3d(int size, std::vector<float> lattice, Rgb domain_min, Rgb domain_max)
    : size_(size), lattice_(std::move(lattice)), domain_min_(domain_min), domain_max_(domain_max) {
    if (size_ < 2) throw LutError("LUT size must be at least 2, got " + std::to_string(size_));
    if (lattice_.size() != lattice_length(size_))
        throw LutError("LUT lattice has " + std::to_string(lattice_.size()) + " values, expected " +
                       std::to_string(lattice_length(size_)));
    for (int c = 0; c < 3; ++c) {
        if (!std::isfinite(domain_min_[c]) || !std::isfinite(domain_max_[c]) || !(domain_min_[c] < domain_max_[c]))
            throw LutError("LUT domain_min must be below domain_max on every channel");
        inv_extent_[c] = 1.0f / (domain_max_[c] - domain_min_[c]);
    }
    is_identity_ = true;
    std::size_t idx = 0;
    for (int b = 0; b < size_; ++b)
        for (int g = 0; g < size_; ++g)
            for (int r = 0; r < size_; ++r, idx += 3) {
                const int coord[3] = {r, g, b};
                for (int c = 0; c < 3; ++c) {
                    float& v = lattice_[idx + c];
                    if (!std::isfinite(v)) throw LutError("non-finite LUT lattice value");
                    v = clamp01(v);
                    is_identity_ = is_identity_ && v == identity_value(coord[c], size_);
                }
            }
    padded_.assign(lattice_.size() / 3 * 4, 0.0f);
    for (std::size_t e = 0; e < lattice_.size() / 3; ++e)
        for (int c = 0; c < 3; ++c) padded_[e * 4 + c] = lattice_[e * 3 + c];
    unit_domain_ = domain_min_ == Rgb{0, 0, 0} && domain_max_ == Rgb{1, 1, 1};
}

Rgb Lut3d::at(int r, int g, int b) const {
    if (r < 0 || g < 0 || b < 0 || r >= size_ || g >= size_ || b >= size_) throw LutError("lattice index out of range");
    const std::size_t idx = 3 * (static_cast<std::size_t>(r) + size_ * (static_cast<std::size_t>(g) + size_ * b));
    return {lattice_[idx], lattice_[idx + 1], lattice_[idx + 2]};
}

Rgb Lut3d::apply(const Rgb& px) const {
    float xn[3];
    for (int c = 0; c < 3; ++c) {
        if (std::isnan(px[c])) throw LutError("NaN pixel passed to LUT application");
        xn[c] = clamp01((std::clamp(px[c], domain_min_[c], domain_max_[c]) - domain_min_[c]) * inv_extent_[c]);
    }
    Rgb out{xn[0], xn[1], xn[2]};
    if (!is_identity_) sample(lattice_.data(), size_, xn, out.data());
    return out;
}

Lut3d identity_lut(int size) {
    if (size < 2) throw LutError("LUT size must be at least 2, got " + std::to_string(size));
    std::vector<float> lattice(lattice_length(size));
    std::size_t idx = 0;
    for (int b = 0; b < size; ++b)
        for (int g = 0; g < size; ++g)
            for (int r = 0; r < size; ++r, idx += 3) {
                lattice[idx] = identity_value(r, size);
                lattice[idx + 1] = identity_value(g, size);
                lattice[idx + 2] = identity_value(b, size);
            }
    return Lut3d(size, std::move(lattice));
}

void Lut3d::apply_unchecked(const float* in, float* out) const noexcept {
    float xn[3];
    for (int c = 0; c < 3; ++c)
        xn[c] = unit_domain_ ? clamp01(in[c])
                            : clamp01((std::clamp(in[c], domain_min_[c], domain_max_[c]) - domain_min_[c]) * inv_extent_[c]);
    if (is_identity_) {
        out[0] = xn[0];
        out[1] = xn[1];
        out[2] = xn[2];
    } else {
        sample_padded(padded_.data(), size_, xn, out);
    }
}

namespace {

// Runs `per_pixel(src, dst)` over every pixel, rows split across workers.
template <class PerPixel>
Image map_pixels(const Image& image, int threads, PerPixel per_pixel) {
    Image out(image.width, image.height);
    if (image.empty()) return out;
    std::atomic<bool> saw_nan{false};
    auto run_rows = [&](int y_begin, int y_end) {
        const std::size_t begin = static_cast<std::size_t>(y_begin) * image.width * 3;
        const std::size_t end = static_cast<std::size_t>(y_end) * image.width * 3;
        const float* src = image.data.data();
        float* dst = out.data.data();
        bool nan_here = false;
        for (std::size_t i = begin; i < end; i += 3) {
            nan_here |= std::isnan(src[i]) || std::isnan(src[i + 1]) || std::isnan(src[i + 2]);
            per_pixel(src + i, dst + i);
        }
        if (nan_here) saw_nan = true;
    };
    const int workers = std::clamp(threads, 1, image.height);
    if (workers == 1) {
        run_rows(0, image.height);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (int t = 0; t < workers; ++t) {
            int y0 = static_cast<int>(static_cast<long long>(image.height) * t / workers);
            int y1 = static_cast<int>(static_cast<long long>(image.height) * (t + 1) / workers);
            pool.emplace_back(run_rows, y0, y1);
        }
    }
    if (saw_nan) throw LutError("NaN pixel passed to LUT application");
    return out;
}

}  // namespace

Image apply_lut(const Lut3d& lut, const Image& image, int threads) {
    return map_pixels(image, threads, [&lut](const float* in, float* out) { lut.apply_unchecked(in, out); });
}

Image apply_lut_chain(const Lut3d& first, const Lut3d& second, const Image& image, int threads) {
    return map_pixels(image, threads, [&](const float* in, float* out) {
        float mid[3];
        first.apply_unchecked(in, mid);
        second.apply_unchecked(mid, out);
    });
}

namespace {

bool parse_float(std::string_view token, float& out) {
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

Rgb parse_triple(const std::vector<std::string_view>& tokens, std::size_t first, int line, const char* what) {
    if (tokens.size() != first + 3) throw CubeParseError(line, std::string(what) + " needs exactly 3 values");
    Rgb v{};
    for (int c = 0; c < 3; ++c)
        if (!parse_float(tokens[first + c], v[c]))
            throw CubeParseError(line, "non-numeric token '" + std::string(tokens[first + c]) + "'");
    return v;
}

}  // namespace

Lut3d parse_cube(std::istream& in) {
    int size = 0;
    Rgb dmin{0, 0, 0}, dmax{1, 1, 1};
    std::vector<float> lattice;
    std::size_t expected = 0;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        const std::string_view key = tokens.front();
        if (key == "TITLE") continue;
        if (key == "LUT_3D_SIZE") {
            if (size != 0) throw CubeParseError(line_no, "duplicate LUT_3D_SIZE");
            if (!lattice.empty()) throw CubeParseError(line_no, "LUT_3D_SIZE after table data");
            int n = 0;
            if (tokens.size() != 2) throw CubeParseError(line_no, "LUT_3D_SIZE needs one integer");
            auto [ptr, ec] = std::from_chars(tokens[1].data(), tokens[1].data() + tokens[1].size(), n);
            if (ec != std::errc() || ptr != tokens[1].data() + tokens[1].size())
                throw CubeParseError(line_no, "non-numeric token '" + std::string(tokens[1]) + "'");
            if (n < 2 || n > 256) throw CubeParseError(line_no, "LUT_3D_SIZE out of range: " + std::to_string(n));
            size = n;
            expected = lattice_length(size);
            lattice.reserve(expected);
            continue;
        }
        if (key == "DOMAIN_MIN") {
            dmin = parse_triple(tokens, 1, line_no, "DOMAIN_MIN");
            continue;
        }
        if (key == "DOMAIN_MAX") {
            dmax = parse_triple(tokens, 1, line_no, "DOMAIN_MAX");
            continue;
        }
        if (key == "LUT_1D_SIZE") throw CubeParseError(line_no, "1D LUTs are not supported");
        float probe;
        if (!parse_float(key, probe)) {
            if (std::isalpha(static_cast<unsigned char>(key.front())) || key.front() == '_')
                throw CubeParseError(line_no, "unknown keyword '" + std::string(key) + "'");
            throw CubeParseError(line_no, "non-numeric token '" + std::string(key) + "'");
        }
        if (size == 0) throw CubeParseError(line_no, "table data before LUT_3D_SIZE");
        if (lattice.size() >= expected)
            throw CubeParseError(line_no, "more than " + std::to_string(expected / 3) + " table entries");
        Rgb v = parse_triple(tokens, 0, line_no, "table entry");
        for (float x : v) {
            if (!std::isfinite(x)) throw CubeParseError(line_no, "non-finite table value");
            lattice.push_back(x);
        }
    }
    const int eof_line = line_no + 1;
    if (size == 0) throw CubeParseError(eof_line, "missing LUT_3D_SIZE");
    if (lattice.size() != expected)
        throw CubeParseError(eof_line, "expected " + std::to_string(expected / 3) + " table entries, found " +
                                           std::to_string(lattice.size() / 3));
    for (int c = 0; c < 3; ++c)
        if (!(dmin[c] < dmax[c])) throw CubeParseError(eof_line, "DOMAIN_MIN must be below DOMAIN_MAX");
    return Lut3d(size, std::move(lattice), dmin, dmax);
}

Lut3d read_cube(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LutError("cannot open " + path.string());
    try {
        return parse_cube(in);
    } catch (const CubeParseError& e) {
        throw CubeParseError(e.line(), path.string() + ": " +
                                           std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
    }
}

namespace {

void append_float(std::string& out, float v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

void append_triple(std::string& out, const float* v) {
    append_float(out, v[0]);
    out.push_back(' ');
    append_float(out, v[1]);
    out.push_back(' ');
    append_float(out, v[2]);
    out.push_back('\n');
}

}  // namespace

std::string write_cube(const Lut3d& lut, const std::string& title) {
    std::string out;
    out.reserve(lut.lattice().size() * 10 + 128);
    if (!title.empty()) out += "TITLE \"" + title + "\"\n";
    out += "LUT_3D_SIZE " + std::to_string(lut.size()) + "\n";
    out += "DOMAIN_MIN ";
    append_triple(out, lut.domain_min().data());
    out += "DOMAIN_MAX ";
    append_triple(out, lut.domain_max().data());
    const auto lattice = lut.lattice();
    for (std::size_t i = 0; i < lattice.size(); i += 3) append_triple(out, lattice.data() + i);
    return out;
}

void save_cube(const Lut3d& lut, const std::filesystem::path& path, const std::string& title) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LutError("cannot open " + path.string() + " for writing");
    out << write_cube(lut, title);
    if (!out) throw LutError("write failed for " + path.string());
}

Lut3d compose_luts(const Lut3d& first, const Lut3d& second) {
    if (first.size() != second.size())
        throw LutError("cannot compose LUTs of sizes " + std::to_string(first.size()) + " and " +
                       std::to_string(second.size()));
    const auto src = first.lattice();
    std::vector<float> lattice(src.size());
    for (std::size_t i = 0; i < src.size(); i += 3) {
        Rgb v = second.apply({src[i], src[i + 1], src[i + 2]});
        std::copy(v.begin(), v.end(), lattice.begin() + static_cast<std::ptrdiff_t>(i));
    }
    return Lut3d(first.size(), std::move(lattice), first.domain_min(), first.domain_max());
}

ClutBank::ClutBank(int size_, int basis_count_, std::vector<float> basis_)
    : size(size_), basis_count(basis_count_), basis(std::move(basis_)) {
    if (size < 2) throw LutError("CLUT size must be at least 2");
    if (basis_count < 1) throw LutError("CLUT bank needs at least one basis table");
    if (basis.size() != table_length() * static_cast<std::size_t>(basis_count))
        throw LutError("CLUT basis has the wrong length");
    if (!std::all_of(basis.begin(), basis.end(), [](float v) { return std::isfinite(v); }))
        throw LutError("non-finite CLUT basis value");
}

std::span<const float> ClutBank::table(int k) const {
    if (k < 0 || k >= basis_count) throw LutError("basis index out of range");
    return std::span<const float>(basis).subspan(table_length() * static_cast<std::size_t>(k), table_length());
}

Lut3d materialize_clut(const ClutBank& bank, const LutWeights& weights) {
    if (weights.values.size() != static_cast<std::size_t>(bank.basis_count))
        throw LutError("CLUT weight count " + std::to_string(weights.values.size()) + " does not match bank size " +
                       std::to_string(bank.basis_count));
    for (double w : weights.values)
        if (!std::isfinite(w)) throw LutError("non-finite CLUT weight");
    const Lut3d ident = identity_lut(bank.size);
    const std::size_t n = bank.table_length();
    std::vector<double> acc(n, 0.0);
    for (int k = 0; k < bank.basis_count; ++k) {
        const double w = weights.values[static_cast<std::size_t>(k)];
        if (w == 0.0) continue;
        const auto table = bank.table(k);
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * table[i];
    }
    std::vector<float> lattice(n);
    const auto base = ident.lattice();
    for (std::size_t i = 0; i < n; ++i)
        lattice[i] = acc[i] == 0.0 ? base[i] : static_cast<float>(static_cast<double>(base[i]) + acc[i]);
    return Lut3d(bank.size, std::move(lattice));
}

}  // namespace mrstyle::lut
