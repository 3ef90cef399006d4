#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mrstyle/lut.hpp"
#include "test_util.hpp"

using namespace mrstyle;
using namespace mrstyle::lut;
using mrstyle::testing::random_image;
using mrstyle::testing::random_lut;
using mrstyle::testing::trilinear_oracle;

namespace {

std::string identity_cube_2() {
    return "LUT_3D_SIZE 2\n"
           "0 0 0\n1 0 0\n0 1 0\n1 1 0\n"
           "0 0 1\n1 0 1\n0 1 1\n1 1 1\n";
}

float max_abs_diff(const Image& a, const Image& b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST(IdentityLut, CornersOfSizeTwo) {
    const Lut3d l = identity_lut(2);
    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 2; ++g)
            for (int r = 0; r < 2; ++r) EXPECT_EQ(l.at(r, g, b), (Rgb{float(r), float(g), float(b)}));
}

TEST(IdentityLut, CenterOf33) {
    EXPECT_EQ(identity_lut(33).at(16, 16, 16), (Rgb{0.5f, 0.5f, 0.5f}));
}

TEST(IdentityLut, RejectsTinySizes) {
    EXPECT_THROW(identity_lut(1), LutError);
    EXPECT_THROW(identity_lut(0), LutError);
}

TEST(IdentityLut, ApplicationIsANoOp) {
    std::mt19937_64 rng(7);
    const Image img = random_image(64, 48, rng);
    const Image out = apply_lut(identity_lut(17), img);
    EXPECT_LE(max_abs_diff(img, out), 1e-6f);
    EXPECT_EQ(out, img);
}

TEST(ApplyLut, IdentityPixel) {
    const Rgb out = identity_lut(33).apply({0.2f, 0.4f, 0.6f});
    EXPECT_NEAR(out[0], 0.2f, 1e-7);
    EXPECT_NEAR(out[1], 0.4f, 1e-7);
    EXPECT_NEAR(out[2], 0.6f, 1e-7);
}

TEST(ApplyLut, ConstantLut) {
    std::vector<float> lattice;
    for (int i = 0; i < 5 * 5 * 5; ++i) lattice.insert(lattice.end(), {1.0f, 0.0f, 0.0f});
    const Lut3d red(5, lattice);
    std::mt19937_64 rng(3);
    const Image out = apply_lut(red, random_image(13, 9, rng));
    for (std::size_t i = 0; i < out.data.size(); i += 3) {
        EXPECT_FLOAT_EQ(out.data[i], 1.0f);
        EXPECT_FLOAT_EQ(out.data[i + 1], 0.0f);
        EXPECT_FLOAT_EQ(out.data[i + 2], 0.0f);
    }
}

TEST(ApplyLut, MatchesBruteForceOracle) {
    std::mt19937_64 rng(11);
    const Lut3d l = random_lut(4, rng);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int i = 0; i < 1000; ++i) {
        const Rgb px{u(rng), u(rng), u(rng)};
        const Rgb got = l.apply(px);
        const Rgb want = trilinear_oracle(l, px);
        for (int c = 0; c < 3; ++c) ASSERT_NEAR(got[c], want[c], 1e-6);
    }
}

TEST(ApplyLut, ExactAtLatticePoints) {
    std::mt19937_64 rng(5);
    const Lut3d l = random_lut(9, rng);
    for (int b = 0; b < 9; ++b)
        for (int g = 0; g < 9; ++g)
            for (int r = 0; r < 9; ++r) {
                const Rgb got = l.apply({identity_value(r, 9), identity_value(g, 9), identity_value(b, 9)});
                const Rgb want = l.at(r, g, b);
                for (int c = 0; c < 3; ++c) ASSERT_NEAR(got[c], want[c], 1e-6);
            }
}

TEST(ApplyLut, MonotoneInLatticeValues) {
    std::mt19937_64 rng(9);
    const Lut3d base = random_lut(5, rng);
    const Image img = random_image(32, 32, rng);
    const Image before = apply_lut(base, img);
    std::uniform_int_distribution<std::size_t> pick(0, base.lattice().size() - 1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> raised(base.lattice().begin(), base.lattice().end());
        const std::size_t idx = pick(rng);
        raised[idx] = std::min(1.0f, raised[idx] + 0.3f);
        const Image after = apply_lut(Lut3d(5, raised), img);
        const std::size_t channel = idx % 3;
        for (std::size_t i = channel; i < after.data.size(); i += 3) ASSERT_GE(after.data[i], before.data[i]);
    }
}

TEST(ApplyLut, NanPixelIsAnError) {
    Image img(2, 2, 0.5f);
    img.data[4] = std::nanf("");
    EXPECT_THROW(apply_lut(identity_lut(5), img), LutError);
    EXPECT_THROW((void)identity_lut(5).apply({0.1f, std::nanf(""), 0.3f}), LutError);
}

TEST(ApplyLut, OutOfDomainPixelsClamp) {
    std::mt19937_64 rng(2);
    const Lut3d l = random_lut(6, rng);
    const Rgb got = l.apply({-0.5f, 1.7f, 0.25f});
    const Rgb want = l.apply({0.0f, 1.0f, 0.25f});
    EXPECT_EQ(got, want);
}

TEST(ApplyLut, ThreadCountDoesNotChangeBits) {
    std::mt19937_64 rng(21);
    const Lut3d l = random_lut(17, rng);
    const Image img = random_image(97, 61, rng);
    const Image one = apply_lut(l, img, 1);
    EXPECT_EQ(apply_lut(l, img, 4), one);
    EXPECT_EQ(apply_lut(l, img, 61), one);
}

TEST(ApplyLutChain, MatchesTwoPassesBitExactly) {
    std::mt19937_64 rng(22);
    const Lut3d a = random_lut(9, rng), b = random_lut(5, rng);
    Image img = random_image(45, 23, rng);
    img.data[7] = 1.5f;
    img.data[8] = -0.25f;
    const Image two_pass = apply_lut(b, apply_lut(a, img));
    EXPECT_EQ(apply_lut_chain(a, b, img), two_pass);
    EXPECT_EQ(apply_lut_chain(a, b, img, 5), two_pass);
    EXPECT_EQ(apply_lut_chain(identity_lut(3), identity_lut(9), img), apply_lut(identity_lut(3), img));
    img.data[3] = std::nanf("");
    EXPECT_THROW((void)apply_lut_chain(a, b, img), LutError);
}

TEST(ApplyLut, PreservesDimensions) {
    std::mt19937_64 rng(1);
    const Image img = random_image(31, 7, rng);
    const Image out = apply_lut(random_lut(3, rng), img);
    EXPECT_EQ(out.width, 31);
    EXPECT_EQ(out.height, 7);
}

TEST(ParseCube, SmallestLegalLut) {
    std::istringstream in(identity_cube_2());
    EXPECT_EQ(parse_cube(in), identity_lut(2));
}

TEST(ParseCube, CommentsTitleAndCrlf) {
    std::string text = "# graded\r\nTITLE \"demo\"\r\n" + identity_cube_2();
    std::string crlf;
    for (char c : text) {
        if (c == '\n' && (crlf.empty() || crlf.back() != '\r')) crlf += '\r';
        crlf += c;
    }
    std::istringstream in(crlf);
    EXPECT_EQ(parse_cube(in), identity_lut(2));
}

TEST(ParseCube, AffineDomainRescalesInputs) {
    std::mt19937_64 rng(4);
    const Lut3d unit = random_lut(5, rng);
    std::string text = "LUT_3D_SIZE 5\nDOMAIN_MIN 0 0 0\nDOMAIN_MAX 2 2 2\n";
    std::string body = write_cube(unit);
    text += body.substr(body.find('\n', body.find("DOMAIN_MAX")) + 1);
    std::istringstream in(text);
    const Lut3d wide = parse_cube(in);
    EXPECT_EQ(wide.domain_max(), (Rgb{2, 2, 2}));
    std::uniform_real_distribution<float> u(0.0f, 2.0f);
    for (int i = 0; i < 500; ++i) {
        const Rgb px{u(rng), u(rng), u(rng)};
        const Rgb got = wide.apply(px);
        const Rgb want = trilinear_oracle(unit, {px[0] / 2, px[1] / 2, px[2] / 2});
        for (int c = 0; c < 3; ++c) ASSERT_NEAR(got[c], want[c], 1e-6);
    }
}

TEST(ParseCube, MissingRowReportsEofLine) {
    std::string text = identity_cube_2();
    text.erase(text.rfind("1 1 1\n"));
    std::istringstream in(text);
    try {
        parse_cube(in);
        FAIL() << "expected a parse error";
    } catch (const CubeParseError& e) {
        EXPECT_EQ(e.line(), 9);  // 1 header + 7 rows, error reported past the last line
        EXPECT_NE(std::string(e.what()).find("line 9"), std::string::npos);
    }
}

TEST(ParseCube, MissingSizeIsAnError) {
    std::istringstream in("0 0 0\n1 1 1\n");
    try {
        parse_cube(in);
        FAIL();
    } catch (const CubeParseError& e) {
        EXPECT_EQ(e.line(), 1);
    }
    std::istringstream empty("# nothing\n");
    EXPECT_THROW(parse_cube(empty), CubeParseError);
}

TEST(ParseCube, NonNumericTokenCarriesLine) {
    std::string text = identity_cube_2();
    text.replace(text.find("0 1 1"), 5, "0 x 1");
    std::istringstream in(text);
    try {
        parse_cube(in);
        FAIL();
    } catch (const CubeParseError& e) {
        EXPECT_EQ(e.line(), 8);
        EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
    }
}

TEST(ParseCube, TooManyRows) {
    std::istringstream in(identity_cube_2() + "0.5 0.5 0.5\n");
    try {
        parse_cube(in);
        FAIL();
    } catch (const CubeParseError& e) {
        EXPECT_EQ(e.line(), 10);
    }
}

TEST(WriteCube, IdentityRoundTripsBitExactly) {
    const Lut3d l = identity_lut(2);
    std::istringstream in(write_cube(l));
    EXPECT_EQ(parse_cube(in), l);
}

TEST(WriteCube, RandomRoundTrip) {
    std::mt19937_64 rng(99);
    const Lut3d l = random_lut(9, rng);
    std::istringstream in(write_cube(l, "random"));
    const Lut3d back = parse_cube(in);
    for (std::size_t i = 0; i < l.lattice().size(); ++i) ASSERT_NEAR(back.lattice()[i], l.lattice()[i], 1e-6);
    EXPECT_EQ(back, l);
}

TEST(WriteCube, LineCountIsHeaderPlusEntries) {
    std::mt19937_64 rng(8);
    const std::string text = write_cube(random_lut(6, rng));
    const auto lines = std::count(text.begin(), text.end(), '\n');
    EXPECT_EQ(lines, 3 + 6 * 6 * 6);
    const std::string titled = write_cube(identity_lut(3), "t");
    EXPECT_EQ(std::count(titled.begin(), titled.end(), '\n'), 4 + 27);
}

TEST(MaterializeClut, ZeroWeightsGiveIdentity) {
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n(0.0f, 0.3f);
    std::vector<float> basis(4 * 5 * 5 * 5 * 3);
    for (float& v : basis) v = n(rng);
    const ClutBank bank(5, 4, basis);
    EXPECT_EQ(materialize_clut(bank, {{0, 0, 0, 0}}), identity_lut(5));
}

TEST(MaterializeClut, SingleBasisIsIdentityPlusTable) {
    std::mt19937_64 rng(12);
    std::normal_distribution<float> n(0.0f, 0.2f);
    std::vector<float> basis(3 * 4 * 4 * 4 * 3);
    for (float& v : basis) v = n(rng);
    const ClutBank bank(4, 3, basis);
    const Lut3d l = materialize_clut(bank, {{0, 1, 0}});
    const Lut3d identity = identity_lut(4);
    const auto ident = identity.lattice();
    const auto table = bank.table(1);
    for (std::size_t i = 0; i < ident.size(); ++i)
        EXPECT_NEAR(l.lattice()[i], std::clamp(ident[i] + table[i], 0.0f, 1.0f), 1e-6);
}

TEST(MaterializeClut, MatchesNaiveAccumulation) {
    std::mt19937_64 rng(13);
    const int k = 8, d = 9;
    std::normal_distribution<float> n(0.0f, 0.1f);
    std::vector<float> basis(static_cast<std::size_t>(k) * d * d * d * 3);
    for (float& v : basis) v = n(rng);
    const ClutBank bank(d, k, basis);
    LutWeights w;
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < k; ++i) w.values.push_back(u(rng));
    const Lut3d l = materialize_clut(bank, w);
    for (int b = 0; b < d; ++b)
        for (int g = 0; g < d; ++g)
            for (int r = 0; r < d; ++r) {
                const int coord[3] = {r, g, b};
                for (int c = 0; c < 3; ++c) {
                    double v = double(coord[c]) / (d - 1);
                    for (int j = 0; j < k; ++j)
                        v += w.values[j] * basis[((static_cast<std::size_t>(j) * d + b) * d * d + g * d + r) * 3 + c];
                    ASSERT_NEAR(l.at(r, g, b)[c], std::clamp(v, 0.0, 1.0), 1e-6);
                }
            }
}

TEST(MaterializeClut, LengthMismatch) {
    const ClutBank bank(2, 2, std::vector<float>(2 * 8 * 3, 0.0f));
    EXPECT_THROW(materialize_clut(bank, {{1.0}}), LutError);
    EXPECT_THROW(ClutBank(2, 2, std::vector<float>(5, 0.0f)), LutError);
}

TEST(ComposeLuts, IdentityFirstReproducesSecondAtLatticePoints) {
    std::mt19937_64 rng(14);
    const Lut3d l = random_lut(7, rng);
    const Lut3d c = compose_luts(identity_lut(7), l);
    for (std::size_t i = 0; i < l.lattice().size(); ++i) ASSERT_NEAR(c.lattice()[i], l.lattice()[i], 1e-6);
}

TEST(ComposeLuts, IdentitySecondIsExact) {
    std::mt19937_64 rng(15);
    const Lut3d l = random_lut(7, rng);
    EXPECT_EQ(compose_luts(l, identity_lut(7)), l);
}

TEST(ComposeLuts, SizeMismatch) {
    EXPECT_THROW(compose_luts(identity_lut(3), identity_lut(4)), LutError);
}

TEST(ComposeLuts, CloseToSequentialApplication) {
    std::mt19937_64 rng(16);
    const Lut3d first = mrstyle::testing::random_smooth_lut(33, rng);
    const Lut3d second = mrstyle::testing::random_smooth_lut(33, rng);
    const Lut3d composed = compose_luts(first, second);
    const Image img = random_image(100, 100, rng);
    const Image seq = apply_lut(second, apply_lut(first, img));
    const float err = max_abs_diff(apply_lut(composed, img), seq);
    RecordProperty("max_abs_err", std::to_string(err));
    EXPECT_LE(err, 0.02f);
}
