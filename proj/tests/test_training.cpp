#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"
#include "mrstyle/toy_data.hpp"
#include "mrstyle/training.hpp"
#include "test_util.hpp"

using namespace mrstyle;
using namespace mrstyle::testing;

namespace {

// Kernel mass on every bin, written as a sum over all bins rather than a
// two-neighbor split.
std::vector<double> naive_histogram(const std::vector<double>& values, int bins) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double v : values) {
        const double p = std::clamp(v, 0.0, 1.0) * (bins - 1);
        for (int j = 0; j < bins; ++j) h[static_cast<std::size_t>(j)] += std::max(0.0, 1.0 - std::abs(p - j));
    }
    for (double& x : h) x /= static_cast<double>(values.size());
    return h;
}

std::vector<double> plane(const nn::Tensor& img, int c) {
    const std::size_t n = img.numel() / 3;
    auto d = img.data();
    return {d.begin() + static_cast<std::ptrdiff_t>(c * n), d.begin() + static_cast<std::ptrdiff_t>((c + 1) * n)};
}

double naive_mse(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

// Per-channel (mean, population std with the AdaIN epsilon) of a (1,C,H,W) map.
std::pair<std::vector<double>, std::vector<double>> naive_moments(const nn::Tensor& f) {
    const int c = f.dim(1);
    const std::size_t n = static_cast<std::size_t>(f.dim(2)) * static_cast<std::size_t>(f.dim(3));
    std::vector<double> mean(static_cast<std::size_t>(c)), sd(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += f.data()[k * n + i];
        const double m = s / static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (f.data()[k * n + i] - m) * (f.data()[k * n + i] - m);
        mean[static_cast<std::size_t>(k)] = m;
        sd[static_cast<std::size_t>(k)] = std::sqrt(v / static_cast<double>(n) + nn::kAdainEps);
    }
    return {mean, sd};
}

nn::Tensor image_tensor(int size, std::mt19937_64& rng) { return nn::image_to_tensor(random_image(size, size, rng)); }

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.crop = 16;
    cfg.batch = 2;
    cfg.bins = 16;
    cfg.model.encoder.thumbnail = 16;
    cfg.model.encoder.channels = {4, 4, 6, 6};
    cfg.model.interaction_size = 4;
    cfg.model.head_width = 6;
    cfg.model.clut_basis = 4;
    cfg.model.lut_size = 5;
    return cfg;
}

std::vector<TrainingSample> tiny_batch(int n, std::uint64_t seed) {
    SampleSource src(toy_corpus(4, 24, 24, seed), toy_filters(5, 9, seed + 1), 16, seed + 2);
    return src.next_batch(n);
}

}  // namespace

TEST(PairedSample, EqualFiltersGiveEqualImages) {
    std::mt19937_64 rng(1);
    const Image src = random_image(40, 30, rng);
    const lut::Lut3d f = random_smooth_lut(9, rng);
    const PairedSample p = make_paired_sample(src, f, f, 16, rng);
    EXPECT_EQ(p.i1, p.i2);
    EXPECT_EQ(p.i1.width, 16);
    EXPECT_EQ(p.i1.height, 16);
}

TEST(PairedSample, IdentityFilterReturnsTheCrop) {
    std::mt19937_64 rng(2);
    const Image src = random_image(40, 30, rng);
    const lut::Lut3d f = random_smooth_lut(9, rng);
    const PairedSample p = make_paired_sample(src, f, lut::identity_lut(9), 16, rng);
    // The crop window is not reported, so locate it by search.
    int matches = 0;
    for (int y = 0; y + 16 <= src.height; ++y)
        for (int x = 0; x + 16 <= src.width; ++x)
            if (crop(src, x, y, 16, 16) == p.i2) ++matches;
    EXPECT_GE(matches, 1);
}

TEST(PairedSample, FilteredImageMatchesTrilinearOracle) {
    std::mt19937_64 rng(3);
    const Image src = random_image(32, 32, rng);
    const lut::Lut3d f1 = random_lut(7, rng);
    const lut::Lut3d f2 = lut::identity_lut(7);
    const PairedSample p = make_paired_sample(src, f1, f2, 20, rng);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            const float* in = p.i2.pixel(x, y);
            const lut::Rgb want = trilinear_oracle(f1, {in[0], in[1], in[2]});
            for (int c = 0; c < 3; ++c) EXPECT_NEAR(p.i1.pixel(x, y)[c], want[c], 1e-6);
        }
}

TEST(PairedSample, UndersizedSourceThrows) {
    std::mt19937_64 rng(4);
    const Image src = random_image(10, 40, rng);
    const lut::Lut3d id = lut::identity_lut(3);
    EXPECT_THROW(make_paired_sample(src, id, id, 16, rng), std::invalid_argument);
}

TEST(SoftHistogram, ConstantAtBinCenterIsOneHot) {
    Image img(5, 4);
    for (std::size_t i = 0; i < img.data.size(); i += 3) {
        img.data[i] = 0.0f;
        img.data[i + 1] = 0.5f;
        img.data[i + 2] = 1.0f;
    }
    const SoftHistogram h = soft_histogram(img, 5);
    const std::array<int, 3> hot{0, 2, 4};
    for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 5; ++j)
            EXPECT_NEAR(h.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)], j == hot[c] ? 1.0 : 0.0, 1e-12);
}

TEST(SoftHistogram, ChannelsSumToOne) {
    std::mt19937_64 rng(5);
    for (int bins : {2, 7, 64}) {
        const SoftHistogram h = soft_histogram(random_image(13, 9, rng), bins);
        for (const auto& ch : h.channels) {
            double s = 0.0;
            for (double v : ch) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-5);
        }
    }
}

TEST(SoftHistogram, MatchesNaiveAccumulation) {
    std::mt19937_64 rng(6);
    const nn::Tensor img = image_tensor(8, rng);
    const nn::Tensor h = soft_histogram(img, 16);
    for (int c = 0; c < 3; ++c) {
        const auto want = naive_histogram(plane(img, c), 16);
        for (int j = 0; j < 16; ++j) EXPECT_NEAR(h.data()[static_cast<std::size_t>(c * 16 + j)], want[static_cast<std::size_t>(j)], 1e-6);
    }
}

TEST(SoftHistogram, OutOfRangeValuesAreClamped) {
    const nn::Tensor img = nn::Tensor::from({1, 3, 1, 2}, {-0.5, 1.5, 0.0, 1.0, 2.0, -1.0});
    const nn::Tensor h = soft_histogram(img, 3);
    const std::vector<double> want{0.5, 0, 0.5, 0.5, 0, 0.5, 0.5, 0, 0.5};
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(h.data()[i], want[i]);
}

TEST(SoftHistogram, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    nn::Tensor img = random_tensor({1, 3, 4, 5}, rng, 0.02, 0.98);
    const nn::Tensor weights = random_tensor({3, 9}, rng, -1, 1, false);
    const auto r = check_gradients([&] { return nn::sum(nn::mul(soft_histogram(img, 9), weights)); }, {img}, 1e-6);
    EXPECT_LE(r.max_rel_err, 1e-3);
}

TEST(SoftHistogram, RejectsBadArguments) {
    EXPECT_THROW(soft_histogram(Image(2, 2), 1), std::invalid_argument);
    EXPECT_THROW(soft_histogram(Image(), 8), std::invalid_argument);
}

TEST(LossPair, ZeroWhenEqual) {
    std::mt19937_64 rng(8);
    const nn::Tensor a = image_tensor(6, rng), m = image_tensor(6, rng);
    EXPECT_EQ(loss_pair(a, a, m, m).item(), 0.0);
}

TEST(LossPair, ConstantOffset) {
    std::mt19937_64 rng(9);
    const nn::Tensor i2 = image_tensor(6, rng), m = image_tensor(6, rng);
    const nn::Tensor y1 = nn::add_scalar(i2, 0.1);
    EXPECT_NEAR(loss_pair(y1, i2, m, m).item(), 0.01, 1e-12);
}

TEST(LossPair, MatchesTwoTermOracle) {
    std::mt19937_64 rng(10);
    const nn::Tensor y1 = image_tensor(7, rng), i2 = image_tensor(7, rng);
    const nn::Tensor mc1 = image_tensor(7, rng), mc2 = image_tensor(7, rng);
    const double want = naive_mse(y1.data(), i2.data()) + naive_mse(mc1.data(), mc2.data());
    EXPECT_NEAR(loss_pair(y1, i2, mc1, mc2).item(), want, 1e-12);
    EXPECT_NEAR(loss_pair(y1, i2, {}, {}).item(), naive_mse(y1.data(), i2.data()), 1e-12);
    EXPECT_THROW(loss_pair(y1, image_tensor(6, rng), mc1, mc2), nn::TensorError);
}

class LossUnpairTest : public ::testing::Test {
protected:
    Encoder net = make_loss_network(EncoderConfig{16, {4, 5, 6, 7}});
};

TEST_F(LossUnpairTest, AllZeroWhenEverythingIsEqual) {
    std::mt19937_64 rng(11);
    const nn::Tensor a = image_tensor(16, rng);
    const UnpairLoss l = loss_unpair(a, a, a, net, 16);
    EXPECT_EQ(l.content.item(), 0.0);
    EXPECT_EQ(l.style.item(), 0.0);
    EXPECT_EQ(l.hist.item(), 0.0);
    EXPECT_EQ(l.total.item(), 0.0);
}

TEST_F(LossUnpairTest, StyleMatchedOutputHasOnlyContentLoss) {
    std::mt19937_64 rng(12);
    const nn::Tensor i2 = image_tensor(16, rng), i3 = image_tensor(16, rng);
    const UnpairLoss l = loss_unpair(i3, i2, i3, net, 16);
    EXPECT_EQ(l.style.item(), 0.0);
    EXPECT_EQ(l.hist.item(), 0.0);
    EXPECT_GT(l.content.item(), 0.0);
}

TEST_F(LossUnpairTest, TermsMatchNaiveOracles) {
    std::mt19937_64 rng(13);
    const nn::Tensor y2 = image_tensor(16, rng), i2 = image_tensor(16, rng), i3 = image_tensor(16, rng);
    const UnpairLoss l = loss_unpair(y2, i2, i3, net, 16);

    const FeaturePyramid fy = net.encode(y2), fc = net.encode(i2), fs = net.encode(i3);
    EXPECT_NEAR(l.content.item(), naive_mse(fy.levels[3].data(), fc.levels[3].data()), 1e-12);

    double style = 0.0;
    for (int level : {0, 1}) {
        const auto [my, sy] = naive_moments(fy.levels[static_cast<std::size_t>(level)]);
        const auto [ms, ss] = naive_moments(fs.levels[static_cast<std::size_t>(level)]);
        style += naive_mse(my, ms) + naive_mse(sy, ss);
    }
    EXPECT_NEAR(l.style.item(), style, 1e-12);

    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        const auto hy = naive_histogram(plane(y2, c), 16);
        const auto hs = naive_histogram(plane(i3, c), 16);
        for (int j = 0; j < 16; ++j) d2 += std::pow(hy[static_cast<std::size_t>(j)] - hs[static_cast<std::size_t>(j)], 2);
    }
    EXPECT_NEAR(l.hist.item(), std::sqrt(d2), 1e-9);
    EXPECT_NEAR(l.total.item(), l.content.item() + l.style.item() + l.hist.item(), 1e-12);
}

TEST_F(LossUnpairTest, HistogramDistanceIsSymmetric) {
    std::mt19937_64 rng(14);
    const nn::Tensor a = image_tensor(16, rng), b = image_tensor(16, rng);
    EXPECT_EQ(loss_unpair(a, a, b, net, 16).hist.item(), loss_unpair(b, b, a, net, 16).hist.item());
}

// Three scalar parameters drive both LUTs of a dual mapping through fixed
// bases, so the whole paired + unpaired loss is a function of three numbers.
TEST(CombinedLoss, MicroModelGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(15);
    const int size = 5;
    const int entries = size * size * size * 3;
    const nn::Tensor content_basis = random_tensor({3, entries}, rng, -0.08, 0.08, false);
    const nn::Tensor style_basis = random_tensor({3, entries}, rng, -0.08, 0.08, false);
    nn::Tensor w = nn::Tensor::from({1, 3}, {0.3, -0.4, 0.5}, true);
    const TransferFn fn = [&](const nn::Tensor& content, const nn::Tensor& style) {
        // A style-dependent factor keeps the second input in the graph.
        const double s = 1.0 + 0.1 * nn::mean(style).item();
        const nn::Tensor map = nn::apply_lut(nn::clut_lattice(w, content_basis, size), size, content);
        const nn::Tensor out = nn::apply_lut(nn::clut_lattice(nn::scale(w, s), style_basis, size), size, map);
        return std::make_pair(out, map);
    };
    const Encoder net = make_loss_network(EncoderConfig{16, {3, 4, 4, 5}});
    SampleTensors sample{image_tensor(16, rng), image_tensor(16, rng), image_tensor(16, rng)};
    const auto r = check_gradients([&] { return combined_loss(fn, sample, net, 1.0, 16).total; }, {w}, 1e-6);
    EXPECT_EQ(r.checked, 3u);
    EXPECT_LE(r.max_rel_err, 1e-3);
}

TEST(CombinedLoss, ZeroInitModelHasNoContentLoss) {
    const TrainConfig cfg = tiny_train_config();
    IrStyleModel model(cfg.model, 1);
    const Encoder net = make_loss_network(EncoderConfig{cfg.crop, cfg.model.encoder.channels});
    const auto batch = tiny_batch(1, 3);
    const SampleLoss l = combined_loss(model_transfer_fn(model), SampleTensors::from(batch[0]), net, 1.0, cfg.bins);
    // Identity LUTs: Y2 is I2 up to rounding and the content maps are the inputs.
    EXPECT_LT(l.terms.content, 1e-20);
    EXPECT_DOUBLE_EQ(l.terms.self, l.terms.cm);
    EXPECT_NEAR(l.terms.total, l.terms.self + l.terms.cm + l.terms.content + l.terms.style + l.terms.hist, 1e-12);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
    TrainConfig cfg = tiny_train_config();
    cfg.lr = 0.0;
    IrStyleModel model(cfg.model, 2);
    const auto before = nn::snapshot(model.parameters());
    Trainer trainer(model, cfg);
    const auto batch = tiny_batch(2, 4);
    trainer.step(batch);
    trainer.step(batch);
    const auto after = nn::snapshot(model.parameters());
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values) << before[i].name;
}

TEST(TrainStep, PositiveLearningRateMovesParameters) {
    TrainConfig cfg = tiny_train_config();
    IrStyleModel model(cfg.model, 2);
    std::vector<std::vector<double>> before;
    for (nn::Parameter* p : model.parameters()) before.emplace_back(p->tensor.data().begin(), p->tensor.data().end());
    Trainer trainer(model, cfg);
    const LossRecord r = trainer.step(tiny_batch(2, 5));
    EXPECT_GT(r.total, 0.0);
    bool changed = false;
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        changed |= !std::equal(before[i].begin(), before[i].end(), params[i]->tensor.data().begin());
    EXPECT_TRUE(changed);
}

TEST(TrainStep, FrozenParametersStayFixed) {
    TrainConfig cfg = tiny_train_config();
    IrStyleModel model(cfg.model, 2);
    auto enc = const_cast<Encoder&>(model.encoder()).parameters();
    nn::set_frozen(enc, true);
    const auto before = nn::snapshot(enc);
    Trainer trainer(model, cfg);
    trainer.step(tiny_batch(2, 6));
    const auto after = nn::snapshot(enc);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].values, after[i].values);
}

TEST(TrainStep, NonFiniteLossAbortsBeforeUpdate) {
    TrainConfig cfg = tiny_train_config();
    cfg.lambda = std::numeric_limits<double>::infinity();
    IrStyleModel model(cfg.model, 2);
    const auto before = nn::snapshot(model.parameters());
    Trainer trainer(model, cfg);
    try {
        trainer.step(tiny_batch(2, 7));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    }
    const auto after = nn::snapshot(model.parameters());
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(before[i].values, after[i].values);
}

TEST(TrainStep, SameSeedSameTrajectory) {
    TrainConfig cfg = tiny_train_config();
    cfg.steps = 3;
    std::vector<LossRecord> runs[2];
    std::vector<nn::NamedTensor> weights[2];
    for (int k = 0; k < 2; ++k) {
        IrStyleModel model(cfg.model, 9);
        SampleSource src(toy_corpus(4, 24, 24, 1), toy_filters(5, 9, 2), cfg.crop, 3);
        Trainer trainer(model, cfg);
        runs[k] = trainer.run(src);
        weights[k] = nn::snapshot(model.parameters());
    }
    for (int s = 0; s < 3; ++s) EXPECT_EQ(runs[0][static_cast<std::size_t>(s)].total, runs[1][static_cast<std::size_t>(s)].total);
    for (std::size_t i = 0; i < weights[0].size(); ++i) EXPECT_EQ(weights[0][i].values, weights[1][i].values);
}

TEST(SampleSourceTest, UnpairedStyleComesFromAnotherImage) {
    // Constant images of distinct gray levels make the source recoverable.
    std::vector<Image> corpus;
    for (int i = 0; i < 4; ++i) corpus.emplace_back(20, 20, 0.2f * static_cast<float>(i + 1));
    SampleSource src(corpus, {lut::identity_lut(3)}, 8, 1);
    for (int k = 0; k < 20; ++k) {
        const TrainingSample s = src.next();
        EXPECT_EQ(s.paired.i1, s.paired.i2);
        EXPECT_EQ(s.unpaired.content, s.paired.i2);
        EXPECT_NE(s.unpaired.style.data[0], s.paired.i2.data[0]);
    }
}

TEST(TrainConfigTest, ParsesKeyValueText) {
    std::istringstream in("seed = 42\nlr = 1e-3\nsteps=10\nbatch = 2\nlambda = 0.5\nbins = 32\nvariant = dual\n"
                          "# comment\nlut_size = 9\n");
    const KeyValueConfig kv = KeyValueConfig::parse(in);
    const TrainConfig cfg = train_config_from(kv);
    kv.reject_unused();
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_DOUBLE_EQ(cfg.lr, 1e-3);
    EXPECT_EQ(cfg.steps, 10);
    EXPECT_EQ(cfg.batch, 2);
    EXPECT_DOUBLE_EQ(cfg.lambda, 0.5);
    EXPECT_EQ(cfg.bins, 32);
    EXPECT_EQ(cfg.model.variant, ArchVariant::NonInteractionDual);
    EXPECT_EQ(cfg.model.lut_size, 9);
}

TEST(TrainConfigTest, RejectsBadInput) {
    std::istringstream unknown("seed = 1\ncolour = red\n");
    const KeyValueConfig kv = KeyValueConfig::parse(unknown);
    (void)train_config_from(kv);
    EXPECT_THROW(kv.reject_unused(), ConfigError);

    std::istringstream bad_number("lr = fast\n");
    EXPECT_THROW(train_config_from(KeyValueConfig::parse(bad_number)), ConfigError);

    std::istringstream no_equals("steps 10\n");
    try {
        KeyValueConfig::parse(no_equals);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
    std::istringstream negative("batch = 0\n");
    EXPECT_THROW(train_config_from(KeyValueConfig::parse(negative)), ConfigError);
}

TEST(TrainConfigTest, FullScalePreset) {
    const TrainConfig cfg = TrainConfig::full_scale(2400, 300);
    EXPECT_EQ(cfg.batch, 24);
    EXPECT_EQ(cfg.crop, 256);
    EXPECT_DOUBLE_EQ(cfg.lr, 5e-4);
    EXPECT_EQ(cfg.steps, 100 * 300);
}

TEST(ToyData, DeterministicAndInRange) {
    const auto a = toy_corpus(3, 20, 16, 5);
    const auto b = toy_corpus(3, 20, 16, 5);
    ASSERT_EQ(a.size(), 3u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], b[i]);
        for (float v : a[i].data) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
    EXPECT_NE(a[0], a[1]);
    const auto f = toy_filters(2, 9, 5);
    EXPECT_EQ(f[0].size(), 9);
    EXPECT_FALSE(f[0].is_identity());
    EXPECT_NE(f[0].lattice()[100], f[1].lattice()[100]);
}
