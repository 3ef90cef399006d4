#include "mrstyle/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mrstyle/lut_ops.hpp"
#include "mrstyle/ops.hpp"

namespace mrstyle {

TrainConfig TrainConfig::full_scale(std::size_t dataset_size, int epochs) {
    TrainConfig cfg;
    cfg.batch = 24;
    cfg.crop = 256;
    cfg.lr = 5e-4;
    const std::size_t per_epoch = std::max<std::size_t>(1, dataset_size / 24);
    cfg.steps = static_cast<int>(per_epoch * static_cast<std::size_t>(epochs));
    return cfg;
}

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig d) {
    d.encoder.thumbnail = static_cast<int>(kv.get_int("thumbnail", d.encoder.thumbnail));
    for (int i = 0; i < kPyramidLevels; ++i) {
        const std::string key = "channels" + std::to_string(i + 1);
        d.encoder.channels[static_cast<std::size_t>(i)] =
            static_cast<int>(kv.get_int(key, d.encoder.channels[static_cast<std::size_t>(i)]));
    }
    d.interaction_size = static_cast<int>(kv.get_int("interaction_size", d.interaction_size));
    d.head_width = static_cast<int>(kv.get_int("head_width", d.head_width));
    d.clut_basis = static_cast<int>(kv.get_int("clut_basis", d.clut_basis));
    d.lut_size = static_cast<int>(kv.get_int("lut_size", d.lut_size));
    d.basis_init_scale = kv.get_double("basis_init_scale", d.basis_init_scale);
    if (kv.has("variant")) d.variant = parse_variant(kv.get_string("variant", ""));
    return d;
}

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig d) {
    d.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(d.seed)));
    d.lr = kv.get_double("lr", d.lr);
    d.steps = static_cast<int>(kv.get_int("steps", d.steps));
    d.batch = static_cast<int>(kv.get_int("batch", d.batch));
    d.lambda = kv.get_double("lambda", d.lambda);
    d.bins = static_cast<int>(kv.get_int("bins", d.bins));
    d.crop = static_cast<int>(kv.get_int("crop", d.crop));
    d.model = model_config_from(kv, d.model);
    if (d.steps < 0 || d.batch < 1 || d.bins < 2 || d.crop < 1 || d.lr < 0 || d.lambda < 0)
        throw ConfigError("training config out of range");
    return d;
}

PairedSample make_paired_sample(const Image& source, const lut::Lut3d& filter1, const lut::Lut3d& filter2, int crop_size,
                                std::mt19937_64& rng) {
    if (source.width < crop_size || source.height < crop_size)
        throw std::invalid_argument("source image " + std::to_string(source.width) + "x" + std::to_string(source.height) +
                                    " is smaller than the " + std::to_string(crop_size) + " crop");
    std::uniform_int_distribution<int> dx(0, source.width - crop_size), dy(0, source.height - crop_size);
    const int x0 = dx(rng);
    const int y0 = dy(rng);
    const Image window = crop(source, x0, y0, crop_size, crop_size);
    return {lut::apply_lut(filter1, window), lut::apply_lut(filter2, window)};
}

namespace {

// Lower bin and weight of the upper bin for a value in [0, 1].
std::pair<int, double> bin_split(double v, int bins) {
    const double p = std::clamp(v, 0.0, 1.0) * (bins - 1);
    int j = static_cast<int>(std::floor(p));
    if (j >= bins - 1) j = bins - 2;
    return {j, p - j};
}

}  // namespace

nn::Tensor soft_histogram(const nn::Tensor& image, int bins) {
    if (bins < 2) throw std::invalid_argument("soft_histogram needs at least 2 bins");
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
        throw nn::TensorError("soft_histogram expects (1,3,H,W), got " + nn::shape_string(image.shape()));
    const std::size_t plane = static_cast<std::size_t>(image.dim(2)) * static_cast<std::size_t>(image.dim(3));
    if (plane == 0) throw std::invalid_argument("soft_histogram of an empty image");
    auto out = nn::make_result({3, bins}, {&image});
    const auto& px = image.node().data;
    const double inv_n = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            const auto [j, t] = bin_split(px[c * plane + i], bins);
            out->data[c * static_cast<std::size_t>(bins) + static_cast<std::size_t>(j)] += (1.0 - t) * inv_n;
            out->data[c * static_cast<std::size_t>(bins) + static_cast<std::size_t>(j) + 1] += t * inv_n;
        }
    if (out->requires_grad)
        out->backward = [plane, bins, inv_n](nn::Node& self) {
            nn::Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            const double slope = (bins - 1) * inv_n;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < plane; ++i) {
                    const double v = p.data[c * plane + i];
                    if (v < 0.0 || v > 1.0) continue;
                    const auto [j, t] = bin_split(v, bins);
                    (void)t;
                    const double* g = &self.grad[c * static_cast<std::size_t>(bins) + static_cast<std::size_t>(j)];
                    p.grad[c * plane + i] += slope * (g[1] - g[0]);
                }
        };
    return nn::Tensor(out);
}

SoftHistogram soft_histogram(const Image& image, int bins) {
    if (image.empty()) throw std::invalid_argument("soft_histogram of an empty image");
    nn::NoGradGuard guard;
    const nn::Tensor h = soft_histogram(nn::image_to_tensor(image), bins);
    SoftHistogram out;
    out.bins = bins;
    for (std::size_t c = 0; c < 3; ++c)
        out.channels[c].assign(h.data().begin() + static_cast<std::ptrdiff_t>(c * bins),
                               h.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * bins));
    return out;
}

nn::Tensor loss_pair(const nn::Tensor& y1, const nn::Tensor& i2, const nn::Tensor& mc1, const nn::Tensor& mc2) {
    nn::Tensor self_term = nn::mse(y1, i2);
    if (!mc1.defined() && !mc2.defined()) return self_term;
    return nn::add(self_term, nn::mse(mc1, mc2));
}

UnpairLoss loss_unpair(const nn::Tensor& y2, const nn::Tensor& i2, const nn::Tensor& i3, const Encoder& loss_net,
                       int bins) {
    const FeaturePyramid fy = loss_net.encode_resized(y2);
    const FeaturePyramid fc = loss_net.encode_resized(i2);
    const FeaturePyramid fs = loss_net.encode_resized(i3);
    UnpairLoss out;
    out.content = nn::mse(fy.levels[kPyramidLevels - 1], fc.levels[kPyramidLevels - 1]);
    for (std::size_t l = 0; l < 2; ++l) {
        nn::Tensor term = nn::add(nn::mse(nn::channel_mean(fy.levels[l]), nn::channel_mean(fs.levels[l])),
                                  nn::mse(nn::channel_std(fy.levels[l]), nn::channel_std(fs.levels[l])));
        out.style = out.style.defined() ? nn::add(out.style, term) : term;
    }
    out.hist = nn::l2_distance(soft_histogram(y2, bins), soft_histogram(i3, bins));
    out.total = nn::add(nn::add(out.content, out.style), out.hist);
    return out;
}

LossRecord& LossRecord::operator+=(const LossRecord& o) {
    total += o.total;
    self += o.self;
    cm += o.cm;
    content += o.content;
    style += o.style;
    hist += o.hist;
    return *this;
}

LossRecord LossRecord::scaled(double s) const {
    return {total * s, self * s, cm * s, content * s, style * s, hist * s};
}

SampleTensors SampleTensors::from(const TrainingSample& s) {
    return {nn::image_to_tensor(s.paired.i1), nn::image_to_tensor(s.paired.i2), nn::image_to_tensor(s.unpaired.style)};
}

SampleLoss combined_loss(const TransferFn& fn, const SampleTensors& s, const Encoder& loss_net, double lambda, int bins) {
    const auto [y1, mc1] = fn(s.i1, s.i2);
    nn::Tensor mc2;
    if (mc1.defined()) mc2 = fn(s.i2, s.i1).second;
    const nn::Tensor y2 = fn(s.i2, s.i3).first;

    const nn::Tensor self_term = nn::mse(y1, s.i2);
    nn::Tensor pair = self_term;
    double cm = 0.0;
    if (mc1.defined()) {
        const nn::Tensor cm_term = nn::mse(mc1, mc2);
        cm = cm_term.item();
        pair = nn::add(pair, cm_term);
    }
    const UnpairLoss unpair = loss_unpair(y2, s.i2, s.i3, loss_net, bins);

    SampleLoss out;
    out.total = nn::add(pair, nn::scale(unpair.total, lambda));
    out.terms = {out.total.item(), self_term.item(), cm, unpair.content.item(), unpair.style.item(), unpair.hist.item()};
    return out;
}

TransferFn model_transfer_fn(const IrStyleModel& model) {
    // Pyramids are memoized per input tensor so each image of a sample is
    // encoded once even though it appears in several forwards.
    auto cache = std::make_shared<std::map<const nn::Node*, std::pair<nn::Tensor, FeaturePyramid>>>();
    auto pyramid = [&model, cache](const nn::Tensor& img) -> const FeaturePyramid& {
        auto it = cache->find(img.node_ptr().get());
        if (it == cache->end())
            it = cache->emplace(img.node_ptr().get(), std::make_pair(img, model.encoder().encode_resized(img))).first;
        return it->second.second;
    };
    return [&model, pyramid](const nn::Tensor& content, const nn::Tensor& style) {
        return model.apply(model.forward_features(pyramid(content), pyramid(style)), content);
    };
}

Encoder make_loss_network(const EncoderConfig& cfg) {
    // Fixed seed: the perceptual network is part of the loss definition.
    Encoder net(cfg, 0x5eed1055ULL, "loss_net");
    nn::set_frozen(net.parameters(), true);
    return net;
}

namespace {

void require_finite(const LossRecord& r) {
    for (double v : {r.total, r.self, r.cm, r.content, r.style, r.hist})
        if (!std::isfinite(v))
            throw TrainingError("non-finite loss (total=" + std::to_string(r.total) + " self=" + std::to_string(r.self) +
                                " cm=" + std::to_string(r.cm) + " content=" + std::to_string(r.content) +
                                " style=" + std::to_string(r.style) + " hist=" + std::to_string(r.hist) + ")");
}

}  // namespace

LossRecord train_step(IrStyleModel& model, const Encoder& loss_net, std::span<const TrainingSample> batch,
                      nn::Adam& optimizer, const TrainConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("train_step on an empty batch");
    optimizer.zero_grad();
    const double inv = 1.0 / static_cast<double>(batch.size());
    LossRecord mean;
    for (const TrainingSample& sample : batch) {
        // One graph per sample keeps peak memory at a single sample.
        SampleLoss loss = combined_loss(model_transfer_fn(model), SampleTensors::from(sample), loss_net, cfg.lambda, cfg.bins);
        require_finite(loss.terms);
        nn::scale(loss.total, inv).backward();
        mean += loss.terms.scaled(inv);
    }
    optimizer.step();
    return mean;
}

LossRecord evaluate_losses(const IrStyleModel& model, const Encoder& loss_net, std::span<const TrainingSample> batch,
                           const TrainConfig& cfg) {
    nn::NoGradGuard guard;
    LossRecord mean;
    for (const TrainingSample& sample : batch)
        mean += combined_loss(model_transfer_fn(model), SampleTensors::from(sample), loss_net, cfg.lambda, cfg.bins)
                    .terms.scaled(1.0 / static_cast<double>(batch.size()));
    return mean;
}

SampleSource::SampleSource(std::vector<Image> corpus, std::vector<lut::Lut3d> filters, int crop, std::uint64_t seed)
    : corpus_(std::move(corpus)), filters_(std::move(filters)), crop_(crop), rng_(seed) {
    if (corpus_.size() < 2) throw std::invalid_argument("sample source needs at least two corpus images");
    if (filters_.empty()) throw std::invalid_argument("sample source needs at least one filter");
}

TrainingSample SampleSource::next() {
    std::uniform_int_distribution<std::size_t> pick_image(0, corpus_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_filter(0, filters_.size() - 1);
    const std::size_t a = pick_image(rng_);
    std::size_t b = pick_image(rng_);
    while (b == a) b = pick_image(rng_);
    const std::size_t f1 = pick_filter(rng_);
    const std::size_t f2 = pick_filter(rng_);
    const std::size_t f3 = pick_filter(rng_);
    TrainingSample s;
    s.paired = make_paired_sample(corpus_[a], filters_[f1], filters_[f2], crop_, rng_);
    s.unpaired.content = s.paired.i2;
    s.unpaired.style = make_paired_sample(corpus_[b], filters_[f3], filters_[f3], crop_, rng_).i1;
    return s;
}

std::vector<TrainingSample> SampleSource::next_batch(int n) {
    std::vector<TrainingSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(next());
    return out;
}

Trainer::Trainer(IrStyleModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      loss_net_(make_loss_network(EncoderConfig{cfg_.crop, cfg_.model.encoder.channels})),
      optimizer_(model.parameters(), nn::AdamOptions{.lr = cfg_.lr}) {}

LossRecord Trainer::step(std::span<const TrainingSample> batch) {
    return train_step(model_, loss_net_, batch, optimizer_, cfg_);
}

std::vector<LossRecord> Trainer::run(SampleSource& source, const std::function<void(int, const LossRecord&)>& on_step) {
    std::vector<LossRecord> history;
    history.reserve(static_cast<std::size_t>(cfg_.steps));
    for (int s = 0; s < cfg_.steps; ++s) {
        const auto batch = source.next_batch(cfg_.batch);
        history.push_back(step(batch));
        if (on_step) on_step(s, history.back());
    }
    return history;
}

namespace {

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir,
                                                std::initializer_list<std::string_view> extensions) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::vector<Image> load_corpus(const std::filesystem::path& dir) {
    std::vector<Image> out;
    for (const auto& p : sorted_files(dir, {".ppm", ".png"})) out.push_back(read_image(p));
    if (out.empty()) throw std::runtime_error("no PPM/PNG images in " + dir.string());
    return out;
}

std::vector<lut::Lut3d> load_filter_library(const std::filesystem::path& dir) {
    std::vector<lut::Lut3d> out;
    for (const auto& p : sorted_files(dir, {".cube"})) out.push_back(lut::read_cube(p));
    if (out.empty()) throw std::runtime_error("no .cube filters in " + dir.string());
    return out;
}

}  // namespace mrstyle
