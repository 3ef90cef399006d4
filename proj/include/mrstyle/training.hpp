#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mrstyle/config.hpp"
#include "mrstyle/encoder.hpp"
#include "mrstyle/image.hpp"
#include "mrstyle/irstyle.hpp"
#include "mrstyle/lut.hpp"
#include "mrstyle/optim.hpp"

namespace mrstyle {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::uint64_t seed = 1;
    double lr = 5e-4;
    int steps = 500;
    int batch = 4;
    double lambda = 1.0;  // weight of the unpaired terms
    int bins = 64;
    int crop = 256;
    ModelConfig model;

    /// Large-scale settings: batch 24 at crop 256, `epochs` passes over
    /// `dataset_size` samples.
    static TrainConfig full_scale(std::size_t dataset_size, int epochs = 300);
};

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig defaults = {});
TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig defaults = {});

/// Same crop of one source under two filters.
struct PairedSample {
    Image i1, i2;
};

/// Content and style from different source images.
struct UnpairedSample {
    Image content;
    Image style;
};

struct TrainingSample {
    PairedSample paired;
    UnpairedSample unpaired;
};

/// Random crop x crop window (shared by both outputs), then each filter.
PairedSample make_paired_sample(const Image& source, const lut::Lut3d& filter1, const lut::Lut3d& filter2, int crop,
                                std::mt19937_64& rng);

/// Per-channel differentiable histogram of an image tensor (1,3,H,W):
/// bin centers j/(B-1), each pixel split between its two nearest centers
/// with a triangular kernel, normalized by pixel count. Returns (3,B).
nn::Tensor soft_histogram(const nn::Tensor& image, int bins);

struct SoftHistogram {
    int bins = 0;
    std::array<std::vector<double>, 3> channels;
};
SoftHistogram soft_histogram(const Image& image, int bins);

/// L_self + L_cm. The content-map terms are skipped when undefined.
nn::Tensor loss_pair(const nn::Tensor& y1, const nn::Tensor& i2, const nn::Tensor& mc1, const nn::Tensor& mc2);

struct UnpairLoss {
    nn::Tensor total, content, style, hist;
};

/// L_content (deepest level vs i2) + L_style (channel mean/std on the two
/// shallowest levels vs i3) + L_hist (soft-histogram distance vs i3).
UnpairLoss loss_unpair(const nn::Tensor& y2, const nn::Tensor& i2, const nn::Tensor& i3, const Encoder& loss_net,
                       int bins);

struct LossRecord {
    double total = 0, self = 0, cm = 0, content = 0, style = 0, hist = 0;

    LossRecord& operator+=(const LossRecord& o);
    LossRecord scaled(double s) const;
};

/// Maps (content, style) image tensors to (output, content_map); the
/// content map is undefined for single-LUT models.
using TransferFn = std::function<std::pair<nn::Tensor, nn::Tensor>(const nn::Tensor&, const nn::Tensor&)>;

struct SampleTensors {
    nn::Tensor i1, i2, i3;
    static SampleTensors from(const TrainingSample& s);
};

struct SampleLoss {
    nn::Tensor total;
    LossRecord terms;
};

/// Paired branch (I1 -> I2 with content maps of I1 and I2) plus the
/// unpaired branch (I2 content, I3 style), combined as L_pair + lambda * L_unpair.
SampleLoss combined_loss(const TransferFn& fn, const SampleTensors& sample, const Encoder& loss_net, double lambda,
                         int bins);

/// Differentiable thumbnail -> LUT -> full-crop forward of the model.
TransferFn model_transfer_fn(const IrStyleModel& model);

/// Frozen perceptual network used by the unpaired losses and the Gram metric.
Encoder make_loss_network(const EncoderConfig& cfg);

/// One optimizer step over a batch; the loss is the batch mean.
/// Throws TrainingError on a non-finite loss before touching the parameters.
LossRecord train_step(IrStyleModel& model, const Encoder& loss_net, std::span<const TrainingSample> batch,
                      nn::Adam& optimizer, const TrainConfig& cfg);

/// Mean losses without gradients or updates.
LossRecord evaluate_losses(const IrStyleModel& model, const Encoder& loss_net, std::span<const TrainingSample> batch,
                           const TrainConfig& cfg);

/// Deterministic stream of training samples from a corpus and a filter library.
class SampleSource {
public:
    SampleSource(std::vector<Image> corpus, std::vector<lut::Lut3d> filters, int crop, std::uint64_t seed);

    TrainingSample next();
    std::vector<TrainingSample> next_batch(int n);

    [[nodiscard]] const std::vector<Image>& corpus() const noexcept { return corpus_; }
    [[nodiscard]] const std::vector<lut::Lut3d>& filters() const noexcept { return filters_; }

private:
    std::vector<Image> corpus_;
    std::vector<lut::Lut3d> filters_;
    int crop_;
    std::mt19937_64 rng_;
};

/// Owns the optimizer for a model and runs the loop.
class Trainer {
public:
    Trainer(IrStyleModel& model, TrainConfig cfg);

    LossRecord step(std::span<const TrainingSample> batch);
    /// Runs cfg.steps steps; `on_step(step, record)` is called after each.
    std::vector<LossRecord> run(SampleSource& source,
                                const std::function<void(int, const LossRecord&)>& on_step = {});

    [[nodiscard]] const Encoder& loss_network() const noexcept { return loss_net_; }
    [[nodiscard]] nn::Adam& optimizer() noexcept { return optimizer_; }

private:
    IrStyleModel& model_;
    TrainConfig cfg_;
    Encoder loss_net_;
    nn::Adam optimizer_;
};

std::vector<Image> load_corpus(const std::filesystem::path& dir);
std::vector<lut::Lut3d> load_filter_library(const std::filesystem::path& dir);

}  // namespace mrstyle
