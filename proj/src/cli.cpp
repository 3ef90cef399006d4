#include "mrstyle/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <set>

#include "mrstyle/config.hpp"
#include "mrstyle/image.hpp"
#include "mrstyle/irstyle.hpp"
#include "mrstyle/lut.hpp"
#include "mrstyle/metrics.hpp"
#include "mrstyle/prior_mapper.hpp"
#include "mrstyle/toy_data.hpp"
#include "mrstyle/training.hpp"
#include "mrstyle/video.hpp"

namespace mrstyle {

namespace {

// Keys any command may read from --config.
const std::set<std::string> kKnownKeys{
    "seed",       "lr",         "steps",          "batch",       "lambda",     "bins",      "crop",
    "variant",    "thumbnail",  "channels1",      "channels2",   "channels3",  "channels4", "interaction_size",
    "head_width", "clut_basis", "lut_size",       "basis_init_scale", "halve_after", "triplets",
    "corpus_size", "corpus_dim", "filter_count",  "filter_size", "log_every"};

struct Common {
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string config;
    int threads = 1;
    std::string variant;
};

int default_threads() {
    if (const char* env = std::getenv("MRSTYLE_THREADS")) {
        int n = 0;
        const std::string_view s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
        if (ec == std::errc() && ptr == s.data() + s.size() && n >= 1) return n;
    }
    return 1;
}

void add_common(CLI::App* cmd, Common& c, bool with_variant) {
    cmd->add_option("--seed", c.seed, "Seed for every random choice")->each([&c](const std::string&) { c.seed_set = true; });
    cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--threads", c.threads, "Worker threads for LUT application (default: $MRSTYLE_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    if (with_variant)
        cmd->add_option("--variant", c.variant, "Architecture: direct, dual or interaction-dual")
            ->check(CLI::IsMember({"direct", "dual", "interaction-dual"}));
}

KeyValueConfig load_config(const Common& c) {
    KeyValueConfig kv = c.config.empty() ? KeyValueConfig() : KeyValueConfig::load(c.config);
    kv.reject_unknown(kKnownKeys);
    if (c.seed_set) kv.set("seed", std::to_string(c.seed));
    if (!c.variant.empty()) kv.set("variant", c.variant);
    return kv;
}

std::uint64_t seed_of(const KeyValueConfig& kv) { return static_cast<std::uint64_t>(kv.get_int("seed", 1)); }

std::unique_ptr<IrStyleModel> load_model(const KeyValueConfig& kv, const std::string& checkpoint) {
    auto model = std::make_unique<IrStyleModel>(model_config_from(kv), seed_of(kv));
    if (!checkpoint.empty()) model->load(checkpoint);
    return model;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
}

// Corpus and filters come from directories when given, otherwise from the
// procedural generators.
std::vector<Image> corpus_for(const std::string& dir, const KeyValueConfig& kv) {
    if (!dir.empty()) return load_corpus(dir);
    const int dim = static_cast<int>(kv.get_int("corpus_dim", kv.get_int("crop", 256) + 32));
    return toy_corpus(static_cast<int>(kv.get_int("corpus_size", 32)), dim, dim, seed_of(kv) + 101);
}

std::vector<lut::Lut3d> filters_for(const std::string& dir, const KeyValueConfig& kv) {
    if (!dir.empty()) return load_filter_library(dir);
    return toy_filters(static_cast<int>(kv.get_int("filter_count", 50)), static_cast<int>(kv.get_int("filter_size", 17)),
                       seed_of(kv) + 202);
}

std::string format_losses(const LossRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "total=%.6f self=%.6f cm=%.6f content=%.6f style=%.6f hist=%.6f", r.total, r.self,
                  r.cm, r.content, r.style, r.hist);
    return buf;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-reference photorealistic color style transfer with predicted 3D LUTs", "mrstyle"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");

    Common common;

    // transfer
    std::string content, style, out_path, style_features, mapper_path, blend_image, model_path, content_map_out;
    double blend_w = 0.5;
    auto* transfer_cmd = app.add_subcommand("transfer", "Recolor a content image after an image or prior-feature reference");
    add_common(transfer_cmd, common, true);
    transfer_cmd->add_option("--content", content, "Content image (PPM/PNG)")->required()->check(CLI::ExistingFile);
    auto* style_opt = transfer_cmd->add_option("--style", style, "Style reference image")->check(CLI::ExistingFile);
    auto* features_opt =
        transfer_cmd->add_option("--style-features", style_features, "MRSF prior features used as the style reference")
            ->check(CLI::ExistingFile);
    style_opt->excludes(features_opt);
    transfer_cmd->add_option("--mapper", mapper_path, "Prior mapper checkpoint (MRSW)")->check(CLI::ExistingFile);
    transfer_cmd->add_option("--blend-image", blend_image, "Image reference mixed with the prior features")
        ->check(CLI::ExistingFile)
        ->needs(features_opt);
    transfer_cmd->add_option("--w", blend_w, "Weight of the blend image in [0,1]")->check(CLI::Range(0.0, 1.0));
    transfer_cmd->add_option("--model", model_path, "Model checkpoint (MRSW); zero-initialized heads if omitted")
        ->check(CLI::ExistingFile);
    transfer_cmd->add_option("--out", out_path, "Output image")->required();
    transfer_cmd->add_option("--content-map", content_map_out, "Also write the intermediate content map");

    // apply-lut
    std::string lut_path, in_path;
    auto* apply_cmd = app.add_subcommand("apply-lut", "Apply a .cube LUT to an image");
    add_common(apply_cmd, common, false);
    apply_cmd->add_option("--lut", lut_path, ".cube file")->required()->check(CLI::ExistingFile);
    apply_cmd->add_option("--in", in_path, "Input image")->required()->check(CLI::ExistingFile);
    apply_cmd->add_option("--out", out_path, "Output image")->required();

    // compose-lut
    std::string first_lut, second_lut, title;
    auto* compose_cmd = app.add_subcommand("compose-lut", "Bake two LUTs applied in sequence into one .cube");
    add_common(compose_cmd, common, false);
    compose_cmd->add_option("--first", first_lut, "LUT applied first")->required()->check(CLI::ExistingFile);
    compose_cmd->add_option("--second", second_lut, "LUT applied second")->required()->check(CLI::ExistingFile);
    compose_cmd->add_option("--out", out_path, "Output .cube")->required();
    compose_cmd->add_option("--title", title, "TITLE line");

    // train
    std::string corpus_dir, filters_dir, log_path;
    int steps_override = -1;
    auto* train_cmd = app.add_subcommand("train", "Train the LUT predictor on synthesized paired and unpaired samples");
    add_common(train_cmd, common, true);
    train_cmd->add_option("--corpus", corpus_dir, "Directory of PPM/PNG source images (default: procedural corpus)")
        ->check(CLI::ExistingDirectory);
    train_cmd->add_option("--filters", filters_dir, "Directory of .cube filters (default: synthetic filters)")
        ->check(CLI::ExistingDirectory);
    train_cmd->add_option("--steps", steps_override, "Override the configured step count")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--log", log_path, "CSV file of per-step losses");
    train_cmd->add_option("--out", out_path, "Model checkpoint to write (MRSW)")->required();

    // train-mapper
    auto* mapper_cmd = app.add_subcommand("train-mapper", "Distill the prior mapper against a frozen model");
    add_common(mapper_cmd, common, true);
    mapper_cmd->add_option("--model", model_path, "Frozen model checkpoint (MRSW)")->check(CLI::ExistingFile);
    mapper_cmd->add_option("--corpus", corpus_dir, "Directory of PPM/PNG images (default: procedural corpus)")
        ->check(CLI::ExistingDirectory);
    mapper_cmd->add_option("--filters", filters_dir, "Directory of .cube filters (default: synthetic filters)")
        ->check(CLI::ExistingDirectory);
    mapper_cmd->add_option("--steps", steps_override, "Override the configured step count")->check(CLI::NonNegativeNumber);
    mapper_cmd->add_option("--log", log_path, "CSV file of per-step losses");
    mapper_cmd->add_option("--out", out_path, "Mapper checkpoint to write (MRSW)")->required();

    // synth-pairs
    int count = 8;
    bool with_features = false;
    std::string out_dir;
    auto* synth_cmd = app.add_subcommand("synth-pairs", "Write training samples: filtered pairs plus an unpaired style");
    add_common(synth_cmd, common, true);
    synth_cmd->add_option("--corpus", corpus_dir, "Directory of PPM/PNG images (default: procedural corpus)")
        ->check(CLI::ExistingDirectory);
    synth_cmd->add_option("--filters", filters_dir, "Directory of .cube filters (default: synthetic filters)")
        ->check(CLI::ExistingDirectory);
    synth_cmd->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
    synth_cmd->add_flag("--prior-features", with_features, "Also write MRSF prior features of each style image");
    synth_cmd->add_option("--out", out_dir, "Output directory")->required();

    // metrics
    std::vector<std::string> metric_a, metric_b;
    auto* metrics_cmd = app.add_subcommand("metrics", "Style Gram loss and content SSIM, one line per image pair");
    add_common(metrics_cmd, common, false);
    metrics_cmd->add_option("--a", metric_a, "First image of each pair (repeatable)")->required()->check(CLI::ExistingFile);
    metrics_cmd->add_option("--b", metric_b, "Second image of each pair (repeatable)")->required()->check(CLI::ExistingFile);

    // video-transfer
    double scene_threshold = kDefaultSceneThreshold;
    auto* video_cmd = app.add_subcommand("video-transfer", "Per-scene LUT transfer over a directory of frames");
    add_common(video_cmd, common, true);
    video_cmd->add_option("--in", in_path, "Directory of frame_NNNNNN.ppm/png")->required()->check(CLI::ExistingDirectory);
    video_cmd->add_option("--style", style, "Style reference image")->required()->check(CLI::ExistingFile);
    video_cmd->add_option("--out", out_dir, "Output frame directory")->required();
    video_cmd->add_option("--scene-threshold", scene_threshold, "Lab histogram distance that starts a new scene")
        ->check(CLI::NonNegativeNumber);
    video_cmd->add_option("--model", model_path, "Model checkpoint (MRSW)")->check(CLI::ExistingFile);

    // dump-lut
    auto* dump_cmd = app.add_subcommand("dump-lut", "Export the predicted transfer as a single .cube");
    add_common(dump_cmd, common, true);
    dump_cmd->add_option("--content", content, "Content image")->required()->check(CLI::ExistingFile);
    dump_cmd->add_option("--style", style, "Style reference image")->required()->check(CLI::ExistingFile);
    dump_cmd->add_option("--model", model_path, "Model checkpoint (MRSW)")->check(CLI::ExistingFile);
    dump_cmd->add_option("--out", out_path, "Output .cube")->required();

    common.threads = default_threads();

    std::vector<const char*> argv{"mrstyle"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        const KeyValueConfig kv = load_config(common);
        const int threads = common.threads;

        if (*transfer_cmd) {
            if (style.empty() && style_features.empty()) {
                err << "transfer: one of --style or --style-features is required\n";
                return 2;
            }
            const auto model = load_model(kv, model_path);
            const Image content_img = read_image(content);
            const int t = model->config().encoder.thumbnail;
            const auto predict = [&]() -> LutSet {
                if (style_features.empty())
                    return predict_luts(make_thumbnail(content_img, t), make_thumbnail(read_image(style), t), *model);
                const PriorFeatureFile priors = read_feature_file(style_features);
                std::array<nn::Shape, kPyramidLevels> shapes;
                const auto tensors = feature_tensors(priors);
                for (std::size_t i = 0; i < shapes.size(); ++i)
                    shapes[i] = {tensors[i].dim(1), tensors[i].dim(2), tensors[i].dim(3)};
                PriorMapper mapper(shapes, model->config().encoder, seed_of(kv));
                if (!mapper_path.empty()) mapper.load(mapper_path);
                std::optional<Image> blend_thumb;
                if (!blend_image.empty()) blend_thumb = make_thumbnail(read_image(blend_image), t);
                return predict_luts_from_priors(make_thumbnail(content_img, t), priors, mapper, *model,
                                                blend_thumb ? &*blend_thumb : nullptr, blend_w);
            };
            if (content_map_out.empty()) {
                write_image(render(content_img, predict(), threads), out_path);
            } else {
                const TransferResult r = apply_luts(content_img, predict(), threads);
                if (!r.content_map) throw std::runtime_error("the direct variant has no content map");
                write_image(r.output, out_path);
                write_image(*r.content_map, content_map_out);
            }
        } else if (*apply_cmd) {
            write_image(lut::apply_lut(lut::read_cube(lut_path), read_image(in_path), threads), out_path);
        } else if (*compose_cmd) {
            lut::save_cube(lut::compose_luts(lut::read_cube(first_lut), lut::read_cube(second_lut)), out_path, title);
        } else if (*train_cmd) {
            TrainConfig cfg = train_config_from(kv);
            if (steps_override >= 0) cfg.steps = steps_override;
            const int log_every = static_cast<int>(kv.get_int("log_every", 50));
            IrStyleModel model(cfg.model, cfg.seed);
            SampleSource source(corpus_for(corpus_dir, kv), filters_for(filters_dir, kv), cfg.crop, cfg.seed + 303);
            Trainer trainer(model, cfg);
            std::string csv = "step,total,self,cm,content,style,hist\n";
            trainer.run(source, [&](int s, const LossRecord& r) {
                char row[256];
                std::snprintf(row, sizeof row, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s, r.total, r.self, r.cm, r.content,
                              r.style, r.hist);
                csv += row;
                if (log_every > 0 && (s % log_every == 0 || s + 1 == cfg.steps))
                    out << "step " << s << ' ' << format_losses(r) << '\n';
            });
            model.save(out_path);
            if (!log_path.empty()) write_text(log_path, csv);
        } else if (*mapper_cmd) {
            MapperTrainConfig mcfg = mapper_config_from(kv);
            if (steps_override >= 0) mcfg.steps = steps_override;
            const int crop_size = static_cast<int>(kv.get_int("crop", 64));
            const int triplet_count = static_cast<int>(kv.get_int("triplets", 32));
            const int log_every = static_cast<int>(kv.get_int("log_every", 50));
            auto model = load_model(kv, model_path);
            nn::set_frozen(model->parameters(), true);
            const PriorSource prior_source(default_prior_config(model->config()), mcfg.seed + 404);
            SampleSource source(corpus_for(corpus_dir, kv), filters_for(filters_dir, kv), crop_size, mcfg.seed + 505);
            std::vector<Triplet> triplets;
            for (int i = 0; i < triplet_count; ++i) {
                const TrainingSample s = source.next();
                triplets.push_back(make_distillation_triplet(*model, prior_source, s.unpaired.content, s.unpaired.style));
            }
            PriorMapper mapper(prior_source.shapes(), model->config().encoder, mcfg.seed);
            nn::Adam opt(mapper.parameters(), nn::AdamOptions{.lr = mcfg.lr});
            std::mt19937_64 rng(mcfg.seed + 606);
            std::string csv = "step,teach\n";
            for (int s = 0; s < mcfg.steps; ++s) {
                if (mcfg.halve_after > 0 && s == mcfg.halve_after) opt.set_lr(mcfg.lr * 0.5);
                std::vector<Triplet> batch;
                std::uniform_int_distribution<std::size_t> pick(0, triplets.size() - 1);
                for (int b = 0; b < mcfg.batch; ++b) batch.push_back(triplets[pick(rng)]);
                const double loss = train_mapper_step(mapper, batch, *model, opt);
                char row[64];
                std::snprintf(row, sizeof row, "%d,%.9g\n", s, loss);
                csv += row;
                if (log_every > 0 && (s % log_every == 0 || s + 1 == mcfg.steps))
                    out << "step " << s << " teach=" << std::to_string(loss) << '\n';
            }
            mapper.save(out_path);
            if (!log_path.empty()) write_text(log_path, csv);
        } else if (*synth_cmd) {
            const TrainConfig cfg = train_config_from(kv);
            SampleSource source(corpus_for(corpus_dir, kv), filters_for(filters_dir, kv), cfg.crop, cfg.seed + 303);
            std::filesystem::create_directories(out_dir);
            std::optional<PriorSource> priors;
            if (with_features) priors.emplace(default_prior_config(cfg.model), cfg.seed + 404);
            for (int i = 0; i < count; ++i) {
                const TrainingSample s = source.next();
                char stem[32];
                std::snprintf(stem, sizeof stem, "pair_%06d", i);
                const std::filesystem::path base = std::filesystem::path(out_dir) / stem;
                write_image(s.paired.i1, base.string() + "_i1.ppm");
                write_image(s.paired.i2, base.string() + "_i2.ppm");
                write_image(s.unpaired.style, base.string() + "_i3.ppm");
                if (priors) write_feature_file(priors->features(s.unpaired.style), base.string() + "_i3.mrsf");
            }
        } else if (*metrics_cmd) {
            if (metric_a.size() != metric_b.size()) {
                err << "metrics: --a and --b must be given the same number of times\n";
                return 2;
            }
            const Encoder net = make_metric_network();
            for (std::size_t i = 0; i < metric_a.size(); ++i) {
                const Image a = read_image(metric_a[i]), b = read_image(metric_b[i]);
                char line[96];
                std::snprintf(line, sizeof line, "style_gram=%.6f content_ssim=%.6f\n", gram_style_loss(a, b, net),
                              content_ssim(a, b));
                out << line;
            }
        } else if (*video_cmd) {
            const auto model = load_model(kv, model_path);
            const VideoResult r = transfer_video(read_frames(in_path), read_image(style), *model, scene_threshold, threads);
            write_frames(r.frames, out_dir);
            for (const Segment& s : r.segments) out << "scene " << s.begin << ' ' << s.end << '\n';
        } else if (*dump_cmd) {
            const auto model = load_model(kv, model_path);
            const int t = model->config().encoder.thumbnail;
            const LutSet luts = predict_luts(make_thumbnail(read_image(content), t), make_thumbnail(read_image(style), t), *model);
            lut::save_cube(luts.composed(), out_path, "mrstyle composed transfer");
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace mrstyle
