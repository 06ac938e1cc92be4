#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "docdet/detector.hpp"
#include "docdet/error.hpp"
#include "docdet/heatmaps.hpp"
#include "docdet/page_io.hpp"
#include "docdet/parallel.hpp"
#include "docdet/recognizer.hpp"
#include "docdet/synthgen.hpp"
#include "docdet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace docdet;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

// Flags that override values loaded from a config file. Each flag writes into its target only
// when given on the command line; the target's value at registration is shown as the default.
class Overrides {
public:
    template <typename T>
    CLI::Option* add(CLI::App* app, const std::string& name, T& target, const std::string& help) {
        std::ostringstream def;
        def << target;
        return add_setter<T>(app, name, def.str(), [&target](const T& v) { target = v; }, help);
    }

    template <typename T>
    CLI::Option* add_setter(CLI::App* app, const std::string& name, const std::string& default_text,
                            std::function<void(const T&)> set, const std::string& help) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *value, help);
        if (!default_text.empty()) opt->default_str(default_text);
        apply_.push_back([opt, value, set = std::move(set)] {
            if (opt->count() > 0) set(*value);
        });
        return opt;
    }

    CLI::Option* add_switch(CLI::App* app, const std::string& name, std::function<void()> set, const std::string& help) {
        CLI::Option* opt = app->add_flag(name, help);
        apply_.push_back([opt, set = std::move(set)] {
            if (opt->count() > 0) set();
        });
        return opt;
    }

    void apply() const {
        for (const auto& f : apply_) f();
    }

private:
    std::vector<std::function<void()>> apply_;
};

std::vector<int> parse_levels(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("--levels expects comma-separated integers, got '" + text + "'");
        }
    }
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void add_postprocess_flags(CLI::App* cmd, Overrides& ov, PostprocessConfig& post) {
    ov.add(cmd, "--region-threshold", post.region_threshold, "Region channel threshold");
    ov.add(cmd, "--affinity-threshold", post.affinity_threshold, "Affinity channel threshold");
    ov.add(cmd, "--special-threshold", post.special_threshold, "Special channel threshold");
    ov.add(cmd, "--alpha", post.proximity_alpha, "Special-character proximity, multiples of median char height");
    ov.add(cmd, "--min-box-area", post.min_box_area, "Smallest kept box, pixels");
    ov.add_setter<std::string>(
          cmd, "--combine", "separate",
          [&post](const std::string& v) {
              post.combine_mode = v == "sum" ? CombineMode::SumThenThreshold : CombineMode::SeparateThresholds;
          },
          "Channel combination: separate thresholds then OR, or sum then threshold")
        ->check(CLI::IsMember({"separate", "sum"}));
    ov.add_switch(
        cmd, "--no-restore-extent", [&post] { post.restore_extent = false; }, "Keep boxes at their thresholded extent");
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    const json j = read_json_file(path);
    if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    return j;
}

std::vector<fs::path> list_images(const fs::path& input) {
    if (!fs::exists(input)) throw IoError("no such file or directory: " + input.string());
    if (!fs::is_directory(input)) return {input};
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(input)) {
        std::string ext = e.path().extension().string();
        for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
                                    ext == ".tiff"))
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no images in " + input.string());
    return out;
}

// synth

struct SynthArgs {
    std::string spec_file;
    size_t count = 0;
    std::string out;
    std::uint64_t seed = 0;
    int workers = 1;
};

int run_synth(const SynthArgs& a, const CLI::Option* seed_opt) {
    SynthSpec spec;
    if (!a.spec_file.empty()) spec = read_json_file(a.spec_file).get<SynthSpec>();
    if (seed_opt->count() > 0) spec.seed = a.seed;
    spec.validate();
    const CorpusManifest m = write_corpus(spec, a.count, a.out, a.workers);
    std::cout << "wrote " << m.pages.size() << " pages to " << a.out << "\n";
    return 0;
}

// train

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::string config;
    std::string resume;
    std::string schedule = "cosine";
    std::string levels = "16,32,32,32";
    int checkpoint_every = 10;
    int workers = 1;
};

int run_train(const TrainArgs& a, TrainConfig& cfg, ModelConfig& model_cfg, const Overrides& ov,
              const CLI::Option* levels_opt, const CLI::Option* schedule_opt) {
    const json file = load_config_file(a.config);
    for (const auto& [k, v] : file.items())
        if (k != "train" && k != "model") throw ConfigError("unknown config section '" + k + "' (train, model)");

    json header;
    if (!a.resume.empty()) {
        header = read_checkpoint_header(a.resume);
        const json& extra = header.at("extra");
        if (extra.contains("train")) cfg = extra.at("train").get<TrainConfig>();
        model_cfg = header.at("model").get<ModelConfig>();
    }
    if (file.contains("train")) {
        json merged = cfg;
        merged.merge_patch(file.at("train"));
        cfg = merged.get<TrainConfig>();
    }
    if (file.contains("model")) {
        const ModelConfig requested = file.at("model").get<ModelConfig>();
        if (!a.resume.empty() && !(requested == model_cfg))
            throw ConfigError("config file model differs from the checkpoint being resumed");
        model_cfg = requested;
    }
    ov.apply();
    if (schedule_opt->count() > 0) cfg.schedule = a.schedule == "constant" ? LrSchedule::Constant : LrSchedule::Cosine;
    if (levels_opt->count() > 0) {
        if (!a.resume.empty()) throw ConfigError("--levels cannot change the model of a resumed run");
        model_cfg.level_channels = parse_levels(a.levels);
    }
    cfg.validate();
    model_cfg.validate();
    if (a.checkpoint_every < 0) throw ConfigError("--checkpoint-every must be >= 0");

    const std::vector<PageSample> pages = load_corpus(a.corpus);
    if (pages.empty()) throw Error("corpus " + a.corpus + " has no pages");
    std::vector<TrainSample> corpus(pages.size());
    parallel_for(pages.size(), a.workers, [&](size_t i) { corpus[i] = {pages[i].image, make_target(pages[i])}; });

    UNet<float> model = UNet<float>::build(model_cfg, cfg.seed);
    TrainState state;
    if (!a.resume.empty()) {
        model = load_model(a.resume, model_cfg);
        const json& extra = header.at("extra");
        state = optimizer_from_tensors(read_checkpoint_extras(a.resume), model, extra.value("epoch", 0),
                                       extra.value("step", std::int64_t{0}));
    }

    const fs::path out(a.out);
    ensure_dir(out);
    write_json_file(out / "config.json", {{"train", cfg},
                                          {"model", model_cfg},
                                          {"corpus", fs::absolute(a.corpus).string()},
                                          {"pages", pages.size()},
                                          {"resumed_from", a.resume},
                                          {"parameter_count", model.parameter_count()}});
    std::ofstream metrics(out / "metrics.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot write " + (out / "metrics.jsonl").string());

    auto save = [&](const fs::path& path, const UNet<float>& m, const TrainState& s) {
        save_model(path, m, {{"epoch", s.epoch}, {"step", s.adam.step}, {"train", cfg}}, optimizer_tensors(s, m));
    };
    train(model, corpus, cfg, &state, [&](const EpochStats& st, const UNet<float>& m, const TrainState& s) {
        metrics << epoch_to_json(st).dump() << "\n" << std::flush;
        std::cout << "epoch " << st.epoch << "/" << cfg.epochs << " loss " << st.loss << " adv "
                  << st.adversarial_batches << "/" << st.batches << " " << st.seconds << "s\n"
                  << std::flush;
        if (a.checkpoint_every > 0 && st.epoch % a.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_epoch%04d.ckpt", st.epoch);
            save(out / name, m, s);
        }
    });
    save(out / "model.ckpt", model, state);
    std::cout << "saved " << (out / "model.ckpt").string() << "\n";
    return 0;
}

// detect

struct DetectArgs {
    std::string model;
    std::string input;
    std::string out;
    std::string config;
    bool overlay = false;
    int workers = 1;
};

PostprocessConfig postprocess_from_file(const json& file) {
    for (const auto& [k, v] : file.items())
        if (k != "postprocess") throw ConfigError("unknown config section '" + k + "' (postprocess)");
    return file.contains("postprocess") ? file.at("postprocess").get<PostprocessConfig>() : PostprocessConfig{};
}

int run_detect(const DetectArgs& a, PostprocessConfig& post, const Overrides& ov) {
    post = postprocess_from_file(load_config_file(a.config));
    ov.apply();
    post.validate();

    const UNet<float> model = load_model(a.model);
    const std::vector<fs::path> images = list_images(a.input);
    ensure_dir(a.out);
    parallel_for(images.size(), a.workers, [&](size_t i) {
        const Image image = read_image(images[i]);
        const DetectionResult r = detect(model, image, post);
        const std::string stem = images[i].stem().string();
        write_json_file(fs::path(a.out) / (stem + ".json"), detection_to_json(r));
        if (a.overlay) write_overlay(fs::path(a.out) / (stem + "_overlay.png"), image, r);
    });
    std::cout << "detected " << images.size() << " image(s) into " << a.out << "\n";
    return 0;
}

// eval

struct EvalArgs {
    std::string model;
    std::string data;
    std::string format;
    std::string out;
    std::string config;
    std::string granularity = "line";
    double iou = 0.5;
    bool bench = false;
    bool recognize = false;
    int workers = 1;
};

int run_eval(const EvalArgs& a, PostprocessConfig& post, const Overrides& ov) {
    static const std::vector<std::string> formats = {"funsd", "sroie", "synth"};
    if (std::find(formats.begin(), formats.end(), a.format) == formats.end())
        throw ConfigError("unknown dataset format '" + a.format + "'; supported: funsd, sroie, synth");
    if (a.granularity != "line" && a.granularity != "word")
        throw ConfigError("--sroie-granularity must be 'line' or 'word'");
    if (!(a.iou > 0.0 && a.iou <= 1.0)) throw ConfigError("--iou must be in (0, 1]");
    post = postprocess_from_file(load_config_file(a.config));
    ov.apply();
    post.validate();

    const UNet<float> model = load_model(a.model);
    std::vector<GroundTruthPage> gts;
    if (a.format == "funsd")
        gts = load_funsd(a.data);
    else if (a.format == "sroie")
        gts = load_sroie(a.data, a.granularity == "word" ? SroieGranularity::Word : SroieGranularity::Line);
    else
        gts = load_synth(a.data);

    std::unique_ptr<TemplateRecognizer> recognizer;
    if (a.recognize) recognizer = std::make_unique<TemplateRecognizer>();
    EvalOptions opts;
    opts.post = post;
    opts.iou_threshold = a.iou;
    opts.bench = a.bench;
    opts.recognizer = recognizer.get();
    opts.workers = a.workers;
    std::vector<DetectionResult> detections;
    const EvalReport report = evaluate(model, gts, opts, &detections);

    ensure_dir(a.out);
    json j = report_to_json(report);
    j["format"] = a.format;
    j["dataset"] = a.data;
    j["pages"] = gts.size();
    j["iou_threshold"] = a.iou;
    j["postprocess"] = post;
    write_json_file(fs::path(a.out) / "report.json", j);
    json dets = json::array();
    for (size_t i = 0; i < gts.size(); ++i)
        dets.push_back({{"image", gts[i].image.string()}, {"detection", detection_to_json(detections[i])}});
    write_json_file(fs::path(a.out) / "detections.json", dets);
    std::cout << report_table(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"docdet: document text detection with a three-channel U-Net"};
    app.require_subcommand(1);
    Overrides train_ov, detect_ov, eval_ov;

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with character-level ground truth");
    synth_cmd->add_option("--spec", synth.spec_file, "Synth spec JSON (defaults apply when omitted)")
        ->check(CLI::ExistingFile);
    synth_cmd->add_option("--count", synth.count, "Number of pages")->required();
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    CLI::Option* synth_seed = synth_cmd->add_option("--seed", synth.seed, "Corpus seed, overrides the spec's seed");
    synth_cmd->add_option("--workers", synth.workers, "Pages rendered in parallel")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    TrainArgs targs;
    TrainConfig tcfg;
    ModelConfig mcfg;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the detector on a synthetic corpus");
    train_cmd->add_option("--corpus", targs.corpus, "Corpus directory written by synth")->required();
    train_cmd->add_option("--out", targs.out, "Run directory (config echo, metrics.jsonl, checkpoints)")->required();
    train_cmd->add_option("--config", targs.config, "JSON with optional 'train' and 'model' sections")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--resume", targs.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    train_ov.add(train_cmd, "--epochs", tcfg.epochs, "Epochs (total, including resumed ones)");
    train_ov.add(train_cmd, "--batch-size", tcfg.batch_size, "Pages per batch");
    train_ov.add(train_cmd, "--lr", tcfg.learning_rate, "Adam learning rate");
    CLI::Option* schedule_opt = train_cmd->add_option("--schedule", targs.schedule, "Learning-rate schedule")
                                    ->check(CLI::IsMember({"cosine", "constant"}))
                                    ->capture_default_str();
    train_ov.add(train_cmd, "--adversarial-fraction", tcfg.adversarial_fraction,
                 "Probability that a batch is replaced by its PGD counterpart");
    train_ov.add(train_cmd, "--epsilon", tcfg.pgd.epsilon, "PGD L2 budget per image");
    train_ov.add(train_cmd, "--pgd-steps", tcfg.pgd.steps, "PGD iterations");
    train_ov
        .add_setter<double>(
            train_cmd, "--pgd-step-size", "epsilon/4", [&tcfg](const double& v) { tcfg.pgd.step_size = v; },
            "PGD step length");
    train_ov.add_switch(
        train_cmd, "--no-random-start", [&tcfg] { tcfg.pgd.random_start = false; }, "Start PGD at the clean image");
    train_ov.add(train_cmd, "--seed", tcfg.seed, "Seed for initialization, shuffling and attacks");
    CLI::Option* levels_opt =
        train_cmd->add_option("--levels", targs.levels, "Encoder widths, shallowest first")->capture_default_str();
    train_ov.add_switch(
        train_cmd, "--no-norm", [&mcfg] { mcfg.norm = NormKind::None; }, "Disable batch normalization");
    train_cmd->add_option("--checkpoint-every", targs.checkpoint_every, "Epochs between checkpoints, 0 disables")
        ->capture_default_str();
    train_cmd->add_option("--workers", targs.workers, "Threads for target rendering")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    DetectArgs dargs;
    PostprocessConfig dpost;
    CLI::App* detect_cmd = app.add_subcommand("detect", "Detect words in an image or a directory of images");
    detect_cmd->add_option("--model", dargs.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--input", dargs.input, "Image file or directory")->required();
    detect_cmd->add_option("--out", dargs.out, "Output directory (one JSON per image)")->required();
    detect_cmd->add_option("--config", dargs.config, "JSON with an optional 'postprocess' section")
        ->check(CLI::ExistingFile);
    detect_cmd->add_flag("--overlay", dargs.overlay, "Also write <name>_overlay.png");
    detect_cmd->add_option("--workers", dargs.workers, "Images processed in parallel")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    add_postprocess_flags(detect_cmd, detect_ov, dpost);

    EvalArgs eargs;
    PostprocessConfig epost;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score detections against a labeled dataset");
    eval_cmd->add_option("--model", eargs.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eargs.data, "Dataset directory")->required();
    eval_cmd->add_option("--format", eargs.format, "Dataset format: funsd, sroie or synth")->required();
    eval_cmd->add_option("--out", eargs.out, "Output directory (report.json, detections.json)")->required();
    eval_cmd->add_option("--config", eargs.config, "JSON with an optional 'postprocess' section")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--sroie-granularity", eargs.granularity, "SROIE boxes: line or word")->capture_default_str();
    eval_cmd->add_option("--iou", eargs.iou, "IoU threshold for a match")->capture_default_str();
    eval_cmd->add_flag("--bench", eargs.bench, "Time detect per page serially and report latency");
    eval_cmd->add_flag("--recognize", eargs.recognize, "Score text with the template recognizer (edit score)");
    eval_cmd->add_option("--workers", eargs.workers, "Pages processed in parallel (ignored with --bench)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    add_postprocess_flags(eval_cmd, eval_ov, epost);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*synth_cmd) return run_synth(synth, synth_seed);
        if (*train_cmd) return run_train(targs, tcfg, mcfg, train_ov, levels_opt, schedule_opt);
        if (*detect_cmd) return run_detect(dargs, dpost, detect_ov);
        if (*eval_cmd) return run_eval(eargs, epost, eval_ov);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const json::exception& e) {
        std::cerr << "error: invalid configuration: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}
