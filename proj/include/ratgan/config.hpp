#pragma once

// Run configuration: one versioned file holding every module's settings,
// named presets, and the cross-module checks done before any model exists.

#include <fstream>
#include <set>
#include <string>

#include "ratgan/encoders.hpp"
#include "ratgan/evaluation.hpp"
#include "ratgan/training.hpp"

namespace ratgan {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    std::string corpus;             // corpus root
    std::string output_root = "runs";
    std::string encoder_checkpoint;  // empty: <output_root>/encoders.ckpt
    std::string probe_checkpoint;    // empty: <output_root>/probe.ckpt
    EncoderConfig encoder;
    PretrainConfig pretrain;
    TrainSetup setup;
    ProbeConfig probe;
    EvalConfig eval;

    fs::path encoder_path() const {
        return encoder_checkpoint.empty() ? fs::path(output_root) / "encoders.ckpt" : fs::path(encoder_checkpoint);
    }
    fs::path probe_path() const {
        return probe_checkpoint.empty() ? fs::path(output_root) / "probe.ckpt" : fs::path(probe_checkpoint);
    }
    fs::path train_dir() const { return fs::path(output_root) / "train"; }

    /// Every cross-module constraint; the vocabulary size is checked later,
    /// once the corpus is known.
    void validate() const {
        EncoderConfig enc = encoder;
        if (enc.vocab_size == 0) enc.vocab_size = 4;
        enc.validate();
        pretrain.validate();
        setup.validate(encoder);
        probe.validate();
        eval.validate();
        if (encoder.image_size != setup.discriminator.image_size)
            throw InvalidConfig("encoder image size " + std::to_string(encoder.image_size) +
                                " does not match the discriminator input " +
                                std::to_string(setup.discriminator.image_size));
    }

    /// Propagates the run seed into every module that draws randomness.
    void apply_seed(std::uint64_t s) {
        seed = s;
        setup.train.seed = s;
        probe.seed = s;
        eval.seed = s;
    }

    Json to_json() const {
        return {{"schema_version", kConfigSchemaVersion},
                {"preset", preset},
                {"seed", seed},
                {"corpus", corpus},
                {"output_root", output_root},
                {"encoder_checkpoint", encoder_checkpoint},
                {"probe_checkpoint", probe_checkpoint},
                {"encoder", encoder.to_json()},
                {"pretrain", pretrain.to_json()},
                {"train", setup.train.to_json()},
                {"generator", setup.generator.to_json()},
                {"discriminator", setup.discriminator.to_json()},
                {"probe", probe.to_json()},
                {"eval", {{"samples", eval.samples}, {"batch_size", eval.batch_size}, {"seed", eval.seed}}}};
    }

    /// Starts from the named preset (default "desk") and overlays the given fields.
    static RunConfig from_json(const Json& j);
};

/// Desk scale: 64x64 synthetic shapes, step-bounded.
inline RunConfig desk_preset() {
    RunConfig c;
    c.preset = "desk";
    c.encoder = EncoderConfig::desk();
    c.encoder.sentence_norm = 8.0;  // sqrt(d)
    c.pretrain.steps = 1500;
    c.pretrain.learning_rate = 1e-3;
    c.setup.generator = GeneratorConfig::desk();
    c.setup.discriminator = DiscriminatorConfig::desk();
    c.setup.train.g_lr = 2e-4;
    c.setup.train.d_lr = 8e-4;
    c.setup.train.batch_size = 8;
    c.setup.train.steps = 2000;
    c.setup.train.penalty.weight = 2.0;
    c.setup.train.penalty.power = 2.0;
    c.eval.samples = 512;
    return c;
}

/// Full architecture with the small-dataset schedule (600 epochs, batch 24).
inline RunConfig full_small_dataset_preset() {
    RunConfig c;
    c.preset = "full-small-dataset";
    c.setup.train.batch_size = 24;
    c.setup.train.epochs = 600;
    c.eval.samples = 30000;
    return c;
}

/// Full architecture with the large-dataset schedule (300 epochs, batch 48).
inline RunConfig full_large_dataset_preset() {
    RunConfig c = full_small_dataset_preset();
    c.preset = "full-large-dataset";
    c.setup.train.batch_size = 48;
    c.setup.train.epochs = 300;
    return c;
}

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"desk", "full-small-dataset", "full-large-dataset"};
    return names;
}

inline RunConfig preset_config(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "full-small-dataset") return full_small_dataset_preset();
    if (name == "full-large-dataset") return full_large_dataset_preset();
    throw InvalidConfig("unknown preset '" + name + "' (expected desk, full-small-dataset or full-large-dataset)");
}

inline RunConfig RunConfig::from_json(const Json& j) {
    if (!j.is_object()) throw InvalidConfig("run configuration must be a JSON object");
    static const std::set<std::string> known = {
        "schema_version", "preset",  "seed",      "corpus",    "output_root",   "encoder_checkpoint", "probe_checkpoint",
        "encoder",        "pretrain", "train",    "generator", "discriminator", "probe",              "eval"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw InvalidConfig("unknown configuration key '" + key + "'");
    const int version = j.value("schema_version", kConfigSchemaVersion);
    if (version != kConfigSchemaVersion)
        throw IncompatibleVersion("configuration schema version " + std::to_string(version) + ", this build reads " +
                                  std::to_string(kConfigSchemaVersion));
    try {
        RunConfig c = preset_config(j.value("preset", std::string("desk")));
        c.corpus = j.value("corpus", c.corpus);
        c.output_root = j.value("output_root", c.output_root);
        c.encoder_checkpoint = j.value("encoder_checkpoint", c.encoder_checkpoint);
        c.probe_checkpoint = j.value("probe_checkpoint", c.probe_checkpoint);
        // Section objects overlay the preset field by field.
        auto overlay = [&](const char* key, Json base) {
            if (j.contains(key)) base.merge_patch(j.at(key));
            return base;
        };
        c.encoder = EncoderConfig::from_json(overlay("encoder", c.encoder.to_json()));
        c.pretrain = PretrainConfig::from_json(overlay("pretrain", c.pretrain.to_json()));
        c.setup.train = TrainConfig::from_json(overlay("train", c.setup.train.to_json()));
        c.setup.generator = GeneratorConfig::from_json(overlay("generator", c.setup.generator.to_json()));
        c.setup.discriminator = DiscriminatorConfig::from_json(overlay("discriminator", c.setup.discriminator.to_json()));
        c.probe = ProbeConfig::from_json(overlay("probe", c.probe.to_json()));
        const Json ev = overlay("eval", {{"samples", c.eval.samples}, {"batch_size", c.eval.batch_size}});
        c.eval.samples = ev.at("samples").get<std::size_t>();
        c.eval.batch_size = ev.at("batch_size").get<std::size_t>();
        c.apply_seed(j.value("seed", c.seed));
        return c;
    } catch (const Json::exception& e) {
        throw InvalidConfig(std::string("malformed run configuration: ") + e.what());
    }
}

inline RunConfig load_run_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InvalidConfig("cannot open configuration file " + path.string());
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw InvalidConfig("configuration file " + path.string() + " is not valid JSON: " + e.what());
    }
    return RunConfig::from_json(j);
}

}  // namespace ratgan
