#pragma once

// Corpus layout on disk:
//
//   <root>/images/<id>.png
//   <root>/captions/<id>.txt      one caption per line
//   <root>/splits/{train,test}.txt  optional, one id per line
//   <root>/manifest.jsonl          synthetic corpora only

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ratgan/image.hpp"
#include "ratgan/serialize.hpp"
#include "ratgan/tensor.hpp"
#include "ratgan/text.hpp"

namespace ratgan {

namespace fs = std::filesystem;

using WarningSink = std::function<void(const std::string&)>;

inline void warn_stderr(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

struct CaptionedImageRecord {
    std::string id;
    fs::path image_path;
    std::vector<std::string> captions;
    std::string split = "train";
};

inline std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(is, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

/// `split` is "train", "test" or "all".  Records without split listings are
/// tagged "train".
inline std::vector<CaptionedImageRecord> load_corpus(const fs::path& root, const std::string& split = "all",
                                                     const WarningSink& warn = warn_stderr) {
    if (!fs::is_directory(root)) throw InvalidInput("corpus root does not exist: " + root.string());
    if (!fs::is_directory(root / "images") || !fs::is_directory(root / "captions"))
        throw InvalidInput("corpus root lacks images/ or captions/: " + root.string());
    if (split != "train" && split != "test" && split != "all") throw InvalidInput("unknown split '" + split + "'");

    std::map<std::string, std::string> tags;
    for (const char* name : {"train", "test"}) {
        const auto p = root / "splits" / (std::string(name) + ".txt");
        if (fs::exists(p))
            for (auto& id : read_lines(p)) tags[id] = name;
    }

    std::vector<fs::path> images;
    for (const auto& e : fs::directory_iterator(root / "images"))
        if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
    std::sort(images.begin(), images.end());

    std::vector<CaptionedImageRecord> out;
    for (const auto& img : images) {
        CaptionedImageRecord r;
        r.id = img.stem().string();
        r.image_path = img;
        const auto cap = root / "captions" / (r.id + ".txt");
        if (!fs::exists(cap)) {
            warn("image '" + r.id + "' has no caption file; skipped");
            continue;
        }
        r.captions = read_lines(cap);
        if (r.captions.empty()) {
            warn("caption file for '" + r.id + "' is empty; skipped");
            continue;
        }
        if (auto it = tags.find(r.id); it != tags.end()) r.split = it->second;
        if (split == "all" || r.split == split) out.push_back(std::move(r));
    }
    if (out.empty()) throw InvalidInput("corpus at " + root.string() + " has no usable records for split '" + split + "'");
    return out;
}

/// Records with their decoded images kept in memory.
struct Corpus {
    std::vector<CaptionedImageRecord> records;
    std::vector<Image> images;

    std::size_t size() const { return records.size(); }

    std::vector<std::string> all_captions() const {
        std::vector<std::string> out;
        for (const auto& r : records) out.insert(out.end(), r.captions.begin(), r.captions.end());
        return out;
    }
};

inline Corpus load_images(std::vector<CaptionedImageRecord> records) {
    Corpus c;
    c.images.reserve(records.size());
    for (const auto& r : records) c.images.push_back(read_png(r.image_path));
    c.records = std::move(records);
    return c;
}

inline Image fit_to(const Image& img, std::size_t size) {
    return img.height == size && img.width == size ? img : resize_bilinear(img, size, size);
}

/// Resize to 76/64 of the target, take a random target-sized crop, then flip
/// horizontally with probability 0.5.
inline Image random_view(const Image& img, std::size_t target, Rng& rng) {
    const std::size_t big = (target * 76 + 32) / 64;
    Image scaled = img.height == big && img.width == big ? img : resize_bilinear(img, big, big);
    std::uniform_int_distribution<std::size_t> off(0, big - target);
    const std::size_t top = off(rng), left = off(rng);
    Image view = crop(scaled, top, left, target, target);
    if (std::bernoulli_distribution(0.5)(rng)) view = flip_horizontal(view);
    return view;
}

struct Batch {
    Tensor<float> images;  // [N, 3, R, R]
    std::vector<TokenSequence> tokens;
    std::vector<std::string> captions;
    std::vector<std::size_t> records;  // indices into the corpus
    std::vector<std::string> ids;

    std::size_t size() const { return ids.size(); }
};

inline void store_image(const Image& img, Tensor<float>& batch, std::size_t slot) {
    const std::size_t n = img.pixels.size();
    std::copy_n(img.pixels.data(), n, batch.data() + slot * n);
}

/// Draws batches from a corpus.  Requests larger than the corpus fall back to
/// sampling with replacement and warn once per sampler.
class BatchSampler {
public:
    BatchSampler(const Corpus& corpus, const Vocabulary& vocab, std::size_t resolution, bool augment = true,
                 WarningSink warn = warn_stderr)
        : corpus_(&corpus), vocab_(&vocab), resolution_(resolution), augment_(augment), warn_(std::move(warn)) {
        if (corpus.size() == 0) throw InvalidInput("cannot sample from an empty corpus");
    }

    Batch sample(std::size_t n, Rng& rng) {
        if (n < 2) throw InvalidConfig("batch size must be at least 2");
        const std::size_t m = corpus_->size();
        std::vector<std::size_t> pick;
        if (n <= m) {
            std::vector<std::size_t> idx(m);
            for (std::size_t i = 0; i < m; ++i) idx[i] = i;
            for (std::size_t i = 0; i < n; ++i) {
                std::uniform_int_distribution<std::size_t> d(i, m - 1);
                std::swap(idx[i], idx[d(rng)]);
            }
            pick.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
        } else {
            if (!warned_) {
                warn_("batch size " + std::to_string(n) + " exceeds corpus size " + std::to_string(m) +
                      "; sampling with replacement");
                warned_ = true;
            }
            std::uniform_int_distribution<std::size_t> d(0, m - 1);
            for (std::size_t i = 0; i < n; ++i) pick.push_back(d(rng));
        }
        return assemble(pick, rng);
    }

    /// Batch of the given records; still draws caption choice (and a view when augmenting) from rng.
    Batch assemble(const std::vector<std::size_t>& pick, Rng& rng) const {
        Batch b;
        b.images = Tensor<float>({pick.size(), 3, resolution_, resolution_});
        for (std::size_t i = 0; i < pick.size(); ++i) {
            const auto& rec = corpus_->records.at(pick[i]);
            std::uniform_int_distribution<std::size_t> cd(0, rec.captions.size() - 1);
            const std::string& cap = rec.captions[cd(rng)];
            const Image& src = corpus_->images.at(pick[i]);
            store_image(augment_ ? random_view(src, resolution_, rng) : fit_to(src, resolution_), b.images, i);
            b.tokens.push_back(vocab_->encode(cap));
            b.captions.push_back(cap);
            b.records.push_back(pick[i]);
            b.ids.push_back(rec.id);
        }
        return b;
    }

private:
    const Corpus* corpus_;
    const Vocabulary* vocab_;
    std::size_t resolution_;
    bool augment_;
    WarningSink warn_;
    bool warned_ = false;
};

inline Batch make_batch(const Corpus& corpus, std::size_t n, Rng& rng, const Vocabulary& vocab,
                        std::size_t resolution, bool augment = true) {
    return BatchSampler(corpus, vocab, resolution, augment).sample(n, rng);
}

// ---- synthetic shapes corpus -------------------------------------------

struct NamedColor {
    std::string name;
    std::array<float, 3> rgb;  // in [-1, 1]
};

struct SyntheticSpec {
    std::vector<NamedColor> colors = {
        {"red", {0.85f, -0.8f, -0.8f}},
        {"green", {-0.8f, 0.7f, -0.8f}},
        {"blue", {-0.8f, -0.6f, 0.85f}},
        {"yellow", {0.9f, 0.85f, -0.8f}},
    };
    std::vector<std::string> shapes = {"circle", "square", "triangle"};
    std::vector<NamedColor> backgrounds = {
        {"white", {0.95f, 0.95f, 0.95f}},
        {"black", {-0.95f, -0.95f, -0.95f}},
    };
    std::size_t count = 512;
    std::size_t size = 64;
    std::size_t captions_per_image = 10;
    /// One attribute combination in this many is held out for the test split.
    std::size_t test_every = 6;
};

struct SyntheticRecord {
    std::string id, color, shape, background, caption, split;

    Json to_json() const {
        return {{"id", id}, {"color", color}, {"shape", shape}, {"background", background}, {"caption", caption},
                {"split", split}};
    }

    static SyntheticRecord from_json(const Json& j) {
        try {
            return {j.at("id").get<std::string>(),         j.at("color").get<std::string>(),
                    j.at("shape").get<std::string>(),      j.at("background").get<std::string>(),
                    j.at("caption").get<std::string>(),    j.value("split", std::string("train"))};
        } catch (const Json::exception& e) {
            throw ParseError(std::string("malformed manifest record: ") + e.what());
        }
    }
};

inline std::vector<SyntheticRecord> read_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw InvalidInput("manifest not found: " + path.string());
    std::vector<SyntheticRecord> out;
    for (auto& line : read_lines(path)) {
        try {
            out.push_back(SyntheticRecord::from_json(Json::parse(line)));
        } catch (const Json::parse_error& e) {
            throw ParseError("manifest line is not JSON: " + std::string(e.what()));
        }
    }
    return out;
}

inline std::vector<std::string> caption_templates() {
    return {
        "a {c} {s} on a {b} background",
        "the {s} is {c} and the background is {b}",
        "a {c} {s} over a {b} background",
        "there is a {c} {s} on a {b} background",
        "a {b} background with a {c} {s}",
        "a picture of a {c} {s} on {b}",
        "this {s} is {c} on a {b} background",
        "a {c} colored {s} against a {b} background",
        "an image showing a {c} {s} on a {b} backdrop",
        "one {c} {s} in front of a {b} background",
    };
}

inline std::string fill_template(std::string t, const std::string& c, const std::string& s, const std::string& b) {
    for (auto [key, val] : {std::pair<const char*, const std::string*>{"{c}", &c}, {"{s}", &s}, {"{b}", &b}}) {
        for (auto pos = t.find(key); pos != std::string::npos; pos = t.find(key)) t.replace(pos, 3, *val);
    }
    return t;
}

namespace detail {
inline bool inside_shape(const std::string& shape, double x, double y, double cx, double cy, double r) {
    const double dx = x - cx, dy = y - cy;
    if (shape == "circle") return dx * dx + dy * dy <= r * r;
    if (shape == "square") return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    if (shape == "triangle") {
        // apex up, base at cy + 0.8r
        if (dy > 0.8 * r || dy < -r) return false;
        const double half = r * (dy + r) / (1.8 * r);
        return std::abs(dx) <= half;
    }
    throw InvalidInput("unknown shape '" + shape + "'");
}
}  // namespace detail

/// Renders one shape with 2x2 supersampled edges.
inline Image render_shape(const std::string& shape, const std::array<float, 3>& fg, const std::array<float, 3>& bg,
                          std::size_t size, double cx, double cy, double r) {
    Image img(size, size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx)
                    hits += detail::inside_shape(shape, x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy, cx, cy, r);
            const float a = static_cast<float>(hits) / 4.f;
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = a * fg[c] + (1 - a) * bg[c];
        }
    return img;
}

/// Writes a corpus to `out` and returns its manifest.  Attribute combinations
/// are assigned round-robin in a seeded order; held-out combinations form the
/// test split, so the splits are disjoint in (color, shape, background).
inline std::vector<SyntheticRecord> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed,
                                                              const fs::path& out) {
    if (spec.count == 0) throw InvalidConfig("synthetic corpus count must be positive");
    if (spec.colors.empty() || spec.shapes.empty() || spec.backgrounds.empty())
        throw InvalidConfig("synthetic corpus needs at least one color, shape and background");
    if (spec.size < 8) throw InvalidConfig("synthetic image size must be at least 8");
    if (spec.captions_per_image == 0) throw InvalidConfig("captions_per_image must be positive");
    for (const auto& s : spec.shapes) detail::inside_shape(s, 0, 0, 0, 0, 1);

    Rng rng(seed);
    const std::size_t nc = spec.colors.size(), ns = spec.shapes.size(), nb = spec.backgrounds.size();
    const std::size_t combos = nc * ns * nb;
    std::vector<std::size_t> order(combos);
    for (std::size_t i = 0; i < combos; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    const auto templates = caption_templates();
    fs::create_directories(out / "images");
    fs::create_directories(out / "captions");
    fs::create_directories(out / "splits");
    std::vector<SyntheticRecord> manifest;
    std::string train_ids, test_ids, manifest_text;
    const int width = static_cast<int>(std::to_string(spec.count - 1).size());
    std::uniform_real_distribution<double> centre(0.35, 0.65), radius(0.2, 0.3), unit(0.0, 1.0);

    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::size_t pos = i % combos, k = order[pos];
        const std::size_t ci = k / (ns * nb), si = (k / nb) % ns, bi = k % nb;
        const auto& col = spec.colors[ci];
        const auto& shp = spec.shapes[si];
        const auto& bgc = spec.backgrounds[bi];
        const double sz = static_cast<double>(spec.size);
        const double cx = centre(rng) * sz, cy = centre(rng) * sz, r = radius(rng) * sz;
        Image img = render_shape(shp, col.rgb, bgc.rgb, spec.size, cx, cy, r);

        std::ostringstream id;
        id << "img" << std::setw(width) << std::setfill('0') << i;
        SyntheticRecord rec{id.str(), col.name, shp, bgc.name, fill_template(templates[0], col.name, shp, bgc.name),
                            spec.test_every > 0 && pos % spec.test_every == spec.test_every - 1 ? "test" : "train"};

        std::string caps;
        for (std::size_t j = 0; j < spec.captions_per_image; ++j) {
            std::size_t t = j % templates.size();
            if (j >= templates.size()) t = static_cast<std::size_t>(unit(rng) * templates.size()) % templates.size();
            caps += fill_template(templates[t], col.name, shp, bgc.name) + "\n";
        }
        write_png(out / "images" / (rec.id + ".png"), img);
        atomic_write(out / "captions" / (rec.id + ".txt"), caps);
        (rec.split == "test" ? test_ids : train_ids) += rec.id + "\n";
        manifest_text += rec.to_json().dump() + "\n";
        manifest.push_back(std::move(rec));
    }
    atomic_write(out / "splits" / "train.txt", train_ids);
    atomic_write(out / "splits" / "test.txt", test_ids);
    atomic_write(out / "manifest.jsonl", manifest_text);
    return manifest;
}

}  // namespace ratgan
