#pragma once

// Versioned binary container used for every checkpoint kind:
//
//   "RATGANCK" | u32 format version | u64 header length | JSON header | blobs
//
// The header records the container kind, free-form metadata and a manifest
// of tensors (name, dtype, shape, offset, byte count) plus a checksum of the
// blob region.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ratgan/module.hpp"

namespace ratgan {

using Json = nlohmann::json;

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[8] = {'R', 'A', 'T', 'G', 'A', 'N', 'C', 'K'};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
    return h;
}

/// Writes through a temporary file and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

class Container {
public:
    Container() = default;
    explicit Container(std::string kind) : kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }
    Json& meta() { return meta_; }
    const Json& meta() const { return meta_; }

    template <class T>
    void put(const std::string& name, const Tensor<T>& t) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "only real tensors are stored");
        Entry e;
        e.dtype = std::is_same_v<T, float> ? "f32" : "f64";
        e.shape = t.shape();
        e.bytes.resize(t.size() * sizeof(T));
        if (!e.bytes.empty()) std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
        entries_[name] = std::move(e);
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    /// Stored tensor converted to T; bit-identical when the dtype matches.
    template <class T>
    Tensor<T> get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ParseError("container '" + kind_ + "' has no tensor '" + name + "'");
        const Entry& e = it->second;
        Tensor<T> out(e.shape);
        if (e.dtype == "f32") convert<float, T>(e, out);
        else if (e.dtype == "f64") convert<double, T>(e, out);
        else throw ParseError("unknown dtype " + e.dtype);
        return out;
    }

    template <class T>
    void put_parameters(const ParamRefs<T>& ps) {
        for (auto* p : ps) put(p->name(), p->value());
    }

    template <class T>
    void get_parameters(const ParamRefs<T>& ps) const {
        for (auto* p : ps) {
            Tensor<T> t = get<T>(p->name());
            if (t.shape() != p->value().shape())
                throw ParseError("parameter '" + p->name() + "' has shape " + shape_string(t.shape()) + ", model expects " +
                                 shape_string(p->value().shape()));
            p->value() = std::move(t);
        }
    }

    std::string serialize() const {
        Json manifest = Json::array();
        std::string blob;
        for (const auto& [name, e] : entries_) {
            manifest.push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", blob.size()},
                                {"nbytes", e.bytes.size()}});
            blob.append(e.bytes.data(), e.bytes.size());
        }
        Json header = {{"kind", kind_}, {"meta", meta_}, {"tensors", manifest}, {"blob_bytes", blob.size()},
                       {"checksum", fnv1a(blob.data(), blob.size())}};
        const std::string h = header.dump();
        std::string out(kContainerMagic, 8);
        const std::uint32_t ver = kContainerVersion;
        const std::uint64_t hl = h.size();
        out.append(reinterpret_cast<const char*>(&ver), sizeof ver);
        out.append(reinterpret_cast<const char*>(&hl), sizeof hl);
        out += h;
        out += blob;
        return out;
    }

    void save(const std::filesystem::path& path) const { atomic_write(path, serialize()); }

    static Container parse(const std::string& bytes, const std::string& expected_kind = {}) {
        const std::size_t fixed = 8 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
        if (bytes.size() < fixed || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
            throw ParseError("not a ratgan container (bad magic)");
        std::uint32_t ver;
        std::uint64_t hl;
        std::memcpy(&ver, bytes.data() + 8, sizeof ver);
        std::memcpy(&hl, bytes.data() + 8 + sizeof ver, sizeof hl);
        if (ver != kContainerVersion)
            throw IncompatibleVersion("container format version " + std::to_string(ver) + " is not supported (expected " +
                                      std::to_string(kContainerVersion) + ")");
        if (hl > bytes.size() - fixed) throw ParseError("container header truncated");
        Json header;
        try {
            header = Json::parse(bytes.substr(fixed, hl));
        } catch (const Json::exception& e) {
            throw ParseError(std::string("container header is not valid JSON: ") + e.what());
        }
        Container c;
        try {
            c.kind_ = header.at("kind").get<std::string>();
            c.meta_ = header.at("meta");
            const std::size_t blob_start = fixed + hl;
            const auto blob_bytes = header.at("blob_bytes").get<std::uint64_t>();
            if (bytes.size() - blob_start != blob_bytes) throw ParseError("container blob region has wrong length");
            if (fnv1a(bytes.data() + blob_start, blob_bytes) != header.at("checksum").get<std::uint64_t>())
                throw ParseError("container checksum mismatch");
            for (const auto& t : header.at("tensors")) {
                Entry e;
                e.dtype = t.at("dtype").get<std::string>();
                e.shape = t.at("shape").get<Shape>();
                const auto off = t.at("offset").get<std::uint64_t>(), nb = t.at("nbytes").get<std::uint64_t>();
                const std::size_t width = e.dtype == "f32" ? 4 : 8;
                if (off + nb > blob_bytes || nb != shape_numel(e.shape) * width)
                    throw ParseError("tensor '" + t.at("name").get<std::string>() + "' has inconsistent extent");
                e.bytes.assign(bytes.data() + blob_start + off, bytes.data() + blob_start + off + nb);
                c.entries_[t.at("name").get<std::string>()] = std::move(e);
            }
        } catch (const Json::exception& e) {
            throw ParseError(std::string("container header malformed: ") + e.what());
        }
        if (!expected_kind.empty() && c.kind_ != expected_kind)
            throw ParseError("expected a '" + expected_kind + "' container, found '" + c.kind_ + "'");
        return c;
    }

    static Container load(const std::filesystem::path& path, const std::string& expected_kind = {}) {
        if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
        return parse(read_file(path), expected_kind);
    }

private:
    struct Entry {
        std::string dtype;
        Shape shape;
        std::vector<char> bytes;
    };

    template <class Stored, class T>
    static void convert(const Entry& e, Tensor<T>& out) {
        std::vector<Stored> tmp(out.size());
        if (e.bytes.size() != tmp.size() * sizeof(Stored)) throw ParseError("tensor byte count mismatch");
        if (!tmp.empty()) std::memcpy(tmp.data(), e.bytes.data(), e.bytes.size());
        for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = static_cast<T>(tmp[i]);
    }

    std::string kind_;
    Json meta_ = Json::object();
    std::map<std::string, Entry> entries_;
};

/// Text form of a generator's full state, for checkpoints.
inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng restore_rng(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw ParseError("malformed random generator state");
    return rng;
}

}  // namespace ratgan
