// Self-describing tensor container: a directory holding `manifest.json` plus
// one raw little-endian row-major binary file per tensor. The format is
// deliberately minimal so that containers are bit-exact and diff-able.
#pragma once

#include "sparsegate/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sparsegate {

enum class Dtype { F32, F64 };

inline std::size_t dtype_size(Dtype t) { return t == Dtype::F32 ? 4 : 8; }

inline std::string to_string(Dtype t) { return t == Dtype::F32 ? "f32" : "f64"; }

inline Dtype parse_dtype(const std::string& s) {
    if (s == "f32") {
        return Dtype::F32;
    }
    if (s == "f64") {
        return Dtype::F64;
    }
    throw IoError("manifest: unknown dtype \"" + s + "\"");
}

struct TensorEntry {
    std::string name;
    Dtype dtype = Dtype::F64;
    std::vector<Index> shape;
    std::string file;

    Index elements() const {
        Index n = 1;
        for (Index s : shape) {
            n *= s;
        }
        return n;
    }
};

struct TensorManifest {
    std::filesystem::path dir;
    std::vector<TensorEntry> entries;

    const TensorEntry* find(const std::string& name) const {
        for (const auto& e : entries) {
            if (e.name == name) {
                return &e;
            }
        }
        return nullptr;
    }

    const TensorEntry& at(const std::string& name) const {
        const TensorEntry* e = find(name);
        if (!e) {
            throw IoError("container " + dir.string() + ": missing entry \"" + name + "\"");
        }
        return *e;
    }
};

/// Parses and validates `manifest.json` inside `dir`. Declared sizes are
/// checked against the binaries on disk; payloads are not read.
inline TensorManifest load_manifest(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + manifest_path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    TensorManifest manifest;
    manifest.dir = dir;
    try {
        for (const auto& je : doc.at("entries")) {
            TensorEntry entry;
            entry.name = je.at("name").get<std::string>();
            entry.dtype = parse_dtype(je.at("dtype").get<std::string>());
            for (const auto& s : je.at("shape")) {
                const auto v = s.get<std::int64_t>();
                if (v < 0) {
                    throw IoError("manifest: negative extent in shape of \"" + entry.name + "\"");
                }
                entry.shape.push_back(static_cast<Index>(v));
            }
            entry.file = je.at("file").get<std::string>();
            if (je.at("layout").get<std::string>() != "row-major") {
                throw IoError("manifest: entry \"" + entry.name + "\" has unsupported layout");
            }
            if (je.at("endianness").get<std::string>() != "little") {
                throw IoError("manifest: entry \"" + entry.name + "\" has unsupported endianness");
            }
            manifest.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        for (std::size_t j = i + 1; j < manifest.entries.size(); ++j) {
            if (manifest.entries[i].name == manifest.entries[j].name) {
                throw IoError("manifest: duplicate entry name \"" + manifest.entries[i].name +
                              "\"");
            }
        }
    }

    for (const auto& entry : manifest.entries) {
        const auto file = dir / entry.file;
        std::error_code ec;
        const auto actual = std::filesystem::file_size(file, ec);
        if (ec) {
            throw IoError("container: cannot stat " + file.string());
        }
        const auto expected =
            static_cast<std::uintmax_t>(entry.elements()) * dtype_size(entry.dtype);
        if (actual != expected) {
            throw IoError("container: entry \"" + entry.name + "\" declares " +
                          std::to_string(expected) + " bytes but " + file.string() + " has " +
                          std::to_string(actual));
        }
    }
    return manifest;
}

namespace detail {

inline std::vector<double> read_payload(const TensorManifest& manifest, const TensorEntry& entry) {
    const auto file = manifest.dir / entry.file;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + file.string());
    }
    const std::size_t n = static_cast<std::size_t>(entry.elements());
    std::vector<double> out(n);
    if (entry.dtype == Dtype::F64) {
        in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * 8));
    } else {
        std::vector<float> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = static_cast<double>(raw[i]);
        }
    }
    if (!in) {
        throw IoError("short read on " + file.string());
    }
    return out;
}

inline void write_payload(const std::filesystem::path& file, const double* data, std::size_t n,
                          Dtype dtype) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + file.string());
    }
    if (dtype == Dtype::F64) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
    } else {
        std::vector<float> raw(n);
        for (std::size_t i = 0; i < n; ++i) {
            raw[i] = static_cast<float>(data[i]);
        }
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(n * 4));
    }
    if (!out) {
        throw IoError("short write on " + file.string());
    }
}

}  // namespace detail

inline Mat load_matrix(const TensorManifest& manifest, const std::string& name) {
    const TensorEntry& entry = manifest.at(name);
    if (entry.shape.size() != 2) {
        throw IoError("entry \"" + name + "\": expected rank-2 tensor, got rank " +
                      std::to_string(entry.shape.size()));
    }
    const auto data = detail::read_payload(manifest, entry);
    Mat m(entry.shape[0], entry.shape[1]);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

inline Vec load_vector(const TensorManifest& manifest, const std::string& name) {
    const TensorEntry& entry = manifest.at(name);
    if (entry.shape.size() != 1) {
        throw IoError("entry \"" + name + "\": expected rank-1 tensor, got rank " +
                      std::to_string(entry.shape.size()));
    }
    const auto data = detail::read_payload(manifest, entry);
    Vec v(entry.shape[0]);
    std::copy(data.begin(), data.end(), v.data());
    return v;
}

/// Accumulates tensors and writes the container in one shot. Files are named
/// `<entry>.bin`; `finish()` writes the manifest last so a complete
/// `manifest.json` implies complete payloads.
class ContainerWriter {
  public:
    explicit ContainerWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void add(const std::string& name, const double* data, std::vector<Index> shape, Dtype dtype) {
        TensorEntry entry;
        entry.name = name;
        entry.dtype = dtype;
        entry.shape = std::move(shape);
        entry.file = name + ".bin";
        detail::write_payload(dir_ / entry.file, data,
                              static_cast<std::size_t>(entry.elements()), dtype);
        entries_.push_back(std::move(entry));
    }

    void add_matrix(const std::string& name, const Mat& m, Dtype dtype = Dtype::F64) {
        add(name, m.data(), {m.rows(), m.cols()}, dtype);
    }

    void add_vector(const std::string& name, const Vec& v, Dtype dtype = Dtype::F64) {
        add(name, v.data(), {v.size()}, dtype);
    }

    void finish() {
        nlohmann::json doc;
        doc["entries"] = nlohmann::json::array();
        for (const auto& e : entries_) {
            nlohmann::json je;
            je["name"] = e.name;
            je["dtype"] = to_string(e.dtype);
            je["shape"] = e.shape;
            je["file"] = e.file;
            je["layout"] = "row-major";
            je["endianness"] = "little";
            doc["entries"].push_back(je);
        }
        const auto path = dir_ / "manifest.json";
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot create " + path.string());
        }
        out << doc.dump(2) << "\n";
    }

  private:
    std::filesystem::path dir_;
    std::vector<TensorEntry> entries_;
};

// ---------------------------------------------------------------------------
// Typed containers.
// ---------------------------------------------------------------------------

/// Expects entries "gate" (D x d), "up" (D x d), "down" (d x D).
inline FfnWeights load_ffn_weights(const TensorManifest& manifest, Activation activation) {
    FfnWeights w;
    w.gate = load_matrix(manifest, "gate");
    w.up = load_matrix(manifest, "up");
    w.down = load_matrix(manifest, "down");
    w.activation = activation;
    validate(w);
    return w;
}

inline void save_ffn_weights(const FfnWeights& w, const std::filesystem::path& dir,
                             Dtype dtype = Dtype::F64) {
    validate(w);
    ContainerWriter writer(dir);
    writer.add_matrix("gate", w.gate, dtype);
    writer.add_matrix("up", w.up, dtype);
    writer.add_matrix("down", w.down, dtype);
    writer.finish();
}

/// Expects entry `name` of shape d x N (tokens as columns). A zero-token
/// batch is representable; operations that need data reject it themselves.
inline ActivationBatch load_activation_batch(const TensorManifest& manifest,
                                             const std::string& name = "x") {
    ActivationBatch batch;
    batch.x_cols = load_matrix(manifest, name);
    if (!all_finite(batch.x_cols)) {
        throw IoError("activation batch \"" + name + "\": non-finite entries");
    }
    return batch;
}

inline void save_activation_batch(const ActivationBatch& batch, const std::filesystem::path& dir,
                                  Dtype dtype = Dtype::F64, const std::string& name = "x") {
    ContainerWriter writer(dir);
    writer.add_matrix(name, batch.x_cols, dtype);
    writer.finish();
}

/// Predictors persist as entries "A" (D x r), "B" (r x d), "bias" (D),
/// always f64. load(save(p)) is byte-exact.
inline void save_predictor(const Predictor& p, const std::filesystem::path& dir) {
    validate(p);
    ContainerWriter writer(dir);
    writer.add_matrix("A", p.A, Dtype::F64);
    writer.add_matrix("B", p.B, Dtype::F64);
    writer.add_vector("bias", p.bias, Dtype::F64);
    writer.finish();
}

inline Predictor load_predictor(const std::filesystem::path& dir) {
    const TensorManifest manifest = load_manifest(dir);
    Predictor p;
    p.A = load_matrix(manifest, "A");
    p.B = load_matrix(manifest, "B");
    p.bias = load_vector(manifest, "bias");
    p.rank = p.A.cols();
    validate(p);
    return p;
}

}  // namespace sparsegate
