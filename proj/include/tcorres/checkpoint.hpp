#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloud_io.hpp"
#include "model_config.hpp"
#include "nn.hpp"

namespace tcorres {

struct CheckpointError : std::runtime_error {
    enum class Kind {
        bad_magic,
        version_mismatch,
        digest_mismatch,
        config_mismatch,
        unknown_parameter,
        truncated,
    };

    Kind kind;

    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Mutable training state that rides along with the parameters.
struct TrainState {
    uint64_t step = 0;
    uint64_t adam_t = 0;
    std::map<std::string, uint64_t> rng_states;
    std::map<std::string, std::vector<double>> adam_m;
    std::map<std::string, std::vector<double>> adam_v;
};

namespace detail {

inline constexpr char ckpt_magic[8] = {'T', 'C', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t ckpt_version = 1;

class ByteWriter {
public:
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        buf_.append(s);
    }
    void raw(const char* p, size_t n) { buf_.append(p, n); }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& data) : data_(data) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<size_t>(i)]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<size_t>(i)]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    const char* raw(size_t n) {
        need(n);
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    size_t pos() const { return pos_; }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n)
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::string& data_;
    size_t pos_ = 0;
};

inline uint64_t fnv1a(const char* p, size_t n) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void write_config(ByteWriter& w, const ModelConfig& c) {
    w.i64(c.M);
    w.i64(c.C);
    w.i64(c.heads);
    w.i64(c.k);
    w.i64(c.L_enc);
    w.i64(c.L_dec);
    w.i64(c.N0);
    w.i64(c.N3);
    w.i64(c.N4);
    w.i64(c.oversample);
    w.i64(c.up_factor);
    w.i64(c.d_s);
    w.i64(c.corres_dim);
    w.i64(c.vote_dim);
    w.i64(c.corres_sample_n);
    w.f64(c.fold_offset_bound);
    w.u32(static_cast<uint32_t>(c.template_fusion));
    w.u32(static_cast<uint32_t>(c.corres_pooling));
    w.u32(static_cast<uint32_t>(c.value_sphere));
    w.u32(static_cast<uint32_t>(c.drop_lowest));
}

inline ModelConfig read_config(ByteReader& r) {
    ModelConfig c;
    c.M = r.i64();
    c.C = r.i64();
    c.heads = r.i64();
    c.k = r.i64();
    c.L_enc = r.i64();
    c.L_dec = r.i64();
    c.N0 = r.i64();
    c.N3 = r.i64();
    c.N4 = r.i64();
    c.oversample = r.i64();
    c.up_factor = r.i64();
    c.d_s = r.i64();
    c.corres_dim = r.i64();
    c.vote_dim = r.i64();
    c.corres_sample_n = r.i64();
    c.fold_offset_bound = r.f64();
    c.template_fusion = r.u32() != 0;
    c.corres_pooling = r.u32() != 0;
    c.value_sphere = r.u32() != 0;
    c.drop_lowest = r.u32() != 0;
    return c;
}

inline bool config_equal(const ModelConfig& a, const ModelConfig& b) {
    return a.M == b.M && a.C == b.C && a.heads == b.heads && a.k == b.k && a.L_enc == b.L_enc &&
           a.L_dec == b.L_dec && a.N0 == b.N0 && a.N3 == b.N3 && a.N4 == b.N4 &&
           a.oversample == b.oversample && a.up_factor == b.up_factor && a.d_s == b.d_s &&
           a.corres_dim == b.corres_dim && a.vote_dim == b.vote_dim &&
           a.corres_sample_n == b.corres_sample_n &&
           a.fold_offset_bound == b.fold_offset_bound &&
           a.template_fusion == b.template_fusion && a.corres_pooling == b.corres_pooling &&
           a.value_sphere == b.value_sphere && a.drop_lowest == b.drop_lowest;
}

inline void write_named_blobs(ByteWriter& w, const std::map<std::string, std::vector<double>>& m) {
    w.u32(static_cast<uint32_t>(m.size()));
    for (const auto& [name, blob] : m) {
        w.str(name);
        w.u64(blob.size());
        for (double v : blob) w.f64(v);
    }
}

inline std::map<std::string, std::vector<double>> read_named_blobs(ByteReader& r) {
    std::map<std::string, std::vector<double>> out;
    uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        uint64_t len = r.u64();
        std::vector<double> blob(len);
        for (auto& v : blob) v = r.f64();
        out.emplace(std::move(name), std::move(blob));
    }
    return out;
}

}  // namespace detail

// Layout: magic, version, config, step/adam_t, named RNG states, named
// parameter blobs (with shapes), Adam first/second moments, FNV-1a digest of
// everything before it.
template <class T>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore<T>& params,
                     const TrainState& state) {
    detail::ByteWriter w;
    w.raw(detail::ckpt_magic, sizeof(detail::ckpt_magic));
    w.u32(detail::ckpt_version);
    detail::write_config(w, cfg);
    w.u64(state.step);
    w.u64(state.adam_t);

    w.u32(static_cast<uint32_t>(state.rng_states.size()));
    for (const auto& [name, s] : state.rng_states) {
        w.str(name);
        w.u64(s);
    }

    w.u32(static_cast<uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        w.str(name);
        w.u32(static_cast<uint32_t>(p.ndim()));
        for (int d = 0; d < p.ndim(); ++d) w.i64(p.dim(d));
        for (T v : p.value()) w.f64(static_cast<double>(v));
    }

    detail::write_named_blobs(w, state.adam_m);
    detail::write_named_blobs(w, state.adam_v);

    uint64_t digest = detail::fnv1a(w.data().data(), w.data().size());
    w.u64(digest);
    detail::write_file(path, w.data());
}

// Loads parameter values into an existing store built from the same config.
template <class T>
TrainState load_checkpoint(const std::string& path, const ModelConfig& expected,
                           ParamStore<T>& params) {
    auto data = detail::read_file(path);
    if (data.size() < sizeof(detail::ckpt_magic) + 12)
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint file too small");

    uint64_t stored_digest = 0;
    for (int i = 0; i < 8; ++i)
        stored_digest |= static_cast<uint64_t>(
                             static_cast<unsigned char>(data[data.size() - 8 + static_cast<size_t>(i)]))
                         << (8 * i);
    uint64_t digest = detail::fnv1a(data.data(), data.size() - 8);
    if (digest != stored_digest)
        throw CheckpointError(CheckpointError::Kind::digest_mismatch,
                              "checkpoint digest mismatch");

    detail::ByteReader r(data);
    const char* magic = r.raw(sizeof(detail::ckpt_magic));
    if (std::string(magic, sizeof(detail::ckpt_magic)) !=
        std::string(detail::ckpt_magic, sizeof(detail::ckpt_magic)))
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint file");
    uint32_t version = r.u32();
    if (version != detail::ckpt_version)
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "checkpoint version " + std::to_string(version) + ", expected " +
                                  std::to_string(detail::ckpt_version));

    ModelConfig stored = detail::read_config(r);
    if (!detail::config_equal(stored, expected))
        throw CheckpointError(CheckpointError::Kind::config_mismatch,
                              "checkpoint was written with a different model configuration");

    TrainState state;
    state.step = r.u64();
    state.adam_t = r.u64();

    uint32_t n_rng = r.u32();
    for (uint32_t i = 0; i < n_rng; ++i) {
        std::string name = r.str();
        state.rng_states[name] = r.u64();
    }

    uint32_t n_params = r.u32();
    if (n_params != params.size())
        throw CheckpointError(CheckpointError::Kind::unknown_parameter,
                              "checkpoint has " + std::to_string(n_params) +
                                  " parameters, model has " + std::to_string(params.size()));
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        if (!params.contains(name))
            throw CheckpointError(CheckpointError::Kind::unknown_parameter,
                                  "checkpoint parameter not in model: " + name);
        auto p = params.at(name);
        uint32_t nd = r.u32();
        Shape shape(nd);
        for (auto& d : shape) d = r.i64();
        if (shape != p.shape())
            throw CheckpointError(CheckpointError::Kind::config_mismatch,
                                  "shape mismatch for parameter " + name);
        auto& dst = p.raw_value();
        for (auto& v : dst) v = static_cast<T>(r.f64());
    }

    state.adam_m = detail::read_named_blobs(r);
    state.adam_v = detail::read_named_blobs(r);
    for (const auto& [name, blob] : state.adam_m)
        if (!params.contains(name))
            throw CheckpointError(CheckpointError::Kind::unknown_parameter,
                                  "optimizer moment for unknown parameter: " + name);
    return state;
}

// Reads just the architecture block, so a model can be rebuilt from the
// file alone. Same integrity checks as a full load.
inline ModelConfig checkpoint_config(const std::string& path) {
    auto data = detail::read_file(path);
    if (data.size() < sizeof(detail::ckpt_magic) + 12)
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint file too small");

    uint64_t stored_digest = 0;
    for (int i = 0; i < 8; ++i)
        stored_digest |= static_cast<uint64_t>(
                             static_cast<unsigned char>(data[data.size() - 8 + static_cast<size_t>(i)]))
                         << (8 * i);
    if (detail::fnv1a(data.data(), data.size() - 8) != stored_digest)
        throw CheckpointError(CheckpointError::Kind::digest_mismatch,
                              "checkpoint digest mismatch");

    detail::ByteReader r(data);
    const char* magic = r.raw(sizeof(detail::ckpt_magic));
    if (std::string(magic, sizeof(detail::ckpt_magic)) !=
        std::string(detail::ckpt_magic, sizeof(detail::ckpt_magic)))
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint file");
    uint32_t version = r.u32();
    if (version != detail::ckpt_version)
        throw CheckpointError(CheckpointError::Kind::version_mismatch,
                              "checkpoint version " + std::to_string(version) + ", expected " +
                                  std::to_string(detail::ckpt_version));
    return detail::read_config(r);
}

}  // namespace tcorres
