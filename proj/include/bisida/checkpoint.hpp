#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/netpbm.hpp"
#include "bisida/optim.hpp"

namespace bisida {

// Layout (all integers little-endian):
//   "BSD1" | u32 version | u32 count |
//   count x { u16 name_len | name | u8 rank | rank x u32 dim | prod(dims) x f32 }
inline constexpr char kCheckpointMagic[4] = {'B', 'S', 'D', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
    std::string name;
    Shape dims;
    std::vector<float> values;
};

namespace ckpt_detail {

inline void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes)
{
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

    std::uint64_t get(int bytes, const char* what)
    {
        need(static_cast<std::size_t>(bytes), what);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }

    void need(std::size_t n, const char* what) const
    {
        if (b_.size() - pos_ < n) {
            throw FormatError("checkpoint truncated at byte offset " + std::to_string(b_.size()) + " while reading " +
                              what + " (needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ")");
        }
    }

    std::size_t pos() const { return pos_; }
    const std::uint8_t* here() const { return b_.data() + pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointArray>& arrays)
{
    using ckpt_detail::put;
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put(out, kCheckpointVersion, 4);
    put(out, arrays.size(), 4);
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        const auto& a = arrays[i];
        for (std::size_t j = 0; j < i; ++j) {
            if (arrays[j].name == a.name) throw ValidationError("checkpoint: duplicate array name '" + a.name + "'");
        }
        if (a.name.size() > 0xffff) throw ValidationError("checkpoint: array name too long");
        if (a.dims.size() > 0xff) throw ValidationError("checkpoint: rank too large for '" + a.name + "'");
        if (numel(a.dims) != a.values.size()) throw ShapeError("checkpoint: payload of '" + a.name + "' does not match dims");
        put(out, a.name.size(), 2);
        out.insert(out.end(), a.name.begin(), a.name.end());
        put(out, a.dims.size(), 1);
        for (auto d : a.dims) {
            if (d > 0xffffffffu) throw ValidationError("checkpoint: dimension too large in '" + a.name + "'");
            put(out, d, 4);
        }
        for (float v : a.values) put(out, std::bit_cast<std::uint32_t>(v), 4);
    }
    return out;
}

inline std::vector<CheckpointArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint (bad magic)");
    }
    ckpt_detail::Reader r(bytes);
    r.skip(4);
    const auto version = r.get(4, "version");
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.get(4, "array count");
    std::vector<CheckpointArray> arrays;
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointArray a;
        const auto len = r.get(2, "name length");
        r.need(len, "name");
        a.name.assign(reinterpret_cast<const char*>(r.here()), len);
        r.skip(len);
        for (const auto& prev : arrays) {
            if (prev.name == a.name) throw FormatError("checkpoint: duplicate array name '" + a.name + "'");
        }
        const auto rank = r.get(1, "rank");
        for (std::uint64_t d = 0; d < rank; ++d) a.dims.push_back(r.get(4, "dims"));
        const std::size_t n = numel(a.dims);
        r.need(n * 4, "payload");
        a.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) a.values[k] = std::bit_cast<float>(static_cast<std::uint32_t>(r.get(4, "payload")));
        arrays.push_back(std::move(a));
    }
    if (r.pos() != bytes.size()) {
        throw FormatError("checkpoint: trailing bytes after offset " + std::to_string(r.pos()));
    }
    return arrays;
}

// Arrays are named "<prefix>/<param name>" so several nets share one file.
inline void append_params(std::vector<CheckpointArray>& out, const std::string& prefix, const ParamSet& params)
{
    for (const auto& p : params.entries()) {
        out.push_back({prefix + "/" + p.name, p.tensor.dims(), p.tensor.data()});
    }
}

// Fills params from the matching arrays; checks everything before writing
// anything, so a failed load leaves params untouched.
inline void load_params(const std::vector<CheckpointArray>& arrays, const std::string& prefix, ParamSet& params)
{
    std::vector<const CheckpointArray*> matches;
    for (const auto& p : params.entries()) {
        const std::string name = prefix + "/" + p.name;
        const CheckpointArray* hit = nullptr;
        for (const auto& a : arrays) {
            if (a.name == name) hit = &a;
        }
        if (!hit) throw ShapeError("checkpoint: missing array '" + name + "'");
        if (hit->dims != p.tensor.dims()) {
            throw ShapeError("checkpoint: array '" + name + "' expected dims " + to_string(p.tensor.dims()) +
                             ", found " + to_string(hit->dims));
        }
        matches.push_back(hit);
    }
    std::size_t prefixed = 0;
    for (const auto& a : arrays) prefixed += a.name.rfind(prefix + "/", 0) == 0 ? 1 : 0;
    if (prefixed != params.size()) {
        throw ShapeError("checkpoint: '" + prefix + "' holds " + std::to_string(prefixed) + " arrays, expected " +
                         std::to_string(params.size()));
    }
    std::size_t i = 0;
    for (auto& p : params.entries()) p.tensor.data() = matches[i++]->values;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointArray>& arrays)
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    netpbm::write_file(tmp, encode_checkpoint(arrays));
    std::filesystem::rename(tmp, path);
}

inline std::vector<CheckpointArray> load_checkpoint(const std::filesystem::path& path)
{
    try {
        return decode_checkpoint(netpbm::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace bisida
