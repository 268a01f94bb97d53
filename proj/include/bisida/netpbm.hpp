#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/image.hpp"

namespace bisida {

namespace netpbm {

using Bytes = std::vector<std::uint8_t>;

struct Header {
    char kind = 0;  // '5' or '6'
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t maxval = 0;
    std::size_t payload_offset = 0;
};

inline Header parse_header(const Bytes& bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError("netpbm: bad magic bytes (expected P5 or P6)");
    }
    Header hdr;
    hdr.kind = static_cast<char>(bytes[1]);
    std::size_t pos = 2;
    auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
    auto read_number = [&](const char* what) {
        for (;;) {
            if (pos >= bytes.size()) throw FormatError(std::string("netpbm: truncated header reading ") + what);
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (is_space(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (bytes[pos] < '0' || bytes[pos] > '9') {
            throw FormatError(std::string("netpbm: expected ") + what + " at byte offset " + std::to_string(pos));
        }
        std::size_t v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > (1u << 24)) throw FormatError(std::string("netpbm: ") + what + " too large");
            ++pos;
        }
        return v;
    };
    hdr.width = read_number("width");
    hdr.height = read_number("height");
    hdr.maxval = read_number("maxval");
    if (hdr.width == 0 || hdr.height == 0) throw FormatError("netpbm: zero image dimension");
    if (hdr.maxval == 0 || hdr.maxval > 65535) throw FormatError("netpbm: maxval out of range");
    if (pos >= bytes.size() || !is_space(bytes[pos])) {
        throw FormatError("netpbm: missing whitespace after maxval at byte offset " + std::to_string(pos));
    }
    hdr.payload_offset = pos + 1;
    return hdr;
}

inline void require_payload(const Header& hdr, const Bytes& bytes, std::size_t channels)
{
    const std::size_t sample = hdr.maxval > 255 ? 2 : 1;
    const std::size_t need = hdr.payload_offset + hdr.width * hdr.height * channels * sample;
    if (bytes.size() < need) {
        throw FormatError("netpbm: truncated payload, data ends at byte offset " + std::to_string(bytes.size()) +
                          ", expected " + std::to_string(need) + " bytes");
    }
}

inline std::uint8_t quantize(float v)
{
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(255.0f * c));
}

inline Bytes encode_ppm(const Image& img)
{
    const std::string head = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    Bytes out(head.begin(), head.end());
    const std::size_t plane = img.height * img.width;
    out.reserve(out.size() + 3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(img.pixels[c * plane + i]));
    }
    return out;
}

inline Image decode_ppm(const Bytes& bytes)
{
    const Header hdr = parse_header(bytes);
    if (hdr.kind != '6') throw FormatError("netpbm: expected P6 image, found P5");
    require_payload(hdr, bytes, 3);
    Image img(hdr.height, hdr.width);
    const std::size_t plane = hdr.height * hdr.width;
    const double scale = 1.0 / static_cast<double>(hdr.maxval);
    std::size_t pos = hdr.payload_offset;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            std::size_t v = bytes[pos++];
            if (hdr.maxval > 255) v = (v << 8) | bytes[pos++];
            img.pixels[c * plane + i] = static_cast<float>(static_cast<double>(v) * scale);
        }
    }
    return img;
}

inline Bytes encode_pgm(const LabelMap& lab)
{
    const std::string head = "P5\n" + std::to_string(lab.width) + " " + std::to_string(lab.height) + "\n255\n";
    Bytes out(head.begin(), head.end());
    out.insert(out.end(), lab.labels.begin(), lab.labels.end());
    return out;
}

// Raw class indices; any value >= num_classes is rejected with its offset.
inline LabelMap decode_pgm(const Bytes& bytes, std::size_t num_classes)
{
    const Header hdr = parse_header(bytes);
    if (hdr.kind != '5') throw FormatError("netpbm: expected P5 label map, found P6");
    if (hdr.maxval > 255) throw FormatError("netpbm: label maps must use one byte per pixel");
    require_payload(hdr, bytes, 1);
    LabelMap lab(hdr.height, hdr.width);
    for (std::size_t i = 0; i < lab.labels.size(); ++i) {
        const std::size_t offset = hdr.payload_offset + i;
        const std::uint8_t v = bytes[offset];
        if (v >= num_classes) {
            throw FormatError("netpbm: label value " + std::to_string(v) + " >= " + std::to_string(num_classes) +
                              " at byte offset " + std::to_string(offset));
        }
        lab.labels[i] = v;
    }
    return lab;
}

inline Bytes read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to '" + path.string() + "'");
}

}  // namespace netpbm

inline void write_ppm(const std::filesystem::path& path, const Image& img)
{
    netpbm::write_file(path, netpbm::encode_ppm(img));
}

inline Image read_ppm(const std::filesystem::path& path)
{
    try {
        return netpbm::decode_ppm(netpbm::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_pgm(const std::filesystem::path& path, const LabelMap& lab)
{
    netpbm::write_file(path, netpbm::encode_pgm(lab));
}

inline LabelMap read_pgm(const std::filesystem::path& path, std::size_t num_classes)
{
    try {
        return netpbm::decode_pgm(netpbm::read_file(path), num_classes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace bisida
