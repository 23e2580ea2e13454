#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "point_cloud.hpp"

namespace tcorres {

struct IoError : std::runtime_error {
    enum class Kind {
        open_failed,
        malformed_header,
        malformed_record,
        non_finite_value,
        truncated_payload,
    };

    Kind kind;
    size_t byte_offset;

    IoError(Kind k, size_t offset, const std::string& msg)
        : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
          kind(k),
          byte_offset(offset) {}
};

enum class CloudFormat { xyz_ascii, ply_binary_le };

inline CloudFormat cloud_format_from_name(const std::string& s) {
    if (s == "xyz") return CloudFormat::xyz_ascii;
    if (s == "ply") return CloudFormat::ply_binary_le;
    throw std::invalid_argument("unknown cloud format: " + s);
}

namespace detail {

template <class T>
void append_number(std::string& out, T v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

inline void put_f32_le(std::string& out, float f) {
    uint32_t bits = std::bit_cast<uint32_t>(f);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
    uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                    (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open_failed, 0, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::open_failed, 0, "cannot open " + path + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError(IoError::Kind::open_failed, 0, "write failed for " + path);
}

template <class T>
PointCloud<T> parse_xyz(const std::string& text) {
    PointCloud<T> pc;
    size_t pos = 0;
    const size_t n = text.size();
    while (pos < n) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = n;
        size_t cur = pos;
        // skip blank lines
        size_t probe = cur;
        while (probe < eol && (text[probe] == ' ' || text[probe] == '\t' || text[probe] == '\r'))
            ++probe;
        if (probe == eol) {
            pos = eol + 1;
            continue;
        }
        T coord[3];
        for (int c = 0; c < 3; ++c) {
            while (cur < eol && (text[cur] == ' ' || text[cur] == '\t')) ++cur;
            if (cur == eol)
                throw IoError(IoError::Kind::malformed_record, cur,
                              "expected 3 coordinates per line");
            auto res = std::from_chars(text.data() + cur, text.data() + eol, coord[c]);
            if (res.ec != std::errc{})
                throw IoError(IoError::Kind::malformed_record, cur, "unparsable coordinate");
            if (!std::isfinite(coord[c]))
                throw IoError(IoError::Kind::non_finite_value, cur, "non-finite coordinate");
            cur = static_cast<size_t>(res.ptr - text.data());
        }
        while (cur < eol && (text[cur] == ' ' || text[cur] == '\t' || text[cur] == '\r')) ++cur;
        if (cur != eol)
            throw IoError(IoError::Kind::malformed_record, cur, "trailing junk after coordinates");
        pc.pts.push_back({coord[0], coord[1], coord[2]});
        pos = eol + 1;
    }
    return pc;
}

template <class T>
PointCloud<T> parse_ply(const std::string& data) {
    auto header_line = [&](size_t& pos) {
        size_t eol = data.find('\n', pos);
        if (eol == std::string::npos)
            throw IoError(IoError::Kind::malformed_header, pos, "header line without newline");
        std::string line = data.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = eol + 1;
        return line;
    };

    size_t pos = 0;
    if (header_line(pos) != "ply")
        throw IoError(IoError::Kind::malformed_header, 0, "missing ply magic");
    size_t line_start = pos;
    if (header_line(pos) != "format binary_little_endian 1.0")
        throw IoError(IoError::Kind::malformed_header, line_start,
                      "format must be binary_little_endian 1.0");

    int64_t vertex_count = -1;
    int property_index = 0;
    const char* want_props[3] = {"property float x", "property float y", "property float z"};
    for (;;) {
        line_start = pos;
        if (pos >= data.size())
            throw IoError(IoError::Kind::malformed_header, pos, "header missing end_header");
        std::string line = header_line(pos);
        if (line == "end_header") break;
        if (line.rfind("comment", 0) == 0) continue;
        if (line.rfind("element vertex ", 0) == 0) {
            if (vertex_count >= 0)
                throw IoError(IoError::Kind::malformed_header, line_start,
                              "duplicate vertex element");
            auto num = line.substr(15);
            auto res = std::from_chars(num.data(), num.data() + num.size(), vertex_count);
            if (res.ec != std::errc{} || vertex_count < 0)
                throw IoError(IoError::Kind::malformed_header, line_start, "bad vertex count");
            continue;
        }
        if (line.rfind("element ", 0) == 0)
            throw IoError(IoError::Kind::malformed_header, line_start,
                          "only vertex elements are supported");
        if (line.rfind("property ", 0) == 0) {
            if (vertex_count < 0 || property_index >= 3 || line != want_props[property_index])
                throw IoError(IoError::Kind::malformed_header, line_start,
                              "expected float x, y, z vertex properties");
            ++property_index;
            continue;
        }
        throw IoError(IoError::Kind::malformed_header, line_start, "unrecognized header line");
    }
    if (vertex_count < 0)
        throw IoError(IoError::Kind::malformed_header, pos, "header missing element vertex");
    if (property_index != 3)
        throw IoError(IoError::Kind::malformed_header, pos, "header missing xyz properties");

    const size_t need = static_cast<size_t>(vertex_count) * 12;
    if (data.size() - pos < need)
        throw IoError(IoError::Kind::truncated_payload, data.size(),
                      "payload ends before vertex " +
                          std::to_string((data.size() - pos) / 12) + " of " +
                          std::to_string(vertex_count));

    PointCloud<T> pc;
    pc.pts.reserve(static_cast<size_t>(vertex_count));
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    for (int64_t i = 0; i < vertex_count; ++i) {
        const size_t off = pos + static_cast<size_t>(i) * 12;
        float x = get_f32_le(bytes + off);
        float y = get_f32_le(bytes + off + 4);
        float z = get_f32_le(bytes + off + 8);
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            throw IoError(IoError::Kind::non_finite_value, off, "non-finite vertex");
        pc.pts.push_back({static_cast<T>(x), static_cast<T>(y), static_cast<T>(z)});
    }
    return pc;
}

}  // namespace detail

// xyz_ascii: one "x y z" line per point, '.' decimal, LF line ends, shortest
// round-trip formatting. ply_binary_le: standard PLY header with x, y, z as
// little-endian 32-bit floats and no other elements.
template <class T>
void write_cloud(const PointCloud<T>& pc, const std::string& path, CloudFormat format) {
    std::string out;
    if (format == CloudFormat::xyz_ascii) {
        for (const auto& p : pc.pts) {
            detail::append_number(out, p.x);
            out.push_back(' ');
            detail::append_number(out, p.y);
            out.push_back(' ');
            detail::append_number(out, p.z);
            out.push_back('\n');
        }
    } else {
        out += "ply\n";
        out += "format binary_little_endian 1.0\n";
        out += "element vertex " + std::to_string(pc.count()) + "\n";
        out += "property float x\nproperty float y\nproperty float z\n";
        out += "end_header\n";
        for (const auto& p : pc.pts) {
            detail::put_f32_le(out, static_cast<float>(p.x));
            detail::put_f32_le(out, static_cast<float>(p.y));
            detail::put_f32_le(out, static_cast<float>(p.z));
        }
    }
    detail::write_file(path, out);
}

template <class T>
PointCloud<T> read_cloud(const std::string& path, CloudFormat format) {
    auto data = detail::read_file(path);
    return format == CloudFormat::xyz_ascii ? detail::parse_xyz<T>(data)
                                            : detail::parse_ply<T>(data);
}

struct PairDescriptor {
    std::string id;
    std::string category;
    std::string partial_path;
    std::string complete_path;
};

// Manifest: one record per line, four whitespace-separated fields
// (id category partial-path complete-path). Blank lines are skipped.
inline std::vector<PairDescriptor> load_manifest(const std::string& path) {
    auto text = detail::read_file(path);
    std::vector<PairDescriptor> out;
    std::vector<std::string> seen_ids;
    std::istringstream lines(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream fields(line);
        PairDescriptor d;
        if (!(fields >> d.id)) continue;  // blank line
        if (!(fields >> d.category >> d.partial_path >> d.complete_path))
            throw IoError(IoError::Kind::malformed_record, lineno,
                          "manifest line " + std::to_string(lineno) + " needs 4 fields");
        std::string extra;
        if (fields >> extra)
            throw IoError(IoError::Kind::malformed_record, lineno,
                          "manifest line " + std::to_string(lineno) + " has extra fields");
        for (const auto& id : seen_ids)
            if (id == d.id)
                throw IoError(IoError::Kind::malformed_record, lineno,
                              "duplicate manifest id: " + d.id);
        seen_ids.push_back(d.id);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace tcorres
