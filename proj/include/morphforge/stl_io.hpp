// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/mesh.hpp"

namespace morphforge {

enum class StlFormat { ascii, binary };

namespace detail {

inline std::vector<char> read_file_bytes(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Collects triangle corners and merges bitwise-equal positions.
class VertexWelder {
public:
    std::uint32_t add(const Vec3 &p) {
        auto [it, inserted] = index_.try_emplace({p.x, p.y, p.z}, static_cast<std::uint32_t>(mesh.vertices.size()));
        if (inserted) mesh.vertices.push_back(p);
        return it->second;
    }

    TriangleMesh mesh;

private:
    std::map<std::array<double, 3>, std::uint32_t> index_;
};

template <class T>
T load_le(const char *p) {
    T v;
    std::memcpy(&v, p, sizeof(T)); // host is little-endian (x86/ARM)
    return v;
}

class AsciiTokenizer {
public:
    explicit AsciiTokenizer(std::string_view text) : text_(text) {}

    /// Returns the next whitespace-delimited token, or empty at end of input.
    std::string_view next() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        start_ = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        return text_.substr(start_, pos_ - start_);
    }

    std::string_view rest_of_line() {
        start_ = pos_;
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
        return text_.substr(start_, pos_ - start_);
    }

    void expect(std::string_view keyword) {
        const auto tok = next();
        if (tok != keyword)
            throw ParseError("expected '" + std::string(keyword) + "', found '" + std::string(tok) + "'", start_);
    }

    double number() {
        const auto tok = next();
        double v = 0.0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (tok.empty() || res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
            throw ParseError("expected a number, found '" + std::string(tok) + "'", start_);
        return v;
    }

    std::size_t token_offset() const noexcept { return start_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t start_ = 0;
};

inline TriangleMesh parse_ascii_stl(std::string_view text) {
    AsciiTokenizer tok(text);
    tok.expect("solid");
    tok.rest_of_line();
    VertexWelder welder;
    for (;;) {
        const auto kw = tok.next();
        if (kw == "endsolid") break;
        if (kw.empty()) throw ParseError("unexpected end of file, missing 'endsolid'", tok.token_offset());
        if (kw != "facet") throw ParseError("expected 'facet', found '" + std::string(kw) + "'", tok.token_offset());
        tok.expect("normal");
        tok.number();
        tok.number();
        tok.number();
        tok.expect("outer");
        tok.expect("loop");
        std::array<std::uint32_t, 3> tri{};
        for (auto &idx : tri) {
            tok.expect("vertex");
            const double x = tok.number();
            const double y = tok.number();
            const double z = tok.number();
            idx = welder.add({x, y, z});
        }
        tok.expect("endloop");
        tok.expect("endfacet");
        welder.mesh.triangles.push_back(tri);
    }
    return std::move(welder.mesh);
}

inline TriangleMesh parse_binary_stl(const std::vector<char> &bytes) {
    if (bytes.size() < 84) throw ParseError("binary STL shorter than its 84-byte header", bytes.size());
    const auto count = load_le<std::uint32_t>(bytes.data() + 80);
    const std::size_t expected = 84 + static_cast<std::size_t>(count) * 50;
    if (bytes.size() < expected)
        throw ParseError("binary STL declares " + std::to_string(count) + " facets but is truncated", bytes.size());
    VertexWelder welder;
    welder.mesh.triangles.reserve(count);
    for (std::uint32_t f = 0; f < count; ++f) {
        const char *rec = bytes.data() + 84 + static_cast<std::size_t>(f) * 50;
        std::array<std::uint32_t, 3> tri{};
        for (int c = 0; c < 3; ++c) {
            const char *p = rec + 12 + c * 12;
            tri[static_cast<std::size_t>(c)] = welder.add({load_le<float>(p), load_le<float>(p + 4), load_le<float>(p + 8)});
        }
        welder.mesh.triangles.push_back(tri);
    }
    return std::move(welder.mesh);
}

inline Vec3 facet_normal(const TriangleMesh &m, const std::array<std::uint32_t, 3> &t) {
    const Vec3 n = cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]);
    const double len = norm(n);
    return len > 0.0 ? n / len : Vec3{};
}

} // namespace detail

/// Reads ASCII or little-endian binary STL. Vertices are welded on exact coordinate match.
inline TriangleMesh read_stl(const std::filesystem::path &path) {
    const auto bytes = detail::read_file_bytes(path);
    bool binary = true;
    if (bytes.size() >= 84) {
        const auto count = detail::load_le<std::uint32_t>(bytes.data() + 80);
        binary = bytes.size() == 84 + static_cast<std::size_t>(count) * 50;
    }
    const std::string_view head(bytes.data(), std::min<std::size_t>(bytes.size(), 5));
    if (!binary && head != "solid") binary = true;
    if (bytes.size() < 84 && head == "solid") binary = false;

    TriangleMesh mesh = binary ? detail::parse_binary_stl(bytes)
                               : detail::parse_ascii_stl(std::string_view(bytes.data(), bytes.size()));
    if (mesh.empty()) throw EmptyMeshError("STL '" + path.string() + "' contains no facets");
    mesh.validate();
    return mesh;
}

inline void write_stl(const TriangleMesh &mesh, const std::filesystem::path &path, StlFormat format) {
    if (mesh.empty()) throw EmptyMeshError("refusing to write an empty mesh to '" + path.string() + "'");
    mesh.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");

    if (format == StlFormat::ascii) {
        char buf[256];
        out << "solid morphforge\n";
        for (const auto &t : mesh.triangles) {
            const Vec3 n = detail::facet_normal(mesh, t);
            std::snprintf(buf, sizeof buf, "  facet normal %.17g %.17g %.17g\n    outer loop\n", n.x, n.y, n.z);
            out << buf;
            for (auto v : t) {
                const Vec3 &p = mesh.vertices[v];
                std::snprintf(buf, sizeof buf, "      vertex %.17g %.17g %.17g\n", p.x, p.y, p.z);
                out << buf;
            }
            out << "    endloop\n  endfacet\n";
        }
        out << "endsolid morphforge\n";
    } else {
        char header[80] = {};
        std::snprintf(header, sizeof header, "binary STL written by morphforge");
        out.write(header, 80);
        const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
        out.write(reinterpret_cast<const char *>(&count), 4);
        for (const auto &t : mesh.triangles) {
            std::array<float, 12> rec{};
            const Vec3 n = detail::facet_normal(mesh, t);
            rec[0] = static_cast<float>(n.x);
            rec[1] = static_cast<float>(n.y);
            rec[2] = static_cast<float>(n.z);
            for (std::size_t c = 0; c < 3; ++c) {
                const Vec3 &p = mesh.vertices[t[c]];
                rec[3 + c * 3] = static_cast<float>(p.x);
                rec[4 + c * 3] = static_cast<float>(p.y);
                rec[5 + c * 3] = static_cast<float>(p.z);
            }
            out.write(reinterpret_cast<const char *>(rec.data()), 48);
            const std::uint16_t attr = 0;
            out.write(reinterpret_cast<const char *>(&attr), 2);
        }
    }
    if (!out) throw InputError("failed while writing '" + path.string() + "'");
}

} // namespace morphforge
