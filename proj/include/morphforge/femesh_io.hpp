// SPDX-License-Identifier: Apache-2.0
#pragma once

// Neutral FE mesh text format:
//   # comment
//   NODE <id> <x> <y> <z>
//   ELEM <id> <kind> <part> <n1> ... <nk>
// Coordinates are mm, written with 17 significant digits.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/mesh.hpp"

namespace morphforge {

namespace detail {

inline std::vector<std::string> split_ws(const std::string &line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

template <class T>
T parse_field(const std::string &tok, std::size_t line_no, const char *what) {
    T v{};
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw ValidationError("line " + std::to_string(line_no) + ": bad " + what + " '" + tok + "'");
    return v;
}

} // namespace detail

inline FEMesh parse_femesh(std::istream &in) {
    FEMesh mesh;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto tok = detail::split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "NODE") {
            if (tok.size() != 5) throw ValidationError("line " + std::to_string(line_no) + ": NODE needs 4 fields");
            const auto id = detail::parse_field<std::int64_t>(tok[1], line_no, "node id");
            const Vec3 p{detail::parse_field<double>(tok[2], line_no, "coordinate"),
                         detail::parse_field<double>(tok[3], line_no, "coordinate"),
                         detail::parse_field<double>(tok[4], line_no, "coordinate")};
            if (!mesh.nodes.emplace(id, p).second)
                throw ValidationError("line " + std::to_string(line_no) + ": duplicate node id " + tok[1]);
        } else if (tok[0] == "ELEM") {
            if (tok.size() < 4) throw ValidationError("line " + std::to_string(line_no) + ": ELEM is truncated");
            Element e;
            e.id = detail::parse_field<std::int64_t>(tok[1], line_no, "element id");
            e.kind = parse_element_kind(tok[2]);
            e.part = tok[3];
            for (std::size_t i = 4; i < tok.size(); ++i)
                e.nodes.push_back(detail::parse_field<std::int64_t>(tok[i], line_no, "node reference"));
            mesh.elements.push_back(std::move(e));
        } else {
            throw ValidationError("line " + std::to_string(line_no) + ": unknown record '" + tok[0] + "'");
        }
    }
    mesh.validate();
    return mesh;
}

inline FEMesh read_femesh(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    return parse_femesh(in);
}

/// Canonical emission: nodes by id, then elements by id.
inline void emit_femesh(const FEMesh &mesh, std::ostream &out) {
    mesh.validate();
    char buf[128];
    out << "# morphforge neutral FE mesh\n";
    for (const auto &[id, p] : mesh.nodes) {
        std::snprintf(buf, sizeof buf, "NODE %lld %.17g %.17g %.17g\n", static_cast<long long>(id), p.x, p.y, p.z);
        out << buf;
    }
    std::vector<const Element *> order;
    order.reserve(mesh.elements.size());
    for (const auto &e : mesh.elements) order.push_back(&e);
    std::stable_sort(order.begin(), order.end(), [](auto *a, auto *b) { return a->id < b->id; });
    for (const Element *e : order) {
        out << "ELEM " << e->id << ' ' << to_string(e->kind) << ' ' << e->part;
        for (auto n : e->nodes) out << ' ' << n;
        out << '\n';
    }
}

inline void write_femesh(const FEMesh &mesh, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    emit_femesh(mesh, out);
    if (!out) throw InputError("failed while writing '" + path.string() + "'");
}

} // namespace morphforge
