// SPDX-License-Identifier: Apache-2.0
#pragma once

// MetaImage-style header + raw pair shared by binary images, scalar images and
// displacement fields. Raw data is little-endian, x-fastest, channels interleaved.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/grid.hpp"

namespace morphforge {

enum class ElementType { uint8, float32 };

/// Decoded container contents before conversion to a typed volume.
struct ImageFile {
    GridGeometry grid;
    ElementType type = ElementType::uint8;
    int channels = 1;
    std::vector<double> values; // voxel-major, channels interleaved
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_header(const std::filesystem::path &header, const GridGeometry &g, ElementType type, int channels,
                         const std::string &raw_name) {
    std::ofstream out(header, std::ios::binary);
    if (!out) throw InputError("cannot write '" + header.string() + "'");
    out << "ObjectType = Image\n"
        << "NDims = 3\n"
        << "BinaryData = True\n"
        << "BinaryDataByteOrderMSB = False\n"
        << "DimSize = " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n'
        << "ElementSpacing = " << fmt17(g.spacing.x) << ' ' << fmt17(g.spacing.y) << ' ' << fmt17(g.spacing.z) << '\n'
        << "Offset = " << fmt17(g.origin.x) << ' ' << fmt17(g.origin.y) << ' ' << fmt17(g.origin.z) << '\n'
        << "ElementNumberOfChannels = " << channels << '\n'
        << "ElementType = " << (type == ElementType::uint8 ? "UINT8" : "FLOAT32") << '\n'
        << "ElementDataFile = " << raw_name << '\n';
    if (!out) throw InputError("failed while writing '" + header.string() + "'");
}

inline std::filesystem::path raw_path_for(const std::filesystem::path &header) {
    auto raw = header;
    raw.replace_extension(".raw");
    return raw;
}

inline void write_raw(const std::filesystem::path &path, const void *data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw InputError("failed while writing '" + path.string() + "'");
}

template <std::size_t N>
std::array<double, N> parse_numbers(const std::string &key, const std::string &value) {
    std::istringstream ss(value);
    std::array<double, N> out{};
    for (auto &v : out)
        if (!(ss >> v)) throw ValidationError("header key " + key + " needs " + std::to_string(N) + " numbers");
    return out;
}

} // namespace detail

inline ImageFile read_image_file(const std::filesystem::path &header) {
    std::ifstream in(header);
    if (!in) throw InputError("cannot open '" + header.string() + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    auto need = [&](const char *key) -> const std::string & {
        auto it = kv.find(key);
        if (it == kv.end()) throw ValidationError("image header '" + header.string() + "' lacks key " + key);
        return it->second;
    };

    if (need("NDims") != "3") throw ValidationError("only NDims = 3 is supported");
    if (auto it = kv.find("BinaryDataByteOrderMSB"); it != kv.end() && it->second == "True")
        throw ValidationError("big-endian raw data is not supported");

    ImageFile f;
    const auto dims = detail::parse_numbers<3>("DimSize", need("DimSize"));
    const auto spacing = detail::parse_numbers<3>("ElementSpacing", need("ElementSpacing"));
    const auto offset = kv.contains("Offset") ? detail::parse_numbers<3>("Offset", kv["Offset"]) : std::array<double, 3>{};
    for (int a = 0; a < 3; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        f.grid.dims[ua] = static_cast<std::int64_t>(dims[ua]);
        f.grid.spacing[ua] = spacing[ua];
        f.grid.origin[ua] = offset[ua];
    }
    f.grid.validate();
    f.channels = kv.contains("ElementNumberOfChannels") ? std::stoi(kv["ElementNumberOfChannels"]) : 1;
    if (f.channels != 1 && f.channels != 3) throw ValidationError("ElementNumberOfChannels must be 1 or 3");

    const auto &type = need("ElementType");
    if (type == "UINT8" || type == "MET_UCHAR") f.type = ElementType::uint8;
    else if (type == "FLOAT32" || type == "MET_FLOAT") f.type = ElementType::float32;
    else throw ValidationError("unsupported ElementType '" + type + "'");

    const auto raw = header.parent_path() / need("ElementDataFile");
    std::ifstream rin(raw, std::ios::binary);
    if (!rin) throw InputError("cannot open raw data '" + raw.string() + "'");
    const std::vector<char> bytes{std::istreambuf_iterator<char>(rin), std::istreambuf_iterator<char>()};
    const auto n = static_cast<std::size_t>(f.grid.voxel_count()) * static_cast<std::size_t>(f.channels);
    const std::size_t elem = f.type == ElementType::uint8 ? 1 : 4;
    if (bytes.size() != n * elem)
        throw ParseError("raw file '" + raw.string() + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(n * elem),
                         bytes.size());
    f.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (f.type == ElementType::uint8) {
            f.values[i] = static_cast<unsigned char>(bytes[i]);
        } else {
            float v;
            std::memcpy(&v, bytes.data() + i * 4, 4);
            if (!std::isfinite(v)) throw ValidationError("non-finite value in '" + raw.string() + "'");
            f.values[i] = v;
        }
    }
    return f;
}

inline BinaryImage3D to_binary(const ImageFile &f) {
    if (f.channels != 1) throw ValidationError("expected a single-channel image");
    BinaryImage3D img(f.grid);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = f.values[i] > 0.5 ? 1 : 0;
    return img;
}

inline ScalarImage3D to_scalar(const ImageFile &f) {
    if (f.channels != 1) throw ValidationError("expected a single-channel image");
    ScalarImage3D img(f.grid);
    img.data = f.values;
    return img;
}

inline DisplacementField to_field(const ImageFile &f) {
    if (f.channels != 3) throw ValidationError("expected a 3-channel displacement field");
    DisplacementField d(f.grid);
    for (std::size_t i = 0; i < d.data.size(); ++i)
        d.data[i] = {f.values[3 * i], f.values[3 * i + 1], f.values[3 * i + 2]};
    return d;
}

inline BinaryImage3D read_binary_image(const std::filesystem::path &p) { return to_binary(read_image_file(p)); }
inline ScalarImage3D read_scalar_image(const std::filesystem::path &p) { return to_scalar(read_image_file(p)); }
inline DisplacementField read_field(const std::filesystem::path &p) { return to_field(read_image_file(p)); }

inline void write_image(const BinaryImage3D &img, const std::filesystem::path &header) {
    const auto raw = detail::raw_path_for(header);
    detail::write_header(header, img.grid, ElementType::uint8, 1, raw.filename().string());
    detail::write_raw(raw, img.data.data(), img.data.size());
}

inline void write_image(const ScalarImage3D &img, const std::filesystem::path &header) {
    const auto raw = detail::raw_path_for(header);
    std::vector<float> buf(img.data.begin(), img.data.end());
    detail::write_header(header, img.grid, ElementType::float32, 1, raw.filename().string());
    detail::write_raw(raw, buf.data(), buf.size() * sizeof(float));
}

inline void write_image(const DisplacementField &d, const std::filesystem::path &header) {
    const auto raw = detail::raw_path_for(header);
    std::vector<float> buf;
    buf.reserve(d.data.size() * 3);
    for (const auto &v : d.data) {
        buf.push_back(static_cast<float>(v.x));
        buf.push_back(static_cast<float>(v.y));
        buf.push_back(static_cast<float>(v.z));
    }
    detail::write_header(header, d.grid, ElementType::float32, 3, raw.filename().string());
    detail::write_raw(raw, buf.data(), buf.size() * sizeof(float));
}

} // namespace morphforge
