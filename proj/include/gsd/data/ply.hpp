#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/core/types.hpp"

namespace gsd {

// Minimal binary-little-endian PLY support for vertex clouds: all scalar
// vertex properties are parsed into doubles; non-vertex elements are skipped.
struct PlyCloud {
    std::vector<std::string> properties;      // property names in file order
    std::vector<std::vector<double>> rows;    // one row per vertex

    int find(const std::string& name) const {
        for (size_t i = 0; i < properties.size(); ++i)
            if (properties[i] == name) return static_cast<int>(i);
        return -1;
    }
};

namespace detail {

inline size_t ply_scalar_size(const std::string& type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
        type == "float" || type == "float32")
        return 4;
    if (type == "double" || type == "float64") return 8;
    throw DataError("ply: unsupported property type '" + type + "'");
}

inline double ply_read_scalar(const char* p, const std::string& type) {
    auto as = [&]<typename T>() {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    if (type == "char" || type == "int8") return as.operator()<int8_t>();
    if (type == "uchar" || type == "uint8") return as.operator()<uint8_t>();
    if (type == "short" || type == "int16") return as.operator()<int16_t>();
    if (type == "ushort" || type == "uint16") return as.operator()<uint16_t>();
    if (type == "int" || type == "int32") return as.operator()<int32_t>();
    if (type == "uint" || type == "uint32") return as.operator()<uint32_t>();
    if (type == "float" || type == "float32") return as.operator()<float>();
    return as.operator()<double>();
}

}  // namespace detail

inline PlyCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
        throw DataError(path + ": not a PLY file");

    struct Element {
        std::string name;
        size_t count = 0;
        std::vector<std::pair<std::string, std::string>> props;  // (type, name)
    };
    std::vector<Element> elements;
    bool binary_le = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = (fmt == "binary_little_endian");
            if (!binary_le) throw DataError(path + ": only binary_little_endian PLY supported");
        } else if (tok == "element") {
            Element e;
            ss >> e.name >> e.count;
            elements.push_back(e);
        } else if (tok == "property") {
            if (elements.empty()) throw DataError(path + ": property before element");
            std::string type;
            ss >> type;
            if (type == "list") throw DataError(path + ": list properties unsupported");
            std::string name;
            ss >> name;
            elements.back().props.emplace_back(type, name);
        } else if (tok == "end_header") {
            break;
        }
    }

    PlyCloud cloud;
    for (const auto& e : elements) {
        size_t row_size = 0;
        for (const auto& [type, name] : e.props) row_size += detail::ply_scalar_size(type);
        std::vector<char> buf(row_size);
        if (e.name != "vertex") {
            for (size_t i = 0; i < e.count; ++i) in.read(buf.data(), row_size);
            continue;
        }
        for (const auto& [type, name] : e.props) cloud.properties.push_back(name);
        cloud.rows.reserve(e.count);
        for (size_t i = 0; i < e.count; ++i) {
            in.read(buf.data(), static_cast<std::streamsize>(row_size));
            if (!in) throw DataError(path + ": truncated vertex data");
            std::vector<double> row;
            row.reserve(e.props.size());
            size_t off = 0;
            for (const auto& [type, name] : e.props) {
                row.push_back(detail::ply_read_scalar(buf.data() + off, type));
                off += detail::ply_scalar_size(type);
            }
            cloud.rows.push_back(std::move(row));
        }
    }
    if (cloud.properties.empty()) throw DataError(path + ": no vertex element");
    return cloud;
}

// Writes float32 vertex properties, binary little-endian.
inline void save_ply(const std::string& path, const std::vector<std::string>& properties,
                     const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << rows.size() << "\n";
    for (const auto& p : properties) out << "property float " << p << "\n";
    out << "end_header\n";
    for (const auto& row : rows) {
        if (row.size() != properties.size())
            throw ContractError("save_ply: row width does not match property count");
        for (double v : row) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!out) throw DataError("short write while saving " + path);
}

}  // namespace gsd
