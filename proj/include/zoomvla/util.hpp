#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace zoomvla {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal form of a double. Locale-free and identical
/// across runs, which the byte-level determinism contract depends on.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write file: " + path);
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError("short write: " + path);
    }
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            if (start < text.size()) {
                lines.emplace_back(text.substr(start));
            }
            break;
        }
        lines.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

/// Moving mean with the window clipped at the left edge (first w-1 outputs
/// average the available prefix). Fixed accumulation order.
inline std::vector<double> moving_mean(const std::vector<double>& xs, int window) {
    std::vector<double> out(xs.size(), 0.0);
    for (size_t i = 0; i < xs.size(); ++i) {
        size_t lo = (i + 1 >= static_cast<size_t>(window)) ? i + 1 - static_cast<size_t>(window) : 0;
        double sum = 0.0;
        for (size_t j = lo; j <= i; ++j) {
            sum += xs[j];
        }
        out[i] = sum / static_cast<double>(i - lo + 1);
    }
    return out;
}

} // namespace zoomvla
