#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "partforge/common.hpp"

namespace partforge {

/// Single-channel intensity raster, values nominally in [0,1].
struct Raster {
    int rows = 0;
    int cols = 0;
    std::vector<float> pixels;  // row-major

    float at(int r, int c) const {
        return pixels[static_cast<std::size_t>(r) * cols + c];
    }
    float& at(int r, int c) {
        return pixels[static_cast<std::size_t>(r) * cols + c];
    }

    static Raster zeros(int rows, int cols) {
        Raster im;
        im.rows = rows;
        im.cols = cols;
        im.pixels.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
        return im;
    }
};

inline Raster mirror_raster(const Raster& im) {
    Raster out = Raster::zeros(im.rows, im.cols);
    for (int r = 0; r < im.rows; ++r)
        for (int c = 0; c < im.cols; ++c) out.at(r, im.cols - 1 - c) = im.at(r, c);
    return out;
}

/// Bilinear resampling with clamped border sampling.
inline Raster resample(const Raster& im, int out_rows, int out_cols) {
    if (out_rows <= 0 || out_cols <= 0) throw Error("resample: empty output");
    Raster out = Raster::zeros(out_rows, out_cols);
    const double sr = static_cast<double>(im.rows) / out_rows;
    const double sc = static_cast<double>(im.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        double y = (r + 0.5) * sr - 0.5;
        int y0 = static_cast<int>(std::floor(y));
        double wy = y - y0;
        int ya = std::clamp(y0, 0, im.rows - 1);
        int yb = std::clamp(y0 + 1, 0, im.rows - 1);
        for (int c = 0; c < out_cols; ++c) {
            double x = (c + 0.5) * sc - 0.5;
            int x0 = static_cast<int>(std::floor(x));
            double wx = x - x0;
            int xa = std::clamp(x0, 0, im.cols - 1);
            int xb = std::clamp(x0 + 1, 0, im.cols - 1);
            double v = (1 - wy) * ((1 - wx) * im.at(ya, xa) + wx * im.at(ya, xb)) +
                       wy * ((1 - wx) * im.at(yb, xa) + wx * im.at(yb, xb));
            out.at(r, c) = static_cast<float>(v);
        }
    }
    return out;
}

inline Raster resample(const Raster& im, double scale) {
    int rr = std::max(1, static_cast<int>(std::lround(im.rows * scale)));
    int cc = std::max(1, static_cast<int>(std::lround(im.cols * scale)));
    return resample(im, rr, cc);
}

// -------------------------------- PGM I/O ---------------------------------

inline void write_pgm(const Raster& im, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out << "P5\n" << im.cols << " " << im.rows << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(im.cols));
    for (int r = 0; r < im.rows; ++r) {
        for (int c = 0; c < im.cols; ++c) {
            float v = std::clamp(im.at(r, c), 0.0f, 1.0f);
            row[static_cast<std::size_t>(c)] =
                static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw Error("short write: " + path);
}

inline Raster read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw Error("not a binary PGM (P5): " + path);
    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comment lines
        for (;;) {
            int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(ch)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw Error("malformed PGM header: " + path);
        return v;
    };
    long cols = next_int();
    long rows = next_int();
    long maxval = next_int();
    if (maxval <= 0 || maxval > 255) throw Error("unsupported PGM maxval: " + path);
    in.get();  // single whitespace before payload
    Raster im = Raster::zeros(static_cast<int>(rows), static_cast<int>(cols));
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw Error("truncated PGM payload: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        im.pixels[i] = static_cast<float>(buf[i]) / static_cast<float>(maxval);
    return im;
}

}  // namespace partforge
