#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace watersplat {

// Row-major planar-interleaved image, C channels per pixel.
template <int C>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // height*width*C, row-major

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * C, fill) {}

    double* at(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * C; }
    const double* at(int x, int y) const { return data.data() + (static_cast<size_t>(y) * width + x) * C; }
    size_t pixels() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

using Image1 = Image<1>;
using Image3 = Image<3>;

namespace detail {

inline void skip_pnm_ws(std::istream& in) {
    int c;
    while ((c = in.peek()) != EOF) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
}

inline int read_pnm_int(std::istream& in, const std::string& file) {
    skip_pnm_ws(in);
    int v;
    if (!(in >> v)) throw std::runtime_error("malformed PNM header in " + file);
    return v;
}

inline bool host_little_endian() {
    const uint16_t probe = 1;
    uint8_t b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

}  // namespace detail

inline void write_ppm(const Image3& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double* p = img.at(x, y);
            for (int c = 0; c < 3; ++c)
                row[x * 3 + c] = static_cast<uint8_t>(std::lround(std::clamp(p[c], 0.0, 1.0) * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Image3 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("not a P6 PPM: " + path);
    const int w = detail::read_pnm_int(in, path);
    const int h = detail::read_pnm_int(in, path);
    const int maxv = detail::read_pnm_int(in, path);
    if (maxv != 255) throw std::runtime_error("unsupported maxval in " + path);
    in.get();  // single whitespace after header
    Image3 img(w, h);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!in) throw std::runtime_error("truncated PPM: " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y)[c] = row[x * 3 + c] / 255.0;
    }
    return img;
}

// PGM used for binary masks: 0 = object, 255 = water.
inline void write_pgm_mask(const Image1& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<uint8_t> row(mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) row[x] = mask.at(x, y)[0] > 0.5 ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Image1 read_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);
    const int w = detail::read_pnm_int(in, path);
    const int h = detail::read_pnm_int(in, path);
    const int maxv = detail::read_pnm_int(in, path);
    if (maxv != 255) throw std::runtime_error("unsupported maxval in " + path);
    in.get();
    Image1 img(w, h);
    std::vector<uint8_t> row(w);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!in) throw std::runtime_error("truncated PGM: " + path);
        for (int x = 0; x < w; ++x) img.at(x, y)[0] = row[x] > 127 ? 1.0 : 0.0;
    }
    return img;
}

// PFM: "PF" (3-channel) / "Pf" (1-channel), float32, bottom-up rows,
// negative scale marks little-endian.
template <int C>
inline void write_pfm(const Image<C>& img, const std::string& path) {
    static_assert(C == 1 || C == 3);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << (C == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(img.width) * C);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < C; ++c) row[x * C + c] = static_cast<float>(img.at(x, y)[c]);
        out.write(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

template <int C>
inline Image<C> read_pfm(const std::string& path) {
    static_assert(C == 1 || C == 3);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    const char* want = C == 3 ? "PF" : "Pf";
    if (magic != want) throw std::runtime_error("bad PFM magic in " + path);
    int w, h;
    double scale;
    if (!(in >> w >> h >> scale)) throw std::runtime_error("malformed PFM header in " + path);
    if (w <= 0 || h <= 0) throw std::runtime_error("bad PFM dimensions in " + path);
    const bool file_le = scale < 0;
    in.get();
    Image<C> img(w, h);
    std::vector<float> row(static_cast<size_t>(w) * C);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float));
        if (!in)
            throw std::runtime_error("truncated PFM: " + path + " at byte offset " +
                                     std::to_string(static_cast<long long>(in.gcount()) +
                                                    static_cast<long long>(h - 1 - y) * w * C * sizeof(float)));
        if (file_le != detail::host_little_endian()) {
            for (float& f : row) {
                uint32_t u;
                std::memcpy(&u, &f, 4);
                u = __builtin_bswap32(u);
                std::memcpy(&f, &u, 4);
            }
        }
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < C; ++c) img.at(x, y)[c] = row[x * C + c];
    }
    return img;
}

}  // namespace watersplat
