#include "casnet/pnm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace casnet {

namespace {

std::uint8_t quantize(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<std::uint8_t>(std::nearbyint(v * 255.0));
}

void write_pnm(const std::string& path, const Tensor& image, int channels) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != channels) {
        throw ShapeError("write_pnm: expected (1,H,W," + std::to_string(channels) +
                         "), got " + s.str());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pnm: cannot open " + path);
    out << (channels == 3 ? "P6" : "P5") << "\n" << s.w << " " << s.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<size_t>(s.w) * channels);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < channels; ++c)
                row[static_cast<size_t>(x) * channels + c] = quantize(image.at(0, y, x, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write_pnm: short write to " + path);
}

// Reads the next integer token, skipping whitespace and '#' comments.
int read_header_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw DataError("read_pnm: malformed header in " + path);
    long v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        if (v > 1 << 20) throw DataError("read_pnm: header value out of range in " + path);
        ch = in.get();
    }
    if (ch != EOF) in.unget();
    return static_cast<int>(v);
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) { write_pnm(path, image, 3); }
void write_pgm(const std::string& path, const Tensor& image) { write_pnm(path, image, 1); }

Tensor read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_pnm: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    int channels;
    if (m0 == 'P' && m1 == '6') channels = 3;
    else if (m0 == 'P' && m1 == '5') channels = 1;
    else throw DataError("read_pnm: " + path + " is not a binary P5/P6 file");
    const int w = read_header_int(in, path);
    const int h = read_header_int(in, path);
    const int maxval = read_header_int(in, path);
    if (w <= 0 || h <= 0) throw DataError("read_pnm: bad dimensions in " + path);
    if (maxval != 255) throw DataError("read_pnm: only maxval 255 supported, " + path +
                                       " has " + std::to_string(maxval));
    in.get();  // single whitespace byte after maxval
    std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError("read_pnm: truncated pixel data in " + path);
    Tensor img(Shape{1, h, w, channels});
    auto& dst = img.raw();
    for (size_t i = 0; i < raw.size(); ++i) dst[i] = raw[i] / 255.0;
    return img;
}

}  // namespace casnet
