#include "comatch/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "comatch/errors.hpp"

namespace comatch::pbm {

namespace {

std::uint8_t quantize(double v) {
    double scaled = std::lround(v * 255.0);
    if (scaled < 0.0) scaled = 0.0;
    if (scaled > 255.0) scaled = 255.0;
    return static_cast<std::uint8_t>(scaled);
}

// Reads one whitespace/comment-delimited ASCII token from the header.
std::string next_token(std::istream& is, const std::string& path) {
    std::string tok;
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (std::isspace(ch)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(ch));
            ch = is.get();
            continue;
        }
        ch = is.get();
    }
    if (tok.empty()) throw ParseError("unexpected end of header in " + path);
    if (ch != EOF) is.unget();
    return tok;
}

long parse_dim(const std::string& tok, const std::string& path) {
    for (char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw ParseError("non-numeric header field '" + tok + "' in " + path);
        }
    }
    long v = std::stol(tok);
    if (v <= 0 || v > 1 << 20) throw ParseError("header dimension out of range in " + path);
    return v;
}

std::vector<std::uint8_t> read_payload(std::istream& is, std::size_t count,
                                       const std::string& path) {
    // single whitespace byte separates header from raster
    int sep = is.get();
    if (sep == EOF || !std::isspace(sep)) throw ParseError("malformed raster start in " + path);
    std::vector<std::uint8_t> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(is.gcount()) != count) {
        throw ParseError("truncated raster in " + path);
    }
    return buf;
}

struct Header {
    long w = 0, h = 0;
};

Header read_header(std::istream& is, const char* magic, const std::string& path) {
    std::string m = next_token(is, path);
    if (m != magic) throw ParseError("expected " + std::string(magic) + " magic in " + path);
    Header hd;
    hd.w = parse_dim(next_token(is, path), path);
    hd.h = parse_dim(next_token(is, path), path);
    long maxval = parse_dim(next_token(is, path), path);
    if (maxval != 255) throw ParseError("unsupported maxval in " + path);
    return hd;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.extent(2) != 3) {
        throw DimensionError("write_ppm expects an {H,W,3} tensor");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P6\n" << image.extent(1) << " " << image.extent(0) << "\n255\n";
    std::vector<std::uint8_t> raw(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) raw[i] = quantize(image[i]);
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw DataError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    Header hd = read_header(is, "P6", path);
    const std::size_t w = static_cast<std::size_t>(hd.w), h = static_cast<std::size_t>(hd.h);
    std::vector<std::uint8_t> raw = read_payload(is, h * w * 3, path);
    Tensor out({h, w, 3});
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / 255.0;
    return out;
}

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.rank() != 2) throw DimensionError("write_pgm expects an {H,W} tensor");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P5\n" << gray.extent(1) << " " << gray.extent(0) << "\n255\n";
    std::vector<std::uint8_t> raw(gray.size());
    for (std::size_t i = 0; i < gray.size(); ++i) {
        double v = std::lround(gray[i]);
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        raw[i] = static_cast<std::uint8_t>(v);
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw DataError("write failed: " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    Header hd = read_header(is, "P5", path);
    const std::size_t w = static_cast<std::size_t>(hd.w), h = static_cast<std::size_t>(hd.h);
    std::vector<std::uint8_t> raw = read_payload(is, h * w, path);
    Tensor out({h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<double>(raw[i]);
    return out;
}

}  // namespace comatch::pbm
