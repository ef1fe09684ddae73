#include "capsbench/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace capsbench {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

namespace {
struct ByteCursor {
    const std::vector<unsigned char>& bytes;
    size_t pos = 0;
    const std::string& origin;

    bool eof() const { return pos >= bytes.size(); }
    unsigned char next() {
        if (eof()) throw DataError("pgm '" + origin + "': unexpected EOF");
        return bytes[pos++];
    }
    unsigned char peek() const {
        if (eof()) throw DataError("pgm '" + origin + "': unexpected EOF");
        return bytes[pos];
    }

    // Skips whitespace and '#' comment lines.
    void skip_separators() {
        while (!eof()) {
            const unsigned char c = peek();
            if (std::isspace(c)) {
                ++pos;
            } else if (c == '#') {
                while (!eof() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    }

    int read_int(const char* what) {
        skip_separators();
        if (eof() || !std::isdigit(peek()))
            throw DataError("pgm '" + origin + "': expected " + std::string(what));
        long v = 0;
        while (!eof() && std::isdigit(peek())) {
            v = v * 10 + (next() - '0');
            if (v > 1 << 30) throw DataError("pgm '" + origin + "': oversized " + std::string(what));
        }
        return static_cast<int>(v);
    }
};
}  // namespace

Tensor parse_pgm(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5'))
        throw DataError("pgm '" + origin + "': bad magic, expected P2 or P5");
    const bool binary = bytes[1] == '5';
    ByteCursor cur{bytes, 2, origin};
    const int width = cur.read_int("width");
    const int height = cur.read_int("height");
    const int maxval = cur.read_int("maxval");
    if (width <= 0 || height <= 0) throw DataError("pgm '" + origin + "': non-positive dimensions");
    if (maxval <= 0) throw DataError("pgm '" + origin + "': maxval must be positive");
    if (maxval > 65535) throw DataError("pgm '" + origin + "': maxval exceeds 65535");

    Tensor img({height, width, 1});
    const real inv = real(1) / maxval;
    if (binary) {
        cur.next();  // exactly one whitespace byte before the payload
        const int bytes_per = maxval > 255 ? 2 : 1;
        for (long i = 0; i < img.size(); ++i) {
            int v = cur.next();
            if (bytes_per == 2) v = (v << 8) | cur.next();  // big-endian per the format
            img[i] = v * inv;
        }
    } else {
        for (long i = 0; i < img.size(); ++i) img[i] = cur.read_int("pixel") * inv;
    }
    return img;
}

Tensor load_pgm(const std::string& path) { return parse_pgm(read_file_bytes(path), path); }

std::vector<unsigned char> encode_pgm(const Tensor& image, int maxval, bool binary) {
    if (image.ndim() != 3 || image.dim(2) != 1)
        throw ShapeError("encode_pgm: image must be HxWx1");
    if (maxval <= 0 || maxval > 65535) throw DataError("encode_pgm: invalid maxval");
    const int H = image.dim(0), W = image.dim(1);
    std::string header = std::string(binary ? "P5" : "P2") + "\n" + std::to_string(W) + " " +
                         std::to_string(H) + "\n" + std::to_string(maxval) + "\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    for (long i = 0; i < image.size(); ++i) {
        const real clamped = std::clamp(image[i], real(0), real(1));
        const int v = static_cast<int>(std::lround(clamped * maxval));
        if (binary) {
            if (maxval > 255) out.push_back(static_cast<unsigned char>(v >> 8));
            out.push_back(static_cast<unsigned char>(v & 0xff));
        } else {
            const std::string s = std::to_string(v) + ((i + 1) % W == 0 ? "\n" : " ");
            out.insert(out.end(), s.begin(), s.end());
        }
    }
    return out;
}

void save_pgm(const std::string& path, const Tensor& image, int maxval) {
    const std::vector<unsigned char> bytes = encode_pgm(image, maxval);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<Cifar100Record> parse_cifar100(const std::vector<unsigned char>& bytes,
                                           const std::string& origin) {
    constexpr size_t kRecord = 3074;  // coarse + fine + 3*1024 pixels
    if (bytes.size() % kRecord != 0)
        throw DataError("cifar100 '" + origin + "': file length " +
                        std::to_string(bytes.size()) + " is not a multiple of 3074");
    std::vector<Cifar100Record> records;
    const real inv = real(1) / 255;
    for (size_t off = 0; off < bytes.size(); off += kRecord) {
        Cifar100Record rec;
        rec.coarse = bytes[off];
        rec.fine = bytes[off + 1];
        rec.rgb = Tensor({32, 32, 3});
        for (int c = 0; c < 3; ++c) {
            const unsigned char* plane = &bytes[off + 2 + static_cast<size_t>(c) * 1024];
            for (int h = 0; h < 32; ++h)
                for (int w = 0; w < 32; ++w) rec.rgb.at(h, w, c) = plane[h * 32 + w] * inv;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<Cifar100Record> load_cifar100_binary(const std::string& path) {
    return parse_cifar100(read_file_bytes(path), path);
}

std::vector<unsigned char> encode_cifar100(const std::vector<Cifar100Record>& records) {
    std::vector<unsigned char> out;
    out.reserve(records.size() * 3074);
    for (const Cifar100Record& rec : records) {
        out.push_back(static_cast<unsigned char>(rec.coarse));
        out.push_back(static_cast<unsigned char>(rec.fine));
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 32; ++h)
                for (int w = 0; w < 32; ++w) {
                    const real clamped = std::clamp(rec.rgb.at(h, w, c), real(0), real(1));
                    out.push_back(static_cast<unsigned char>(std::lround(clamped * 255)));
                }
    }
    return out;
}

void save_cifar100_binary(const std::string& path, const std::vector<Cifar100Record>& records) {
    const std::vector<unsigned char> bytes = encode_cifar100(records);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Tensor to_grayscale(const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(2) != 3) throw ShapeError("to_grayscale: input must be HxWx3");
    const int H = rgb.dim(0), W = rgb.dim(1);
    Tensor out({H, W, 1});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            out.at(h, w, 0) = real(0.299) * rgb.at(h, w, 0) + real(0.587) * rgb.at(h, w, 1) +
                              real(0.114) * rgb.at(h, w, 2);
    return out;
}

Tensor min_max_normalize(const Tensor& image) {
    const auto [lo_it, hi_it] = std::minmax_element(image.data.begin(), image.data.end());
    const real lo = *lo_it, hi = *hi_it;
    Tensor out(image.shape);
    if (hi == lo) return out;  // constant image carries no information
    const real inv = real(1) / (hi - lo);
    for (long i = 0; i < image.size(); ++i) out[i] = (image[i] - lo) * inv;
    return out;
}

namespace {
int bin_of(real v, int levels) {
    const int b = static_cast<int>(v * levels);
    return std::clamp(b, 0, levels - 1);
}
}  // namespace

Tensor histogram_equalize(const Tensor& image, int levels) {
    if (levels < 2) throw DataError("histogram_equalize: need at least 2 levels");
    std::vector<long> hist(static_cast<size_t>(levels), 0);
    for (long i = 0; i < image.size(); ++i) ++hist[static_cast<size_t>(bin_of(image[i], levels))];

    std::vector<real> cdf(static_cast<size_t>(levels), 0);
    long running = 0;
    for (int b = 0; b < levels; ++b) {
        running += hist[static_cast<size_t>(b)];
        cdf[static_cast<size_t>(b)] = static_cast<real>(running) / static_cast<real>(image.size());
    }
    real cdf_min = 0;
    for (int b = 0; b < levels; ++b)
        if (hist[static_cast<size_t>(b)] > 0) {
            cdf_min = cdf[static_cast<size_t>(b)];
            break;
        }

    Tensor out(image.shape);
    if (cdf_min >= 1) return out;  // single occupied bin: no contrast to spread
    const real inv = real(1) / (1 - cdf_min);
    for (long i = 0; i < image.size(); ++i) {
        const real v = (cdf[static_cast<size_t>(bin_of(image[i], levels))] - cdf_min) * inv;
        out[i] = std::clamp(v, real(0), real(1));
    }
    return out;
}

Tensor resize_bilinear(const Tensor& image, int new_h, int new_w) {
    if (image.ndim() != 3) throw ShapeError("resize_bilinear: image must be HxWxC");
    if (new_h <= 0 || new_w <= 0) throw DataError("resize_bilinear: target dims must be positive");
    const int H = image.dim(0), W = image.dim(1), C = image.dim(2);
    if (new_h == H && new_w == W) return image;
    Tensor out({new_h, new_w, C});
    const real sh = static_cast<real>(H) / new_h;
    const real sw = static_cast<real>(W) / new_w;
    for (int oh = 0; oh < new_h; ++oh) {
        const real src_h = std::clamp((oh + real(0.5)) * sh - real(0.5), real(0), real(H - 1));
        const int h0 = static_cast<int>(src_h);
        const int h1 = std::min(h0 + 1, H - 1);
        const real fh = src_h - h0;
        for (int ow = 0; ow < new_w; ++ow) {
            const real src_w = std::clamp((ow + real(0.5)) * sw - real(0.5), real(0), real(W - 1));
            const int w0 = static_cast<int>(src_w);
            const int w1 = std::min(w0 + 1, W - 1);
            const real fw = src_w - w0;
            for (int c = 0; c < C; ++c) {
                const real top = image.at(h0, w0, c) * (1 - fw) + image.at(h0, w1, c) * fw;
                const real bot = image.at(h1, w0, c) * (1 - fw) + image.at(h1, w1, c) * fw;
                out.at(oh, ow, c) = top * (1 - fh) + bot * fh;
            }
        }
    }
    return out;
}

real intensity_range(const Tensor& image) {
    const auto [lo, hi] = std::minmax_element(image.data.begin(), image.data.end());
    return *hi - *lo;
}

real histogram_entropy(const Tensor& image, int levels) {
    std::vector<long> hist(static_cast<size_t>(levels), 0);
    for (long i = 0; i < image.size(); ++i) ++hist[static_cast<size_t>(bin_of(image[i], levels))];
    real entropy = 0;
    for (long count : hist) {
        if (count == 0) continue;
        const real p = static_cast<real>(count) / static_cast<real>(image.size());
        entropy -= p * std::log2(p);
    }
    return entropy;
}

}  // namespace capsbench
