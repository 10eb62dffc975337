#include "data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace csts::data {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr char kPackMagic[8] = {'C', 'S', 'T', 'S', 'P', 'A', 'C', 'K'};
constexpr std::uint32_t kPackVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError(path + ": truncated packed header");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
}

struct PackHeader {
    Index n = 0, h = 0, w = 0, c = 0;
};

PackHeader read_pack_header(std::istream& is, const std::string& path) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kPackMagic, 8) != 0)
        throw FormatError(path + ": not a packed frame file (bad magic)");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kPackVersion)
        throw FormatError(path + ": packed version " + std::to_string(version) + ", expected " + std::to_string(kPackVersion));
    const auto rank = get<std::uint32_t>(is, path);
    if (rank != 4) throw FormatError(path + ": packed frames must have rank 4, got " + std::to_string(rank));
    PackHeader h;
    h.n = static_cast<Index>(get<std::uint64_t>(is, path));
    h.h = static_cast<Index>(get<std::uint64_t>(is, path));
    h.w = static_cast<Index>(get<std::uint64_t>(is, path));
    h.c = static_cast<Index>(get<std::uint64_t>(is, path));
    const auto dtype = get<std::uint8_t>(is, path);
    if (dtype != 0) throw FormatError(path + ": unsupported packed dtype " + std::to_string(dtype));
    if (h.c != 3) throw FormatError(path + ": packed frames must have 3 channels");
    return h;
}

} // namespace

Image read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_stdio(&img, f.get())) throw FormatError(path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Image out;
    out.width = img.width;
    out.height = img.height;
    out.channels = 3;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw FormatError(path + ": " + img.message);
    }
    return out;
}

void write_png(const std::string& path, const Image& in) {
    if (in.channels != 1 && in.channels != 3) throw ContractError("write_png: 1 or 3 channels only");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(in.width);
    img.height = static_cast<png_uint_32>(in.height);
    img.format = in.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path);
    if (!png_image_write_to_stdio(&img, f.get(), 0, in.pixels.data(), 0, nullptr))
        throw IoError(path + ": " + img.message);
}

Tensor image_to_tensor(const Image& img) {
    std::vector<double> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
    return Tensor::from_data({img.height, img.width, img.channels}, std::move(v));
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.size(2) != 3) throw DimensionError("tensor_to_image expects [H, W, 3], got " + shape_str(t.shape()));
    Image img{t.size(1), t.size(0), 3, std::vector<std::uint8_t>(static_cast<std::size_t>(t.numel()))};
    for (Index i = 0; i < t.numel(); ++i)
        img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
    return img;
}

Image gray_image(const Tensor& t) {
    if (t.rank() != 2) throw DimensionError("gray_image expects [H, W], got " + shape_str(t.shape()));
    Image img{t.size(1), t.size(0), 1, std::vector<std::uint8_t>(static_cast<std::size_t>(t.numel()))};
    for (Index i = 0; i < t.numel(); ++i)
        img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
    return img;
}

Image resize(const Image& img, Index width, Index height) {
    if (img.width == width && img.height == height) return img;
    Image out{width, height, img.channels, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height * img.channels))};
    auto src = [&](Index o, Index n_out, Index n_in, Index& i0, Index& i1, double& fr) {
        double s = (static_cast<double>(o) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
        s = std::max(s, 0.0);
        i0 = std::min(static_cast<Index>(std::floor(s)), n_in - 1);
        i1 = std::min(i0 + 1, n_in - 1);
        fr = s - static_cast<double>(i0);
    };
    for (Index y = 0; y < height; ++y) {
        Index y0, y1;
        double fy;
        src(y, height, img.height, y0, y1, fy);
        for (Index x = 0; x < width; ++x) {
            Index x0, x1;
            double fx;
            src(x, width, img.width, x0, x1, fx);
            for (Index c = 0; c < img.channels; ++c) {
                auto at = [&](Index yy, Index xx) { return static_cast<double>(img.pixels[static_cast<std::size_t>((yy * img.width + xx) * img.channels + c)]); };
                const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
                out.pixels[static_cast<std::size_t>((y * width + x) * img.channels + c)] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

void write_packed(const std::string& path, const std::vector<Image>& frames) {
    if (frames.empty()) throw ContractError("write_packed: no frames");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write(kPackMagic, 8);
    put<std::uint32_t>(os, kPackVersion);
    put<std::uint32_t>(os, 4);
    const Image& f0 = frames.front();
    for (Index d : {static_cast<Index>(frames.size()), f0.height, f0.width, Index{3}}) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    put<std::uint8_t>(os, 0);
    for (const auto& f : frames) {
        if (f.width != f0.width || f.height != f0.height || f.channels != 3)
            throw ContractError("write_packed: frames must share one RGB size");
        os.write(reinterpret_cast<const char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<Image> read_packed(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    const PackHeader h = read_pack_header(is, path);
    std::vector<Image> frames;
    for (Index i = 0; i < h.n; ++i) {
        Image img{h.w, h.h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h.w * h.h * 3))};
        if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
            throw FormatError(path + ": truncated payload at frame " + std::to_string(i));
        frames.push_back(std::move(img));
    }
    return frames;
}

Index packed_frame_count(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_pack_header(is, path).n;
}

} // namespace csts::data
