#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "texgraph/errors.hpp"
#include "texgraph/texdata.hpp"

namespace texgraph::texdata {

namespace {

class HeaderReader {
public:
    HeaderReader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

    std::size_t next_number() {
        skip_space_and_comments();
        std::size_t v = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (++digits > 9) fail("header number too large");
            ++pos_;
        }
        if (digits == 0) fail("malformed header");
        return v;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) fail("malformed header");
        return pos_ + 1;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw DatasetError(path_.string() + ": " + why);
    }

    std::size_t pos_ = 0;

private:
    static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& bytes_;
    const std::filesystem::path& path_;
};

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError(path.string() + ": cannot open file");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    HeaderReader r(bytes, path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') r.fail("not a binary PPM (missing P6 magic)");
    r.pos_ = 2;
    const std::size_t w = r.next_number();
    const std::size_t h = r.next_number();
    const std::size_t maxval = r.next_number();
    if (w == 0 || h == 0) r.fail("zero image extent");
    if (maxval == 0 || maxval > 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (8-bit only)");
    const std::size_t start = r.raster_start();
    const std::size_t needed = w * h * 3;
    if (bytes.size() - start < needed) r.fail("truncated raster data");

    Tensor img({h, w, 3});
    const double scale = 1.0 / static_cast<double>(maxval);
    for (std::size_t i = 0; i < needed; ++i) {
        const auto v = static_cast<unsigned char>(bytes[start + i]);
        if (v > maxval) r.fail("sample exceeds maxval");
        img[i] = static_cast<double>(v) * scale;
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    const MapShape m = map_shape(image);
    if (m.c != 3) throw DimensionError("write_ppm: expected 3 channels, got " + shape_str(image.shape()));
    std::string out = "P6\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
    out.reserve(out.size() + image.size());
    for (double v : image.data()) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DatasetError(path.string() + ": write failed");
}

}  // namespace texgraph::texdata
