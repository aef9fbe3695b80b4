// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mor {

/// Interleaved (HWC) image with values in [0, 1].
class ImageF {
public:
    static constexpr std::size_t kMinSide = 8;

    ImageF() = default;
    ImageF(std::size_t height, std::size_t width, std::size_t channels = 1, double fill = 0.0)
        : h_(height), w_(width), c_(channels), data_(height * width * channels, fill) {
        if (channels != 1 && channels != 3)
            throw std::invalid_argument("ImageF: channels must be 1 or 3, got " + std::to_string(channels));
    }
    ImageF(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data)
        : ImageF(height, width, channels) {
        if (data.size() != data_.size())
            throw std::invalid_argument("ImageF: data length mismatch");
        data_ = std::move(data);
    }

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t channels() const noexcept { return c_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t pixels() const noexcept { return h_ * w_; }

    double &at(std::size_t y, std::size_t x, std::size_t ch = 0) noexcept { return data_[(y * w_ + x) * c_ + ch]; }
    double at(std::size_t y, std::size_t x, std::size_t ch = 0) const noexcept {
        return data_[(y * w_ + x) * c_ + ch];
    }

    std::vector<double> &data() noexcept { return data_; }
    const std::vector<double> &data() const noexcept { return data_; }

    bool same_shape(const ImageF &o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
    bool operator==(const ImageF &o) const = default;

    std::string shape_string() const {
        return std::to_string(h_) + "x" + std::to_string(w_) + "x" + std::to_string(c_);
    }

    void clamp01() {
        for (double &v : data_)
            v = std::clamp(v, 0.0, 1.0);
    }

    /// Single channel view: returns channel ch as its own grayscale image.
    ImageF channel(std::size_t ch) const {
        ImageF out(h_, w_, 1);
        for (std::size_t i = 0; i < pixels(); ++i)
            out.data_[i] = data_[i * c_ + ch];
        return out;
    }
    void set_channel(std::size_t ch, const ImageF &plane) {
        for (std::size_t i = 0; i < pixels(); ++i)
            data_[i * c_ + ch] = plane.data_[i];
    }

    /// Rec. 601 luma for colour images; copy for grayscale.
    ImageF luminance() const {
        if (c_ == 1)
            return *this;
        ImageF out(h_, w_, 1);
        for (std::size_t i = 0; i < pixels(); ++i)
            out.data_[i] = 0.299 * data_[3 * i] + 0.587 * data_[3 * i + 1] + 0.114 * data_[3 * i + 2];
        return out;
    }

private:
    std::size_t h_ = 0;
    std::size_t w_ = 0;
    std::size_t c_ = 1;
    std::vector<double> data_;
};

inline void require_same_shape(const ImageF &a, const ImageF &b, const char *what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                    b.shape_string());
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), 8-bit, maxval 255.

namespace detail {

inline void skip_pnm_space(std::istream &in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

inline std::size_t read_pnm_int(std::istream &in, const std::string &path) {
    skip_pnm_space(in);
    long long v = -1;
    if (!(in >> v) || v < 0)
        throw std::runtime_error("read_image: malformed header in " + path);
    return static_cast<std::size_t>(v);
}

} // namespace detail

inline ImageF read_image(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("read_image: cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw std::runtime_error("read_image: " + path.string() + " is not a binary PGM/PPM file");
    const std::size_t channels = magic[1] == '5' ? 1 : 3;
    const std::size_t w = detail::read_pnm_int(in, path.string());
    const std::size_t h = detail::read_pnm_int(in, path.string());
    const std::size_t maxval = detail::read_pnm_int(in, path.string());
    if (maxval != 255)
        throw std::runtime_error("read_image: only maxval 255 is supported (" + path.string() + ")");
    if (w == 0 || h == 0)
        throw std::runtime_error("read_image: empty image in " + path.string());
    in.get(); // single whitespace after maxval
    std::vector<unsigned char> bytes(w * h * channels);
    in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw std::runtime_error("read_image: truncated pixel data in " + path.string());
    ImageF img(h, w, channels);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.data()[i] = bytes[i] / 255.0;
    return img;
}

/// Quantize to 8 bits, rounding half up.
inline unsigned char to_byte(double v) {
    const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<unsigned char>(std::min(255.0, std::floor(scaled + 0.5)));
}

inline void write_image(const std::filesystem::path &path, const ImageF &img) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("write_image: cannot open " + path.string());
    out << (img.channels() == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        bytes[i] = to_byte(img.data()[i]);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw std::runtime_error("write_image: write failed for " + path.string());
}

/// Round-trip through the 8-bit file representation without touching disk.
inline ImageF quantize8(const ImageF &img) {
    ImageF out = img;
    for (double &v : out.data())
        v = to_byte(v) / 255.0;
    return out;
}

} // namespace mor
