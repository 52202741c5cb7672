#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "amao/error.hpp"

namespace amao {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Row-major 8-bit image of a binary. Pixels past payload_len are zero padding.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
    std::size_t payload_len = 0;

    std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    bool operator==(const GrayImage&) const = default;
};

class WidthPolicy {
public:
    struct Bucket {
        std::size_t max_bytes;
        std::size_t width;
    };

    static WidthPolicy fixed(std::size_t width);
    // Ascending (max_bytes, width) pairs; inputs past the last threshold use
    // `overflow_width`.
    static WidthPolicy size_table(std::vector<Bucket> table, std::size_t overflow_width);
    static WidthPolicy default_table();

    std::size_t width_for(std::size_t n_bytes) const;

    bool is_fixed() const { return fixed_width_ != 0; }
    const std::vector<Bucket>& table() const { return table_; }
    std::size_t overflow_width() const { return overflow_width_; }
    std::size_t fixed_width() const { return fixed_width_; }

private:
    WidthPolicy() = default;

    std::size_t fixed_width_ = 0;
    std::vector<Bucket> table_;
    std::size_t overflow_width_ = 0;
};

GrayImage bytes_to_image(ByteView data, const WidthPolicy& policy);
Bytes image_to_bytes(const GrayImage& img);

// Binary PGM (P5) for eyeballing; CSV is one image row per line.
void write_pgm(const GrayImage& img, std::ostream& out);
void write_pixel_csv(const GrayImage& img, std::ostream& out);

} // namespace amao
