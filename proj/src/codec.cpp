#include "amao/codec.hpp"

#include <algorithm>
#include <ostream>

namespace amao {

WidthPolicy WidthPolicy::fixed(std::size_t width)
{
    if (width == 0)
        throw CodecError("width must be positive");
    WidthPolicy p;
    p.fixed_width_ = width;
    return p;
}

WidthPolicy WidthPolicy::size_table(std::vector<Bucket> table, std::size_t overflow_width)
{
    if (overflow_width == 0)
        throw CodecError("width must be positive");
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (table[i].width == 0)
            throw CodecError("width must be positive");
        if (i > 0 && table[i].max_bytes <= table[i - 1].max_bytes)
            throw CodecError("size-table thresholds must be strictly increasing");
    }
    WidthPolicy p;
    p.table_ = std::move(table);
    p.overflow_width_ = overflow_width;
    return p;
}

WidthPolicy WidthPolicy::default_table()
{
    constexpr std::size_t KiB = 1024;
    return size_table({{10 * KiB, 32}, {30 * KiB, 64}, {60 * KiB, 128}, {100 * KiB, 256}, {200 * KiB, 384}},
                      512);
}

std::size_t WidthPolicy::width_for(std::size_t n_bytes) const
{
    if (fixed_width_ != 0)
        return fixed_width_;
    for (const auto& b : table_)
        if (n_bytes <= b.max_bytes)
            return b.width;
    return overflow_width_;
}

GrayImage bytes_to_image(ByteView data, const WidthPolicy& policy)
{
    if (data.empty())
        throw CodecError("empty binary");
    GrayImage img;
    img.width = policy.width_for(data.size());
    img.height = (data.size() + img.width - 1) / img.width;
    img.payload_len = data.size();
    img.pixels.assign(img.width * img.height, 0);
    std::copy(data.begin(), data.end(), img.pixels.begin());
    return img;
}

Bytes image_to_bytes(const GrayImage& img)
{
    if (img.pixels.size() != img.width * img.height || img.payload_len > img.pixels.size())
        throw CodecError("malformed image");
    return Bytes(img.pixels.begin(), img.pixels.begin() + static_cast<std::ptrdiff_t>(img.payload_len));
}

void write_pgm(const GrayImage& img, std::ostream& out)
{
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

void write_pixel_csv(const GrayImage& img, std::ostream& out)
{
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            if (c)
                out << ',';
            out << static_cast<int>(img.at(r, c));
        }
        out << '\n';
    }
}

} // namespace amao
