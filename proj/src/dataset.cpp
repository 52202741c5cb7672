#include "amao/dataset.hpp"

namespace amao {

LabeledSample make_sample(std::string id, Bytes bytes, int label, std::string source, const WidthPolicy& policy)
{
    LabeledSample s;
    s.id = std::move(id);
    s.image = bytes_to_image(bytes, policy);
    s.bytes = std::move(bytes);
    s.label = label;
    s.source = std::move(source);
    return s;
}

std::size_t crop_offset(std::size_t extent, std::size_t side)
{
    return extent > side ? (extent - side) / 2 : 0;
}

Canvas to_canvas(const GrayImage& img, std::size_t side)
{
    Canvas c(side * side, 0.0);
    const std::size_t r0 = crop_offset(img.height, side);
    const std::size_t c0 = crop_offset(img.width, side);
    const std::size_t rows = std::min(side, img.height);
    const std::size_t cols = std::min(side, img.width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t col = 0; col < cols; ++col)
            c[r * side + col] = img.at(r0 + r, c0 + col);
    return c;
}

std::vector<double> byte_range_mask(std::size_t begin, std::size_t end, std::size_t width, std::size_t height,
                                    std::size_t side)
{
    std::vector<double> m(side * side, 0.0);
    const std::size_t r0 = crop_offset(height, side);
    const std::size_t c0 = crop_offset(width, side);
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t r = i / width, col = i % width;
        if (r < r0 || col < c0 || r - r0 >= side || col - c0 >= side)
            continue;
        m[(r - r0) * side + (col - c0)] = 1.0;
    }
    return m;
}

} // namespace amao
