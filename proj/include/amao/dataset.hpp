#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "amao/codec.hpp"

namespace amao {

// Pixel values (0..255) on a square side x side grid, row-major.
using Canvas = std::vector<double>;

struct LabeledSample {
    std::string id;
    Bytes bytes;
    GrayImage image;
    int label = 0;
    std::string source; // template id or ingest path
};

LabeledSample make_sample(std::string id, Bytes bytes, int label, std::string source, const WidthPolicy& policy);

// Zero-pads bottom/right when the image is smaller than `side` and takes the
// centered window when it is larger.
Canvas to_canvas(const GrayImage& img, std::size_t side);

// Row/column offset of the centered crop window for one dimension.
std::size_t crop_offset(std::size_t extent, std::size_t side);

// Canvas cells that hold bytes [begin, end) of a width-`width` layout; cells
// cropped away are skipped.
std::vector<double> byte_range_mask(std::size_t begin, std::size_t end, std::size_t width, std::size_t height,
                                    std::size_t side);

} // namespace amao
