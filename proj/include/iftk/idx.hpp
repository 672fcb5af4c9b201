#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "iftk/dataset.hpp"

namespace iftk {

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw std::runtime_error("idx: truncated header in " + path);
    return (std::uint32_t{buf[0]} << 24) | (std::uint32_t{buf[1]} << 16) |
           (std::uint32_t{buf[2]} << 8) | std::uint32_t{buf[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Read an image/label pair in the standard IDX encoding (big-endian header,
/// one unsigned byte per pixel/label). Pixels are scaled to [0,1] and rows
/// flattened row-major. The result is truncated to `max_items` preserving
/// file order.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int max_items) {
    require(max_items > 0, "load_idx: max_items must be positive (empty dataset forbidden)");

    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw std::runtime_error("idx: cannot open " + images_path);
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw std::runtime_error("idx: cannot open " + labels_path);

    const std::uint32_t images_magic = detail::read_be_u32(images, images_path);
    if (images_magic != kIdxImagesMagic) {
        throw std::runtime_error("idx: bad magic in images file " + images_path);
    }
    const std::uint32_t image_count = detail::read_be_u32(images, images_path);
    const std::uint32_t rows = detail::read_be_u32(images, images_path);
    const std::uint32_t cols = detail::read_be_u32(images, images_path);

    const std::uint32_t labels_magic = detail::read_be_u32(labels, labels_path);
    if (labels_magic != kIdxLabelsMagic) {
        throw std::runtime_error("idx: bad magic in labels file " + labels_path);
    }
    const std::uint32_t label_count = detail::read_be_u32(labels, labels_path);
    if (image_count != label_count) {
        throw std::runtime_error("idx: count mismatch between " + images_path + " (" +
                                 std::to_string(image_count) + ") and " + labels_path +
                                 " (" + std::to_string(label_count) + ")");
    }

    const std::uint32_t take =
        std::min(image_count, static_cast<std::uint32_t>(max_items));
    const std::size_t pixels = std::size_t{rows} * cols;

    Dataset ds;
    ds.name = "idx";
    ds.feature_dim = static_cast<int>(pixels);
    ds.num_classes = 0;  // grown below

    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < take; ++i) {
        images.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(pixels));
        if (!images) throw std::runtime_error("idx: truncated payload in " + images_path);
        int label = labels.get();
        if (label == std::char_traits<char>::eof()) {
            throw std::runtime_error("idx: truncated payload in " + labels_path);
        }

        Example ex;
        ex.label = label;
        ex.features = Vector(static_cast<Eigen::Index>(pixels));
        for (std::size_t j = 0; j < pixels; ++j) {
            ex.features[static_cast<Eigen::Index>(j)] = static_cast<double>(buf[j]) / 255.0;
        }
        ds.num_classes = std::max(ds.num_classes, label + 1);
        ds.examples.push_back(std::move(ex));
    }
    ds.num_classes = std::max(ds.num_classes, 2);
    ds.validate();
    return ds;
}

}  // namespace iftk
