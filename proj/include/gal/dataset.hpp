#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gal/error.hpp"
#include "gal/matrix.hpp"
#include "gal/rng.hpp"

namespace gal {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

struct Provenance {
  std::string source;         // "mnist", "cifar10", "synthetic", ...
  std::string normalization;  // pixel mapping applied
  std::string preprocessing;  // resampling / color handling
};

struct Dataset {
  Matrix images;  // M × 784, pixels in [-1, 1]
  std::vector<std::uint16_t> labels;
  std::size_t classes = 10;
  Provenance provenance;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Batch {
  Matrix x;
  std::vector<std::uint16_t> y;
  std::vector<std::size_t> indices;  // rows of the parent dataset
};

// Throws data errors when labels/images disagree or a pixel leaves [-1, 1].
inline void validate(const Dataset& ds) {
  if (ds.images.rows() != ds.labels.size()) {
    throw Error(ErrorKind::data, "dataset has " + std::to_string(ds.images.rows()) +
                                     " images but " + std::to_string(ds.labels.size()) +
                                     " labels");
  }
  for (auto y : ds.labels) {
    if (y >= ds.classes) {
      throw Error(ErrorKind::data, "label " + std::to_string(y) + " outside [0, " +
                                       std::to_string(ds.classes) + ")");
    }
  }
  for (double p : ds.images.flat()) {
    if (!(p >= -1.0 && p <= 1.0)) {
      throw Error(ErrorKind::data, "pixel value outside [-1, 1]");
    }
  }
}

inline double normalize_pixel(double byte_value) { return byte_value / 127.5 - 1.0; }

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                               const std::string& what) {
  if (offset + 4 > bytes.size()) {
    throw Error(ErrorKind::parse, what + ": truncated header at byte offset " +
                                      std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Parses an in-memory IDX image/label pair.
inline Dataset parse_mnist_idx(std::span<const std::uint8_t> images,
                               std::span<const std::uint8_t> labels) {
  const auto img_magic = detail::read_be32(images, 0, "images");
  if (img_magic != kIdxImagesMagic) {
    throw Error(ErrorKind::parse, "images: bad IDX magic at byte offset 0");
  }
  const auto lbl_magic = detail::read_be32(labels, 0, "labels");
  if (lbl_magic != kIdxLabelsMagic) {
    throw Error(ErrorKind::parse, "labels: bad IDX magic at byte offset 0");
  }
  const std::size_t count = detail::read_be32(images, 4, "images");
  const std::size_t rows = detail::read_be32(images, 8, "images");
  const std::size_t cols = detail::read_be32(images, 12, "images");
  if (rows * cols != kImagePixels) {
    throw Error(ErrorKind::parse, "images: expected 28x28 at byte offset 8, got " +
                                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t label_count = detail::read_be32(labels, 4, "labels");
  if (label_count != count) {
    throw Error(ErrorKind::parse, "labels: count " + std::to_string(label_count) +
                                      " at byte offset 4 does not match image count " +
                                      std::to_string(count));
  }
  constexpr std::size_t kImgHeader = 16;
  constexpr std::size_t kLblHeader = 8;
  if (images.size() < kImgHeader + count * kImagePixels) {
    throw Error(ErrorKind::parse, "images: truncated payload at byte offset " +
                                      std::to_string(images.size()));
  }
  if (labels.size() < kLblHeader + count) {
    throw Error(ErrorKind::parse, "labels: truncated payload at byte offset " +
                                      std::to_string(labels.size()));
  }

  Dataset ds;
  ds.classes = 10;
  ds.images = Matrix(count, kImagePixels);
  auto px = ds.images.flat();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = normalize_pixel(images[kImgHeader + i]);
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto y = labels[kLblHeader + i];
    if (y >= 10) {
      throw Error(ErrorKind::parse, "labels: value " + std::to_string(y) +
                                        " at byte offset " + std::to_string(kLblHeader + i));
    }
    ds.labels[i] = y;
  }
  ds.provenance = {"mnist", "u8/127.5-1", "none"};
  return ds;
}

inline Dataset load_mnist_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  return parse_mnist_idx(images, labels);
}

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

// BT.601 luminance, then corner-aligned bilinear 32→28, then [-1, 1].
inline std::array<double, kImagePixels> cifar_record_to_gray(
    std::span<const std::uint8_t, kCifarRecord - 1> rgb) {
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  std::array<double, plane> gray{};
  for (std::size_t i = 0; i < plane; ++i) {
    gray[i] = 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i];
  }
  std::array<double, kImagePixels> out{};
  const double scale = static_cast<double>(kCifarSide - 1) / (kImageSide - 1);
  for (std::size_t r = 0; r < kImageSide; ++r) {
    const double sy = r * scale;
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(sy), kCifarSide - 2);
    const double fy = sy - y0;
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double sx = c * scale;
      const std::size_t x0 =
          std::min<std::size_t>(static_cast<std::size_t>(sx), kCifarSide - 2);
      const double fx = sx - x0;
      const double top = (1 - fx) * gray[y0 * kCifarSide + x0] + fx * gray[y0 * kCifarSide + x0 + 1];
      const double bottom = (1 - fx) * gray[(y0 + 1) * kCifarSide + x0] +
                            fx * gray[(y0 + 1) * kCifarSide + x0 + 1];
      const double v = (1 - fy) * top + fy * bottom;
      out[r * kImageSide + c] = std::clamp(normalize_pixel(v), -1.0, 1.0);
    }
  }
  return out;
}

inline Dataset parse_cifar10_gray(std::span<const std::span<const std::uint8_t>> batches) {
  std::size_t total = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (batches[b].size() % kCifarRecord != 0) {
      throw Error(ErrorKind::parse,
                  "cifar batch " + std::to_string(b) + ": size " +
                      std::to_string(batches[b].size()) + " is not a multiple of 3073; " +
                      "truncated record at byte offset " +
                      std::to_string(batches[b].size() - batches[b].size() % kCifarRecord));
    }
    total += batches[b].size() / kCifarRecord;
  }
  Dataset ds;
  ds.classes = 10;
  ds.images = Matrix(total, kImagePixels);
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto bytes = batches[b];
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord, ++row) {
      const auto label = bytes[off];
      if (label >= 10) {
        throw Error(ErrorKind::parse, "cifar batch " + std::to_string(b) + ": label " +
                                          std::to_string(label) + " at byte offset " +
                                          std::to_string(off));
      }
      ds.labels.push_back(label);
      const auto gray = cifar_record_to_gray(
          std::span<const std::uint8_t, kCifarRecord - 1>(bytes.data() + off + 1,
                                                          kCifarRecord - 1));
      std::copy(gray.begin(), gray.end(), ds.images.row(row).begin());
    }
  }
  ds.provenance = {"cifar10", "u8/127.5-1", "gray:bt601;resize:bilinear-corner-32to28"};
  return ds;
}

inline Dataset load_cifar10_gray(std::span<const std::filesystem::path> paths) {
  std::vector<std::vector<std::uint8_t>> raw;
  raw.reserve(paths.size());
  for (const auto& p : paths) raw.push_back(detail::read_file(p));
  std::vector<std::span<const std::uint8_t>> views(raw.begin(), raw.end());
  return parse_cifar10_gray(views);
}

// First `count` samples (or all when count is 0 or exceeds the size).
inline Dataset head(const Dataset& ds, std::size_t count) {
  if (count == 0 || count >= ds.size()) return ds;
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Dataset out;
  out.images = gather_rows(ds.images, idx);
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<long>(count));
  out.classes = ds.classes;
  out.provenance = ds.provenance;
  out.provenance.preprocessing += ";head:" + std::to_string(count);
  return out;
}

// Subset keeping samples whose label is in `keep`.
inline Dataset filter_classes(const Dataset& ds, std::span<const std::uint16_t> keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (std::find(keep.begin(), keep.end(), ds.labels[i]) != keep.end()) idx.push_back(i);
  Dataset out;
  out.images = gather_rows(ds.images, idx);
  for (auto i : idx) out.labels.push_back(ds.labels[i]);
  out.classes = ds.classes;
  out.provenance = ds.provenance;
  return out;
}

enum class BatchOrder { shuffled, stratified };

// Index plan for one epoch. Shuffled: a single Fisher–Yates permutation cut
// into consecutive runs, final short batch kept. Stratified: each class is
// shuffled separately and dealt round-robin so every batch mixes classes.
inline std::vector<std::vector<std::size_t>> batch_plan(
    std::span<const std::uint16_t> labels, std::size_t batch_size, Rng& rng,
    BatchOrder order = BatchOrder::shuffled) {
  if (batch_size < 2) {
    throw Error(ErrorKind::config, "batch_size must be >= 2, got " + std::to_string(batch_size));
  }
  const std::size_t m = labels.size();
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (order == BatchOrder::shuffled) {
    rng.shuffle(std::span<std::size_t>(perm));
  } else {
    std::map<std::uint16_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m; ++i) by_class[labels[i]].push_back(i);
    for (auto& [_, members] : by_class) rng.shuffle(std::span<std::size_t>(members));
    perm.clear();
    std::vector<std::size_t> cursor(by_class.size(), 0);
    while (perm.size() < m) {
      std::size_t k = 0;
      for (auto& [_, members] : by_class) {
        if (cursor[k] < members.size()) perm.push_back(members[cursor[k]++]);
        ++k;
      }
    }
  }
  std::vector<std::vector<std::size_t>> plan;
  for (std::size_t start = 0; start < m; start += batch_size) {
    const std::size_t end = std::min(m, start + batch_size);
    plan.emplace_back(perm.begin() + static_cast<long>(start), perm.begin() + static_cast<long>(end));
  }
  return plan;
}

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.x = gather_rows(ds.images, indices);
  b.y.reserve(indices.size());
  for (auto i : indices) b.y.push_back(ds.labels[i]);
  b.indices.assign(indices.begin(), indices.end());
  return b;
}

// One epoch worth of batches.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, Rng& rng,
                                  BatchOrder order = BatchOrder::shuffled) {
  std::vector<Batch> out;
  for (const auto& idx : batch_plan(ds.labels, batch_size, rng, order))
    out.push_back(make_batch(ds, idx));
  return out;
}

}  // namespace gal
