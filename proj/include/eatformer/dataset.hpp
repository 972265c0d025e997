#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "eatformer/tensor.hpp"

namespace eatformer {

/// Labeled 8-bit image container.
///
/// File layout (little endian): magic "EATD" | u32 version | u16 channels |
/// u16 height | u16 width | u32 count | count records of
/// (u16 label | channels*height*width u8 pixels).
struct Dataset {
  std::int64_t channels = 0, height = 0, width = 0;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> pixels;  // contiguous, one image after another

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_bytes() const { return channels * height * width; }

  /// Seeded 10-class blob dataset: each class owns a blob center on a circle
  /// and a distinct color; samples add center jitter and pixel noise.
  static Dataset synthetic(std::int64_t classes = 10, std::int64_t per_class = 20,
                           std::int64_t hw = 32, std::uint64_t seed = 0) {
    Dataset d;
    d.channels = 3;
    d.height = hw;
    d.width = hw;
    Rng rng(seed);
    const double cx0 = static_cast<double>(hw) / 2.0;
    for (std::int64_t k = 0; k < classes; ++k) {
      const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(k) /
                           static_cast<double>(classes);
      const double cy = cx0 + 0.3 * hw * std::sin(angle);
      const double cx = cx0 + 0.3 * hw * std::cos(angle);
      const double col[3] = {0.5 + 0.5 * std::sin(angle * 2.0 + 0.7),
                             0.5 + 0.5 * std::cos(angle * 3.0),
                             0.5 + 0.5 * std::sin(angle + 2.1)};
      for (std::int64_t s = 0; s < per_class; ++s) {
        const double jy = cy + rng.uniform(-1.5, 1.5);
        const double jx = cx + rng.uniform(-1.5, 1.5);
        const double sigma = 0.09 * hw;
        d.labels.push_back(static_cast<std::uint16_t>(k));
        for (std::int64_t c = 0; c < 3; ++c)
          for (std::int64_t y = 0; y < hw; ++y)
            for (std::int64_t x = 0; x < hw; ++x) {
              const double r2 = (y - jy) * (y - jy) + (x - jx) * (x - jx);
              double v = col[c] * std::exp(-r2 / (2.0 * sigma * sigma));
              v += rng.uniform(-0.03, 0.03);
              v = std::min(1.0, std::max(0.0, v));
              d.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
      }
    }
    return d;
  }

  /// Images normalized to [0, 1] doubles: [n, C, H, W] for the given indices.
  Tensor batch_images(const std::vector<std::int64_t>& indices) const {
    const std::int64_t n = static_cast<std::int64_t>(indices.size());
    const std::int64_t ib = image_bytes();
    std::vector<double> data(static_cast<std::size_t>(n * ib));
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint8_t* src = pixels.data() + indices[i] * ib;
      double* dst = data.data() + i * ib;
      for (std::int64_t j = 0; j < ib; ++j) dst[j] = static_cast<double>(src[j]) / 255.0;
    }
    return Tensor::from({n, channels, height, width}, std::move(data));
  }

  std::vector<std::int64_t> batch_labels(const std::vector<std::int64_t>& indices) const {
    std::vector<std::int64_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(static_cast<std::int64_t>(labels[i]));
    return out;
  }

  void save(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os.good()) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
      os.write("EATD", 4);
      auto w32 = [&](std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); };
      auto w16 = [&](std::uint16_t v) { os.write(reinterpret_cast<char*>(&v), 2); };
      w32(1);
      w16(static_cast<std::uint16_t>(channels));
      w16(static_cast<std::uint16_t>(height));
      w16(static_cast<std::uint16_t>(width));
      w32(static_cast<std::uint32_t>(size()));
      for (std::int64_t i = 0; i < size(); ++i) {
        w16(labels[i]);
        os.write(reinterpret_cast<const char*>(pixels.data() + i * image_bytes()),
                 static_cast<std::streamsize>(image_bytes()));
      }
      if (!os.good()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
  }

  static Dataset load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("cannot open dataset '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EATD", 4) != 0)
      throw std::runtime_error("bad dataset magic in '" + path + "'");
    auto r32 = [&]() {
      std::uint32_t v;
      is.read(reinterpret_cast<char*>(&v), 4);
      return v;
    };
    auto r16 = [&]() {
      std::uint16_t v;
      is.read(reinterpret_cast<char*>(&v), 2);
      return v;
    };
    const std::uint32_t version = r32();
    if (version != 1)
      throw std::runtime_error("unsupported dataset version " + std::to_string(version));
    Dataset d;
    d.channels = r16();
    d.height = r16();
    d.width = r16();
    const std::uint32_t count = r32();
    if (!is) throw std::runtime_error("dataset header truncated in '" + path + "'");
    d.labels.reserve(count);
    d.pixels.resize(static_cast<std::size_t>(count) * d.image_bytes());
    for (std::uint32_t i = 0; i < count; ++i) {
      d.labels.push_back(r16());
      is.read(reinterpret_cast<char*>(d.pixels.data() + i * d.image_bytes()),
              static_cast<std::streamsize>(d.image_bytes()));
      if (!is) throw std::runtime_error("dataset truncated in record " + std::to_string(i));
    }
    return d;
  }
};

}  // namespace eatformer
