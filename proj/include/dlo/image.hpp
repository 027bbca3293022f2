#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>
#include <vector>

#include <png.h>

#include "dlo/error.hpp"
#include "dlo/heightgrid.hpp"

namespace dlo {

/// Row-major 8-bit raster, one or three channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * channels];
  }
};

/// Grayscale rendering of the valid cell means, normalized min-max over the
/// valid cells (a grid with zero height range renders valid cells white).
/// Invalid cells are black. When `selection` is given the image is RGB and
/// the selected cells are painted pure green. Pixel (u, v) is cell (u, v).
inline Image grid_image(const HeightGrid& g, const SelectedCells* selection = nullptr) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int v = 0; v < g.rows(); ++v)
    for (int u = 0; u < g.cols(); ++u)
      if (g.valid(u, v)) {
        lo = std::min(lo, g.mean(u, v));
        hi = std::max(hi, g.mean(u, v));
      }

  Image img;
  img.width = g.cols();
  img.height = g.rows();
  img.channels = selection ? 3 : 1;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * img.channels, 0);
  for (int v = 0; v < g.rows(); ++v)
    for (int u = 0; u < g.cols(); ++u) {
      if (!g.valid(u, v)) continue;
      const double range = hi - lo;
      const double level = range > 0.0 ? (g.mean(u, v) - lo) / range : 1.0;
      const auto gray = static_cast<std::uint8_t>(std::lround(255.0 * level));
      auto* px = &img.pixels[(static_cast<std::size_t>(v) * img.width + u) * img.channels];
      for (int c = 0; c < img.channels; ++c) px[c] = gray;
    }
  if (selection) {
    for (const auto& s : *selection) {
      auto* px = &img.pixels[(static_cast<std::size_t>(s.cell.v) * img.width + s.cell.u) * 3];
      px[0] = 0;
      px[1] = 255;
      px[2] = 0;
    }
  }
  return img;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error(ErrorCode::kIoError, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoError, "PNG encoding failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.pixels[y * stride]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error(ErrorCode::kIoError, "cannot read PNG " + path.string());
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.channels = color ? 3 : 1;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::kIoError, "PNG decode failed for " + path.string());
  }
  return img;
}

inline void render_grid_image(const HeightGrid& g, const SelectedCells* selection,
                              const std::filesystem::path& path) {
  write_png(grid_image(g, selection), path);
}

}  // namespace dlo
