#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "zhoi/geometry.hpp"

namespace zhoi {

/// Planar float image, channel-major (c, y, x), values nominally in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

/// One annotated human-object pair; boxes are normalized corner boxes.
struct PairAnnotation {
  geometry::CornerBox human;
  geometry::CornerBox object;
  std::size_t object_id = 0;
  std::vector<std::size_t> verb_ids;
  bool operator==(const PairAnnotation&) const = default;
};

struct Sample {
  std::string id;
  std::string file;
  double width_px = 0;
  double height_px = 0;
  Image image;
  std::vector<PairAnnotation> pairs;
};

struct Dataset {
  std::vector<Sample> samples;
};

/// Binary PPM (P6, 8-bit) round trip. Values are clamped and quantized.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
/// Grayscale PGM (P5) from a row-major height x width array in [0, 1].
void write_pgm(const std::filesystem::path& path, const std::vector<double>& values,
               std::size_t height, std::size_t width);

/// Nearest-neighbour resample to a fixed size (the model works on one size).
Image resize_nearest(const Image& image, std::size_t height, std::size_t width);

/// Loads the HICO-DET-like annotation document
///   {images:[{id,width,height,file}],
///    annotations:[{image_id,h_bbox[x1,y1,x2,y2],o_bbox,object_id,verb_ids[]}]}
/// Pixel boxes are normalized by the image size. When `image_dir` is
/// non-empty, images are read (PPM) and resized to `target_size`.
Dataset load_annotations(const std::filesystem::path& json_path,
                         const std::filesystem::path& image_dir, std::size_t target_size);

/// Writes annotations.json (pixel boxes) and images/<id>.ppm under `dir`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace zhoi
