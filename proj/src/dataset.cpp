#include "zhoi/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "zhoi/errors.hpp"

namespace zhoi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

unsigned char quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open image " + path.string());
  const std::string magic = header_token(in);
  if (magic != "P6" && magic != "P5") throw ValidationError(path.string() + ": not a binary PPM/PGM");
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(in));
    h = std::stoul(header_token(in));
    maxval = std::stoul(header_token(in));
  } catch (const std::exception&) {
    throw ValidationError(path.string() + ": bad image header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw ValidationError(path.string() + ": unsupported image dimensions or depth");
  }
  std::vector<unsigned char> raw(w * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ValidationError(path.string() + ": truncated image");

  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = channels == 3 ? c : 0;
        img.at(c, y, x) = raw[(y * w + x) * channels + src] / static_cast<double>(maxval);
      }
    }
  }
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw ValidationError("write_ppm expects 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.width * image.height * 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) raw[(y * image.width + x) * 3 + c] = quantize(image.at(c, y, x));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const fs::path& path, const std::vector<double>& values, std::size_t height,
               std::size_t width) {
  if (values.size() != height * width) throw ValidationError("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> raw(values.size());
  std::transform(values.begin(), values.end(), raw.begin(), quantize);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Image resize_nearest(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(image.channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(image.height - 1, y * image.height / height);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(image.width - 1, x * image.width / width);
      for (std::size_t c = 0; c < image.channels; ++c) out.at(c, y, x) = image.at(c, sy, sx);
    }
  }
  return out;
}

namespace {

geometry::CornerBox read_box(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("bbox must be [x1, y1, x2, y2]");
  geometry::CornerBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.x1 <= b.x2 && b.y1 <= b.y2)) throw ValidationError("bbox corners out of order");
  return b;
}

std::string id_string(const json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }

}  // namespace

Dataset load_annotations(const fs::path& json_path, const fs::path& image_dir, std::size_t target_size) {
  std::ifstream in(json_path);
  if (!in) throw RuntimeFailure("cannot open annotations " + json_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }

  Dataset ds;
  std::map<std::string, std::size_t> index;
  try {
    for (const auto& im : doc.at("images")) {
      Sample s;
      s.id = id_string(im.at("id"));
      s.width_px = im.at("width").get<double>();
      s.height_px = im.at("height").get<double>();
      s.file = im.value("file", s.id + ".ppm");
      if (s.width_px <= 0 || s.height_px <= 0) throw ValidationError("image " + s.id + " has no size");
      if (!index.emplace(s.id, ds.samples.size()).second) throw ValidationError("duplicate image id " + s.id);
      ds.samples.push_back(std::move(s));
    }
    for (const auto& an : doc.at("annotations")) {
      const std::string id = id_string(an.at("image_id"));
      auto it = index.find(id);
      if (it == index.end()) throw ValidationError("annotation references unknown image " + id);
      Sample& s = ds.samples[it->second];
      PairAnnotation p;
      p.human = geometry::normalize_pixel_box(read_box(an.at("h_bbox")), s.width_px, s.height_px);
      p.object = geometry::normalize_pixel_box(read_box(an.at("o_bbox")), s.width_px, s.height_px);
      p.object_id = an.at("object_id").get<std::size_t>();
      p.verb_ids = an.at("verb_ids").get<std::vector<std::size_t>>();
      s.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }

  if (!image_dir.empty()) {
    for (auto& s : ds.samples) {
      s.image = resize_nearest(read_ppm(image_dir / s.file), target_size, target_size);
    }
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  json images = json::array();
  json annotations = json::array();
  for (const auto& s : dataset.samples) {
    const double w = s.width_px > 0 ? s.width_px : static_cast<double>(s.image.width);
    const double h = s.height_px > 0 ? s.height_px : static_cast<double>(s.image.height);
    const std::string file = s.file.empty() ? s.id + ".ppm" : s.file;
    images.push_back({{"id", s.id}, {"width", w}, {"height", h}, {"file", file}});
    for (const auto& p : s.pairs) {
      annotations.push_back({{"image_id", s.id},
                             {"h_bbox", {p.human.x1 * w, p.human.y1 * h, p.human.x2 * w, p.human.y2 * h}},
                             {"o_bbox", {p.object.x1 * w, p.object.y1 * h, p.object.x2 * w, p.object.y2 * h}},
                             {"object_id", p.object_id},
                             {"verb_ids", p.verb_ids}});
    }
    if (!s.image.pixels.empty()) write_ppm(dir / "images" / file, s.image);
  }
  std::ofstream out(dir / "annotations.json");
  if (!out) throw RuntimeFailure("cannot write annotations in " + dir.string());
  out << json{{"images", images}, {"annotations", annotations}}.dump(1) << '\n';
}

}  // namespace zhoi
