#include "zhoi/visual_frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "zhoi/errors.hpp"
#include "zhoi/rng.hpp"

namespace zhoi {

namespace fs = std::filesystem;

void l2_normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw ValidationError("cannot normalize a zero vector");
  for (double& x : v) x /= n;
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& x : m.storage()) x = scale * rng.normal();
  return m;
}

// Mean colour of each pool x pool sub-cell of the size x size patch at
// (py, px), zero outside the image; channel-fastest layout.
void pool_patch(const Image& img, std::size_t py, std::size_t px, std::size_t size, std::size_t pool,
                double* out) {
  const std::size_t sub = size / pool;
  const double inv = 1.0 / static_cast<double>(sub * sub);
  for (std::size_t sy = 0; sy < pool; ++sy) {
    for (std::size_t sx = 0; sx < pool; ++sx) {
      double acc[3] = {0, 0, 0};
      for (std::size_t y = py * size + sy * sub; y < py * size + (sy + 1) * sub; ++y) {
        if (y >= img.height) break;
        for (std::size_t x = px * size + sx * sub; x < px * size + (sx + 1) * sub; ++x) {
          if (x >= img.width) break;
          for (std::size_t c = 0; c < 3; ++c) acc[c] += img.at(c, y, x);
        }
      }
      for (std::size_t c = 0; c < 3; ++c) out[(sy * pool + sx) * 3 + c] = acc[c] * inv;
    }
  }
}

}  // namespace

BackboneStub::BackboneStub(BackboneConfig cfg) : cfg_(cfg) {
  if (cfg_.channels == 0 || cfg_.stride == 0 || cfg_.pool == 0 || cfg_.stride % cfg_.pool != 0) {
    throw ValidationError("backbone: stride must be a positive multiple of pool");
  }
  const std::size_t fan_in = cfg_.pool * cfg_.pool * 3;
  proj_ = gaussian(fan_in, cfg_.channels, derive_seed(cfg_.seed, "backbone"),
                   cfg_.init_scale / std::sqrt(static_cast<double>(fan_in)));
}

FeatureGrid BackboneStub::operator()(const Image& image) const {
  if (image.channels != 3) throw ValidationError("backbone expects a 3-channel image");
  if (image.height < 16 || image.width < 16) {
    throw ValidationError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " is smaller than 16x16");
  }
  FeatureGrid g;
  g.height = image.height / cfg_.stride;
  g.width = image.width / cfg_.stride;
  g.stride = cfg_.stride;
  const std::size_t fan_in = proj_.rows();
  Matrix pooled(g.height * g.width, fan_in);
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      pool_patch(image, y, x, cfg_.stride, cfg_.pool, pooled.row(y * g.width + x).data());
    }
  }
  g.values = Matrix(pooled.rows(), cfg_.channels);
  for (std::size_t t = 0; t < pooled.rows(); ++t) {
    for (std::size_t k = 0; k < fan_in; ++k) {
      const double p = pooled(t, k);
      for (std::size_t c = 0; c < cfg_.channels; ++c) g.values(t, c) += p * proj_(k, c);
    }
  }
  return g;
}

Matrix roi_align_weights(std::size_t grid_h, std::size_t grid_w, const geometry::CornerBox& box,
                         std::size_t out) {
  const double bw = box.x2 - box.x1;
  const double bh = box.y2 - box.y1;
  if (!(bw > 0.0 && bh > 0.0) || !std::isfinite(bw) || !std::isfinite(bh)) {
    throw ValidationError("roi_align: degenerate box");
  }
  if (out == 0 || grid_h == 0 || grid_w == 0) throw ValidationError("roi_align: empty grid or output");
  Matrix w(out * out, grid_h * grid_w);
  for (std::size_t i = 0; i < out; ++i) {
    // Cell k of the grid spans [k, k+1) in grid units; its center is k + 0.5.
    const double gy = std::clamp((box.y1 + (i + 0.5) / out * bh) * grid_h - 0.5, 0.0, grid_h - 1.0);
    const auto y0 = static_cast<std::size_t>(std::floor(gy));
    const std::size_t y1 = std::min(y0 + 1, grid_h - 1);
    const double fy = gy - y0;
    for (std::size_t j = 0; j < out; ++j) {
      const double gx = std::clamp((box.x1 + (j + 0.5) / out * bw) * grid_w - 0.5, 0.0, grid_w - 1.0);
      const auto x0 = static_cast<std::size_t>(std::floor(gx));
      const std::size_t x1 = std::min(x0 + 1, grid_w - 1);
      const double fx = gx - x0;
      const std::size_t r = i * out + j;
      w(r, y0 * grid_w + x0) += (1 - fy) * (1 - fx);
      w(r, y0 * grid_w + x1) += (1 - fy) * fx;
      w(r, y1 * grid_w + x0) += fy * (1 - fx);
      w(r, y1 * grid_w + x1) += fy * fx;
    }
  }
  return w;
}

FeatureGrid roi_align(const FeatureGrid& grid, const geometry::CornerBox& box, std::size_t out) {
  const Matrix w = roi_align_weights(grid.height, grid.width, box, out);
  FeatureGrid g;
  g.height = g.width = out;
  g.stride = grid.stride;
  g.values = Matrix(out * out, grid.channels());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t t = 0; t < w.cols(); ++t) {
      const double a = w(r, t);
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < grid.channels(); ++c) g.values(r, c) += a * grid.values(t, c);
    }
  }
  return g;
}

ClipVisualStub::ClipVisualStub(ClipVisualConfig cfg) : cfg_(cfg) {
  if (cfg_.dim == 0 || cfg_.patch == 0 || cfg_.pool == 0 || cfg_.patch % cfg_.pool != 0) {
    throw ValidationError("clip stub: patch must be a positive multiple of pool");
  }
  const std::size_t fan_in = cfg_.pool * cfg_.pool * 3;
  proj_ = gaussian(fan_in, cfg_.dim, derive_seed(cfg_.seed, "clip-visual"),
                   1.0 / std::sqrt(static_cast<double>(fan_in)));
}

SpatialTokens ClipVisualStub::operator()(const Image& image) const {
  if (image.channels != 3 || image.height == 0 || image.width == 0) {
    throw ValidationError("clip stub expects a non-empty 3-channel image");
  }
  SpatialTokens out;
  const std::size_t p = cfg_.patch;
  out.grid_h = (image.height + p - 1) / p;
  out.grid_w = (image.width + p - 1) / p;
  out.pad_bottom = out.grid_h * p - image.height;
  out.pad_right = out.grid_w * p - image.width;
  const std::size_t fan_in = proj_.rows();
  std::vector<double> pooled(fan_in);
  out.tokens = Matrix(out.grid_h * out.grid_w, cfg_.dim);
  for (std::size_t y = 0; y < out.grid_h; ++y) {
    for (std::size_t x = 0; x < out.grid_w; ++x) {
      pool_patch(image, y, x, p, cfg_.pool, pooled.data());
      auto row = out.tokens.row(y * out.grid_w + x);
      for (std::size_t k = 0; k < fan_in; ++k) {
        for (std::size_t c = 0; c < cfg_.dim; ++c) row[c] += pooled[k] * proj_(k, c);
      }
    }
  }
  return out;
}

std::string_view to_string(TextMode m) {
  switch (m) {
    case TextMode::Hash: return "hash";
    case TextMode::Compositional: return "compositional";
    case TextMode::External: return "external";
  }
  return "hash";
}

TextMode parse_text_mode(std::string_view s) {
  if (s == "hash" || s == "hash_stub") return TextMode::Hash;
  if (s == "compositional" || s == "compositional_stub") return TextMode::Compositional;
  if (s == "external") return TextMode::External;
  throw ValidationError("unknown text embedder mode '" + std::string(s) + "'");
}

std::vector<double> HashTextEmbedder::embed(std::string_view prompt) const {
  if (prompt.empty()) throw ValidationError("empty prompt");
  Rng rng(fnv1a64(prompt) ^ seed_);
  std::vector<double> v(dim_);
  for (auto& x : v) x = rng.normal();
  l2_normalize(v);
  return v;
}

namespace {

std::string spaced(std::string s) {
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::ptrdiff_t find_name(const std::vector<std::string>& names, std::string_view s) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == s) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

// "a X" / "an X" -> X
std::string_view strip_article(std::string_view s) {
  if (s.starts_with("an ")) return s.substr(3);
  if (s.starts_with("a ")) return s.substr(2);
  return {};
}

}  // namespace

CompositionalTextEmbedder::CompositionalTextEmbedder(std::vector<std::string> verbs,
                                                     std::vector<std::string> objects, std::size_t dim,
                                                     std::uint64_t seed, double noise_norm)
    : dim_(dim), seed_(seed), noise_norm_(noise_norm) {
  for (auto& v : verbs) verbs_.push_back(spaced(v));
  for (auto& o : objects) objects_.push_back(spaced(o));
  if (verbs_.size() + objects_.size() > dim_) {
    throw ValidationError("compositional embedder needs dim >= verbs + objects (" +
                          std::to_string(verbs_.size() + objects_.size()) + ")");
  }
}

std::vector<double> CompositionalTextEmbedder::embed(std::string_view prompt) const {
  if (prompt.empty()) throw ValidationError("empty prompt");
  constexpr std::string_view kHoi = "A photo of a person ";
  constexpr std::string_view kObj = "A photo of ";
  std::ptrdiff_t verb = -1, object = -1;
  if (prompt.starts_with(kHoi)) {
    const std::string_view rest = prompt.substr(kHoi.size());
    // Longest verb first so "hold" never shadows "hold up"-style names.
    std::size_t best = 0;
    for (std::size_t v = 0; v < verbs_.size(); ++v) {
      const auto& name = verbs_[v];
      if (name.size() >= best && rest.size() > name.size() && rest.starts_with(name) && rest[name.size()] == ' ') {
        const auto o = find_name(objects_, strip_article(rest.substr(name.size() + 1)));
        if (o >= 0) {
          verb = static_cast<std::ptrdiff_t>(v);
          object = o;
          best = name.size();
        }
      }
    }
  }
  if (object < 0 && prompt.starts_with(kObj)) {
    object = find_name(objects_, strip_article(prompt.substr(kObj.size())));
  }
  if (object < 0) {
    throw ValidationError("compositional embedder: prompt names no known verb/object: '" + std::string(prompt) + "'");
  }

  std::vector<double> v(dim_, 0.0);
  if (verb >= 0) v[static_cast<std::size_t>(verb)] = 1.0;
  v[object_offset() + static_cast<std::size_t>(object)] = 1.0;
  const std::size_t noise_dim = dim_ - noise_offset();
  if (noise_dim > 0 && noise_norm_ > 0.0) {
    Rng rng(fnv1a64(prompt) ^ seed_);
    std::vector<double> noise(noise_dim);
    for (auto& x : noise) x = rng.normal();
    l2_normalize(noise);
    for (std::size_t i = 0; i < noise_dim; ++i) v[noise_offset() + i] = noise_norm_ * noise[i];
  }
  l2_normalize(v);
  return v;
}

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Matrix read_npy(const fs::path& path) {
  const std::string raw = read_all(path);
  if (raw.size() < 10 || raw.compare(0, 6, "\x93NUMPY") != 0) throw ValidationError(path.string() + ": not a .npy file");
  const int major = static_cast<unsigned char>(raw[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(raw[8]) | (static_cast<unsigned char>(raw[9]) << 8);
    offset = 10;
  } else {
    if (raw.size() < 12) throw ValidationError(path.string() + ": truncated header");
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::size_t>(static_cast<unsigned char>(raw[8 + i])) << (8 * i);
    offset = 12;
  }
  if (offset + header_len > raw.size()) throw ValidationError(path.string() + ": truncated header");
  const std::string header = raw.substr(offset, header_len);
  const std::size_t data_at = offset + header_len;

  auto field = [&](const std::string& key) {
    const auto k = header.find("'" + key + "'");
    if (k == std::string::npos) throw ValidationError(path.string() + ": header lacks " + key);
    return header.substr(header.find(':', k) + 1);
  };
  const std::string descr = field("descr");
  std::size_t width = 0;
  if (descr.find("<f8") != std::string::npos) width = 8;
  else if (descr.find("<f4") != std::string::npos) width = 4;
  else throw ValidationError(path.string() + ": only little-endian float32/float64 supported");
  if (field("fortran_order").find_first_not_of(' ') == field("fortran_order").find("True")) {
    throw ValidationError(path.string() + ": fortran order unsupported");
  }
  const std::string shape_s = field("shape");
  const std::string dims = shape_s.substr(shape_s.find('(') + 1, shape_s.find(')') - shape_s.find('(') - 1);
  std::vector<std::size_t> shape;
  std::size_t pos = 0;
  while (pos < dims.size()) {
    const auto comma = dims.find(',', pos);
    const std::string tok = dims.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok.find_first_of("0123456789") != std::string::npos) shape.push_back(std::stoul(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (shape.empty() || shape.size() > 2) throw ValidationError(path.string() + ": expected a 1-D or 2-D array");
  const std::size_t rows = shape.size() == 2 ? shape[0] : 1;
  const std::size_t cols = shape.back();
  if (data_at + rows * cols * width > raw.size()) throw ValidationError(path.string() + ": truncated data");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    if (width == 8) {
      std::memcpy(&m[i], raw.data() + data_at + 8 * i, 8);
    } else {
      float f;
      std::memcpy(&f, raw.data() + data_at + 4 * i, 4);
      m[i] = f;
    }
  }
  return m;
}

void write_npy(const fs::path& path, const Matrix& m) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  while ((10 + header.size() + 1) % 64 != 0) header.push_back(' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char lb[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(lb, 2);
  out << header;
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

ExternalTextEmbedder::ExternalTextEmbedder(const fs::path& dir) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_all(dir / "index.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "index.json").string() + ": " + e.what());
  }
  if (!index.is_object() || index.empty()) throw ValidationError("external embeddings index must be a non-empty object");
  for (const auto& [prompt, file] : index.items()) {
    Matrix m = read_npy(dir / file.get<std::string>());
    if (m.rows() != 1) throw ValidationError("external embedding for '" + prompt + "' is not a vector");
    if (dim_ == 0) dim_ = m.cols();
    if (m.cols() != dim_) throw ValidationError("external embeddings disagree on dimension");
    std::vector<double> v(m.storage());
    l2_normalize(v);
    table_.emplace(prompt, std::move(v));
  }
}

std::vector<double> ExternalTextEmbedder::embed(std::string_view prompt) const {
  auto it = table_.find(prompt);
  if (it == table_.end()) throw ValidationError("no external embedding for prompt '" + std::string(prompt) + "'");
  return it->second;
}

std::unique_ptr<TextEmbedder> make_text_embedder(const TextEmbedderConfig& cfg,
                                                 const std::vector<std::string>& verbs,
                                                 const std::vector<std::string>& objects) {
  switch (cfg.mode) {
    case TextMode::Hash: return std::make_unique<HashTextEmbedder>(cfg.dim, cfg.seed);
    case TextMode::Compositional:
      return std::make_unique<CompositionalTextEmbedder>(verbs, objects, cfg.dim, cfg.seed, cfg.noise_norm);
    case TextMode::External: {
      auto e = std::make_unique<ExternalTextEmbedder>(cfg.external_dir);
      if (e->dim() != cfg.dim) {
        throw ValidationError("external embeddings have dim " + std::to_string(e->dim()) + ", config says " +
                              std::to_string(cfg.dim));
      }
      return e;
    }
  }
  throw ValidationError("bad text mode");
}

}  // namespace zhoi
