#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "zhoi/dataset.hpp"
#include "zhoi/geometry.hpp"
#include "zhoi/matrix.hpp"

namespace zhoi {

/// Spatial feature map stored token-major: values is (height*width) x channels,
/// token index y*width + x.
struct FeatureGrid {
  Matrix values;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 1;  // input pixels per cell
  std::size_t channels() const { return values.cols(); }
};

struct BackboneConfig {
  std::size_t channels = 64;
  std::size_t stride = 8;
  std::size_t pool = 2;  // each cell is summarized by pool x pool sub-cell colour means
  std::uint64_t seed = 1;
  double init_scale = 1.0;  // 0 gives the zero-initialized stub
};

/// Fixed, seeded stand-in for a convolutional backbone: every stride x stride
/// patch is mean-pooled to pool x pool x 3 values and linearly projected.
class BackboneStub {
 public:
  explicit BackboneStub(BackboneConfig cfg);
  FeatureGrid operator()(const Image& image) const;
  const BackboneConfig& config() const { return cfg_; }
  const Matrix& projection() const { return proj_; }

 private:
  BackboneConfig cfg_;
  Matrix proj_;  // (pool*pool*3) x channels
};

/// Bilinear sampling weights that map a grid's tokens to out x out samples
/// taken at the centers of an even partition of `box`. Shape (out*out) x (H*W).
Matrix roi_align_weights(std::size_t grid_h, std::size_t grid_w, const geometry::CornerBox& box,
                         std::size_t out = 7);
FeatureGrid roi_align(const FeatureGrid& grid, const geometry::CornerBox& box, std::size_t out = 7);

struct ClipVisualConfig {
  std::size_t dim = 512;
  std::size_t patch = 32;
  std::size_t pool = 4;
  std::uint64_t seed = 2;
};

struct SpatialTokens {
  Matrix tokens;  // rows = (padded H / patch) * (padded W / patch)
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
  std::string layer = "stub:pooled-projection";
};

/// Stand-in for CLIP's spatial patch tokens: zero-pads to a multiple of the
/// patch, mean-pools each patch to pool x pool x 3 and applies a seeded
/// Gaussian projection scaled by 1/sqrt(fan_in).
class ClipVisualStub {
 public:
  explicit ClipVisualStub(ClipVisualConfig cfg);
  SpatialTokens operator()(const Image& image) const;
  const ClipVisualConfig& config() const { return cfg_; }
  const Matrix& projection() const { return proj_; }

 private:
  ClipVisualConfig cfg_;
  Matrix proj_;
};

enum class TextMode { Hash, Compositional, External };
std::string_view to_string(TextMode m);
TextMode parse_text_mode(std::string_view s);

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual TextMode mode() const = 0;
  /// Unit-norm embedding of a non-empty prompt.
  virtual std::vector<double> embed(std::string_view prompt) const = 0;
};

/// Seeded pseudo-embedding: state = fnv1a64(prompt) ^ seed; draw dim standard
/// normals from Rng(state) and L2-normalize.
class HashTextEmbedder final : public TextEmbedder {
 public:
  HashTextEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  TextMode mode() const override { return TextMode::Hash; }
  std::vector<double> embed(std::string_view prompt) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Embedding with explicit verb and object structure:
/// [verb one-hot (A) | object one-hot (C) | noise (dim - A - C)], normalized.
/// The noise block is a hash embedding of the prompt scaled to `noise_norm`.
class CompositionalTextEmbedder final : public TextEmbedder {
 public:
  CompositionalTextEmbedder(std::vector<std::string> verbs, std::vector<std::string> objects,
                            std::size_t dim, std::uint64_t seed, double noise_norm = 0.1);
  std::size_t dim() const override { return dim_; }
  TextMode mode() const override { return TextMode::Compositional; }
  std::vector<double> embed(std::string_view prompt) const override;

  std::size_t verb_offset() const { return 0; }
  std::size_t object_offset() const { return verbs_.size(); }
  std::size_t noise_offset() const { return verbs_.size() + objects_.size(); }

 private:
  std::vector<std::string> verbs_;    // as they appear in prompts (spaces)
  std::vector<std::string> objects_;
  std::size_t dim_;
  std::uint64_t seed_;
  double noise_norm_;
};

/// Precomputed embeddings: `dir/index.json` maps prompt -> file name of a
/// 1-D (or 1 x dim) little-endian float32/float64 .npy array in `dir`.
class ExternalTextEmbedder final : public TextEmbedder {
 public:
  explicit ExternalTextEmbedder(const std::filesystem::path& dir);
  std::size_t dim() const override { return dim_; }
  TextMode mode() const override { return TextMode::External; }
  std::vector<double> embed(std::string_view prompt) const override;

 private:
  std::map<std::string, std::vector<double>, std::less<>> table_;
  std::size_t dim_ = 0;
};

/// Reads a 1-D or 2-D .npy array (float32 or float64, C order).
Matrix read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const Matrix& m);

struct TextEmbedderConfig {
  TextMode mode = TextMode::Compositional;
  std::size_t dim = 512;
  std::uint64_t seed = 3;
  double noise_norm = 0.1;
  std::filesystem::path external_dir;
};

std::unique_ptr<TextEmbedder> make_text_embedder(const TextEmbedderConfig& cfg,
                                                 const std::vector<std::string>& verbs,
                                                 const std::vector<std::string>& objects);

void l2_normalize(std::vector<double>& v);

}  // namespace zhoi
