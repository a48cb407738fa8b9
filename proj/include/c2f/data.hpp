#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c2f {

// ----- synthetic scenes -----------------------------------------------------

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 8;
inline constexpr int kNumQuadrants = 4;

const std::vector<std::string>& shape_names();
const std::vector<std::string>& color_names();
const std::vector<std::string>& quadrant_names();  // top-left, top-right, ...

struct SceneObject {
  int shape;     // index into shape_names()
  int color;     // index into color_names()
  int size;      // 0 = small, 1 = large
  int quadrant;  // index into quadrant_names()
};

// 1-3 objects, no two in the same quadrant, fully determined by the seed.
struct SceneSpec {
  uint64_t seed = 0;
  std::vector<SceneObject> objects;

  static SceneSpec from_seed(uint64_t seed);
  // Compact enumeration, e.g.
  // "large red circle top-left and small blue square bottom-right".
  // Objects are listed in quadrant order, so distinct scenes never share
  // a caption.
  std::string caption() const;
};

// ----- images ---------------------------------------------------------------

struct ImageBatch {
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // B x H x W x 3, row-major, values in [0,1]

  size_t pixel_count() const { return pixels.size(); }
  double& at(int b, int y, int x, int c) {
    return pixels[((static_cast<size_t>(b) * height + y) * width + x) * 3 + c];
  }
  double at(int b, int y, int x, int c) const {
    return pixels[((static_cast<size_t>(b) * height + y) * width + x) * 3 + c];
  }
};

// Rasterizes the scene on a black background. canvas must be >= 32 and a
// multiple of 16.
ImageBatch render_scene(const SceneSpec& spec, int canvas);

// Box-filter (area average) downsampling by an integer factor r.
// r = 1 returns the input unchanged.
ImageBatch downsample(const ImageBatch& img, double r);

// Nearest-neighbor upsampling by an integer factor (structure-analysis aid).
ImageBatch nearest_upsample(const ImageBatch& img, int r);

// Pearson correlation over all pixels of two equally sized batches.
double pixel_correlation(const ImageBatch& a, const ImageBatch& b);

// ----- captions / tokenizer -------------------------------------------------

struct Caption {
  std::string text;
  std::vector<int> tokens;  // length max_len, padded with 0
  int true_length = 0;
};

inline constexpr int kPadToken = 0;
inline constexpr int kUnkToken = 1;

const std::vector<std::string>& vocabulary();
int vocab_size();

Caption tokenize(const std::string& text, int max_len);
std::string detokenize(const std::vector<int>& tokens);

// ----- pairs / dataset ------------------------------------------------------

struct Pair {
  uint64_t seed;
  ImageBatch image;  // single image at canvas resolution
  Caption caption;
};

Pair generate_pair(uint64_t seed, int canvas, int max_text_len);

// Deterministic corpus with disjoint train/eval seed ranges.
class Dataset {
 public:
  Dataset(int n_train, int n_eval, int canvas, uint64_t seed0,
          int max_text_len);

  int train_size() const { return static_cast<int>(train_.size()); }
  int eval_size() const { return static_cast<int>(eval_.size()); }
  int canvas() const { return canvas_; }
  int max_text_len() const { return max_text_len_; }
  const Pair& train_pair(int i) const { return train_[i]; }
  const Pair& eval_pair(int i) const { return eval_[i]; }

  // Shuffled index order for one epoch; deterministic in (seed0, epoch).
  std::vector<size_t> epoch_order(int epoch) const;

  static uint64_t train_seed(uint64_t seed0, int i);
  static uint64_t eval_seed(uint64_t seed0, int i);

 private:
  int canvas_;
  int max_text_len_;
  uint64_t seed0_;
  std::vector<Pair> train_;
  std::vector<Pair> eval_;
};

// ----- on-disk format -------------------------------------------------------
// Binary tensor files carry a 16-byte header:
//   bytes 0-3   magic "C2FT"
//   byte  4     dtype code (1 = float64 little-endian)
//   byte  5     rank (1..4)
//   bytes 6-7   reserved (0)
//   bytes 8-15  four uint16 dims (unused trailing dims are 0)
// followed by the row-major payload.

void write_tensor_file(const std::string& path, const std::vector<int>& shape,
                       const std::vector<double>& data);
std::pair<std::vector<int>, std::vector<double>> read_tensor_file(
    const std::string& path);

// Writes n pairs (imgNNNNN.c2ft + capNNNNN.txt) under out_dir.
void write_dataset(const std::string& out_dir, int n, int canvas,
                   uint64_t seed0, int max_text_len);

}  // namespace c2f
