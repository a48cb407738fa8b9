#include "c2f/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "c2f/rng.hpp"

namespace c2f {

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> v = {"circle", "square", "triangle",
                                             "cross"};
  return v;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> v = {
      "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "white"};
  return v;
}

namespace {

const double kPalette[kNumColors][3] = {
    {1.0, 0.15, 0.15},  // red
    {0.15, 0.9, 0.2},   // green
    {0.2, 0.35, 1.0},   // blue
    {1.0, 0.95, 0.2},   // yellow
    {0.95, 0.2, 0.95},  // magenta
    {0.2, 0.9, 0.95},   // cyan
    {1.0, 0.55, 0.1},   // orange
    {1.0, 1.0, 1.0},    // white
};

}  // namespace

const std::vector<std::string>& quadrant_names() {
  static const std::vector<std::string> v = {"top-left", "top-right",
                                             "bottom-left", "bottom-right"};
  return v;
}

SceneSpec SceneSpec::from_seed(uint64_t seed) {
  Rng rng(mix64(seed ^ 0xc2f0c2f0c2f0c2f0ULL));
  SceneSpec spec;
  spec.seed = seed;
  const int n = 1 + static_cast<int>(rng.next_below(3));
  auto quads = rng.permutation(kNumQuadrants);
  quads.resize(n);
  std::sort(quads.begin(), quads.end());
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = static_cast<int>(rng.next_below(kNumShapes));
    o.color = static_cast<int>(rng.next_below(kNumColors));
    o.size = static_cast<int>(rng.next_below(2));
    o.quadrant = static_cast<int>(quads[i]);
    spec.objects.push_back(o);
  }
  return spec;
}

std::string SceneSpec::caption() const {
  std::string out;
  for (size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    if (i) out += " and ";
    out += (o.size == 1 ? "large " : "small ");
    out += color_names()[o.color] + " " + shape_names()[o.shape] + " " +
           quadrant_names()[o.quadrant];
  }
  return out;
}

ImageBatch render_scene(const SceneSpec& spec, int canvas) {
  if (canvas < 32 || canvas % 16 != 0) {
    throw std::invalid_argument("render_scene: canvas must be >= 32 and a "
                                "multiple of 16, got " +
                                std::to_string(canvas));
  }
  ImageBatch img;
  img.batch = 1;
  img.height = img.width = canvas;
  img.pixels.assign(static_cast<size_t>(canvas) * canvas * 3, 0.0);

  const double half = canvas / 2.0;
  for (const auto& o : spec.objects) {
    const double cx = (o.quadrant % 2 == 0 ? 0.5 : 1.5) * half;
    const double cy = (o.quadrant / 2 == 0 ? 0.5 : 1.5) * half;
    const double radius = (o.size == 1 ? 0.35 : 0.18) * half;
    const double* rgb = kPalette[o.color];
    const int y0 = std::max(0, static_cast<int>(cy - radius) - 1);
    const int y1 = std::min(canvas - 1, static_cast<int>(cy + radius) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - radius) - 1);
    const int x1 = std::min(canvas - 1, static_cast<int>(cx + radius) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        bool inside = false;
        switch (o.shape) {
          case 0:  // circle
            inside = dx * dx + dy * dy <= radius * radius;
            break;
          case 1:  // square
            inside = std::abs(dx) <= radius && std::abs(dy) <= radius;
            break;
          case 2:  // upward triangle
            inside = dy >= -radius && dy <= radius &&
                     std::abs(dx) <= (dy + radius) * 0.5;
            break;
          case 3:  // plus-shaped cross
            inside = (std::abs(dx) <= radius / 3.0 && std::abs(dy) <= radius) ||
                     (std::abs(dy) <= radius / 3.0 && std::abs(dx) <= radius);
            break;
        }
        if (inside) {
          for (int c = 0; c < 3; ++c) img.at(0, y, x, c) = rgb[c];
        }
      }
    }
  }
  return img;
}

ImageBatch downsample(const ImageBatch& img, double r) {
  if (r <= 0.0) throw std::invalid_argument("downsample: r must be positive");
  if (r == 1.0) return img;
  const double f = r;
  if (f != std::floor(f)) {
    throw std::invalid_argument("downsample: non-integer factor " +
                                std::to_string(r) + " is not supported");
  }
  const int fi = static_cast<int>(f);
  if (img.height % fi != 0 || img.width % fi != 0) {
    throw std::invalid_argument(
        "downsample: " + std::to_string(img.height) + "x" +
        std::to_string(img.width) + " is not divisible by r=" +
        std::to_string(fi));
  }
  ImageBatch out;
  out.batch = img.batch;
  out.height = img.height / fi;
  out.width = img.width / fi;
  out.pixels.assign(
      static_cast<size_t>(out.batch) * out.height * out.width * 3, 0.0);
  const double inv = 1.0 / (static_cast<double>(fi) * fi);
  for (int b = 0; b < img.batch; ++b) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (int dy = 0; dy < fi; ++dy) {
            for (int dx = 0; dx < fi; ++dx) {
              s += img.at(b, y * fi + dy, x * fi + dx, c);
            }
          }
          out.at(b, y, x, c) = s * inv;
        }
      }
    }
  }
  return out;
}

ImageBatch nearest_upsample(const ImageBatch& img, int r) {
  if (r < 1) throw std::invalid_argument("nearest_upsample: r must be >= 1");
  if (r == 1) return img;
  ImageBatch out;
  out.batch = img.batch;
  out.height = img.height * r;
  out.width = img.width * r;
  out.pixels.resize(static_cast<size_t>(out.batch) * out.height * out.width *
                    3);
  for (int b = 0; b < img.batch; ++b) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          out.at(b, y, x, c) = img.at(b, y / r, x / r, c);
        }
      }
    }
  }
  return out;
}

double pixel_correlation(const ImageBatch& a, const ImageBatch& b) {
  if (a.pixels.size() != b.pixels.size()) {
    throw std::invalid_argument("pixel_correlation: size mismatch");
  }
  const size_t n = a.pixels.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.pixels[i] - ma;
    const double db = b.pixels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ----- tokenizer -------------------------------------------------------------

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = {
      "<pad>", "<unk>",
      // scene grammar
      "small", "large", "and",
      "red", "green", "blue", "yellow", "magenta", "cyan", "orange", "white",
      "circle", "square", "triangle", "cross",
      "top-left", "top-right", "bottom-left", "bottom-right",
      // prompt templates and general filler
      "a", "an", "the", "photo", "image", "picture", "drawing", "of", "at",
      "in", "on", "is", "this", "shows", "with", "contains", "scene",
      "background", "black", "object", "objects", "shape", "shapes", "color",
      "colored", "bright", "dark", "one", "two", "three", "next", "to",
      "above", "below", "left", "right", "top", "bottom", "near", "there",
      "are", "tiny", "big"};
  return v;
}

int vocab_size() { return static_cast<int>(vocabulary().size()); }

namespace {

const std::unordered_map<std::string, int>& vocab_index() {
  static const std::unordered_map<std::string, int> m = [] {
    std::unordered_map<std::string, int> idx;
    const auto& v = vocabulary();
    for (int i = 0; i < static_cast<int>(v.size()); ++i) idx[v[i]] = i;
    return idx;
  }();
  return m;
}

}  // namespace

Caption tokenize(const std::string& text, int max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  Caption cap;
  cap.text = text;
  cap.tokens.assign(static_cast<size_t>(max_len), kPadToken);
  std::istringstream ss(text);
  std::string word;
  int n = 0;
  const auto& idx = vocab_index();
  while (ss >> word && n < max_len) {
    auto it = idx.find(word);
    cap.tokens[n++] = it != idx.end() ? it->second : kUnkToken;
  }
  cap.true_length = n;
  return cap;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string out;
  const auto& v = vocabulary();
  for (int t : tokens) {
    if (t == kPadToken) continue;
    if (t < 0 || t >= vocab_size()) {
      throw std::invalid_argument("detokenize: token id out of range");
    }
    if (!out.empty()) out += " ";
    out += v[t];
  }
  return out;
}

// ----- pairs / dataset -------------------------------------------------------

Pair generate_pair(uint64_t seed, int canvas, int max_text_len) {
  const SceneSpec spec = SceneSpec::from_seed(seed);
  Pair p;
  p.seed = seed;
  p.image = render_scene(spec, canvas);
  p.caption = tokenize(spec.caption(), max_text_len);
  return p;
}

uint64_t Dataset::train_seed(uint64_t seed0, int i) {
  return (seed0 << 32) + static_cast<uint64_t>(i);
}

uint64_t Dataset::eval_seed(uint64_t seed0, int i) {
  return (seed0 << 32) + (1ULL << 31) + static_cast<uint64_t>(i);
}

Dataset::Dataset(int n_train, int n_eval, int canvas, uint64_t seed0,
                 int max_text_len)
    : canvas_(canvas), max_text_len_(max_text_len), seed0_(seed0) {
  if (n_train < 0 || n_eval < 0 || n_train + n_eval < 1) {
    throw std::invalid_argument("Dataset: need at least one pair");
  }
  train_.reserve(n_train);
  for (int i = 0; i < n_train; ++i) {
    train_.push_back(generate_pair(train_seed(seed0, i), canvas, max_text_len));
  }
  eval_.reserve(n_eval);
  for (int i = 0; i < n_eval; ++i) {
    eval_.push_back(generate_pair(eval_seed(seed0, i), canvas, max_text_len));
  }
}

std::vector<size_t> Dataset::epoch_order(int epoch) const {
  Rng rng(mix64(seed0_ * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch)));
  return rng.permutation(train_.size());
}

// ----- on-disk format --------------------------------------------------------

void write_tensor_file(const std::string& path, const std::vector<int>& shape,
                       const std::vector<double>& data) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("write_tensor_file: rank must be 1..4");
  }
  size_t n = 1;
  for (int d : shape) {
    if (d < 1 || d > 65535) {
      throw std::invalid_argument("write_tensor_file: dim out of range");
    }
    n *= static_cast<size_t>(d);
  }
  if (n != data.size()) {
    throw std::invalid_argument("write_tensor_file: shape/data mismatch");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_tensor_file: cannot open " + path);
  unsigned char header[16] = {0};
  std::memcpy(header, "C2FT", 4);
  header[4] = 1;  // float64 LE
  header[5] = static_cast<unsigned char>(shape.size());
  for (size_t i = 0; i < shape.size(); ++i) {
    const uint16_t d = static_cast<uint16_t>(shape[i]);
    header[8 + 2 * i] = static_cast<unsigned char>(d & 0xff);
    header[9 + 2 * i] = static_cast<unsigned char>(d >> 8);
  }
  f.write(reinterpret_cast<const char*>(header), 16);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("write_tensor_file: write failed: " + path);
}

std::pair<std::vector<int>, std::vector<double>> read_tensor_file(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_tensor_file: cannot open " + path);
  unsigned char header[16];
  f.read(reinterpret_cast<char*>(header), 16);
  if (!f || std::memcmp(header, "C2FT", 4) != 0) {
    throw std::runtime_error("read_tensor_file: bad magic in " + path);
  }
  if (header[4] != 1) {
    throw std::runtime_error("read_tensor_file: unsupported dtype code");
  }
  const int rank = header[5];
  if (rank < 1 || rank > 4) {
    throw std::runtime_error("read_tensor_file: bad rank");
  }
  std::vector<int> shape(rank);
  size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    shape[i] = header[8 + 2 * i] | (header[9 + 2 * i] << 8);
    n *= static_cast<size_t>(shape[i]);
  }
  std::vector<double> data(n);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("read_tensor_file: truncated file " + path);
  return {std::move(shape), std::move(data)};
}

void write_dataset(const std::string& out_dir, int n, int canvas,
                   uint64_t seed0, int max_text_len) {
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < n; ++i) {
    const Pair p = generate_pair(Dataset::train_seed(seed0, i), canvas,
                                 max_text_len);
    char name[32];
    std::snprintf(name, sizeof(name), "img%05d.c2ft", i);
    write_tensor_file(out_dir + "/" + name, {canvas, canvas, 3},
                      p.image.pixels);
    std::snprintf(name, sizeof(name), "cap%05d.txt", i);
    std::ofstream cap(out_dir + "/" + name);
    cap << p.caption.text << "\n";
    if (!cap) throw std::runtime_error("write_dataset: caption write failed");
  }
}

}  // namespace c2f
