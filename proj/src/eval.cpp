#include "c2f/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace c2f {

namespace {

// rank of the true match (1-based) for each query against the gallery
std::vector<int> match_ranks(const Tensor& queries, const Tensor& gallery) {
  const int n = queries.dim(0), d = queries.dim(1);
  std::vector<int> ranks(n);
  for (int i = 0; i < n; ++i) {
    const double* qi = queries.data().data() + static_cast<size_t>(i) * d;
    std::vector<double> sims(n);
    for (int j = 0; j < n; ++j) {
      const double* gj = gallery.data().data() + static_cast<size_t>(j) * d;
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += qi[k] * gj[k];
      sims[j] = s;
    }
    // rank of entry i with ties broken by lower index
    int rank = 1;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (sims[j] > sims[i] || (sims[j] == sims[i] && j < i)) ++rank;
    }
    ranks[i] = rank;
  }
  return ranks;
}

}  // namespace

RetrievalMetrics retrieval_recall(const Tensor& img_embs,
                                  const Tensor& txt_embs,
                                  const std::vector<int>& ks) {
  if (img_embs.ndim() != 2 || txt_embs.ndim() != 2 ||
      img_embs.shape() != txt_embs.shape()) {
    throw std::invalid_argument("retrieval_recall: embedding shape mismatch");
  }
  const int n = img_embs.dim(0);
  RetrievalMetrics m;
  m.n_queries = n;
  const auto ranks_i2t = match_ranks(img_embs, txt_embs);
  const auto ranks_t2i = match_ranks(txt_embs, img_embs);
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("retrieval_recall: k must be >= 1");
    const int kk = std::min(k, n);  // R@k for k > n reported as R@n
    int hit_i2t = 0, hit_t2i = 0;
    for (int i = 0; i < n; ++i) {
      if (ranks_i2t[i] <= kk) ++hit_i2t;
      if (ranks_t2i[i] <= kk) ++hit_t2i;
    }
    m.r_at_k_i2t[k] = 100.0 * hit_i2t / n;
    m.r_at_k_t2i[k] = 100.0 * hit_t2i / n;
  }
  return m;
}

Tensor embed_class_prompts(
    const TextEncoder& text,
    const std::vector<std::vector<std::string>>& prompt_sets, int max_len) {
  if (prompt_sets.empty()) {
    throw std::invalid_argument("embed_class_prompts: empty class list");
  }
  const int d = text.config().embed_dim;
  const int n_classes = static_cast<int>(prompt_sets.size());
  Tensor out = Tensor::zeros({n_classes, d});
  for (int c = 0; c < n_classes; ++c) {
    if (prompt_sets[c].empty()) {
      throw std::invalid_argument(
          "embed_class_prompts: class " + std::to_string(c) +
          " has no prompts");
    }
    std::vector<Caption> caps;
    caps.reserve(prompt_sets[c].size());
    for (const auto& prompt : prompt_sets[c]) {
      caps.push_back(tokenize(prompt, max_len));
    }
    const Tensor embs = text.encode(caps);
    std::vector<double> mean(d, 0.0);
    for (size_t i = 0; i < caps.size(); ++i) {
      for (int j = 0; j < d; ++j) {
        mean[j] += embs.data()[i * d + j];
      }
    }
    double norm2 = 0.0;
    for (int j = 0; j < d; ++j) {
      mean[j] /= static_cast<double>(caps.size());
      norm2 += mean[j] * mean[j];
    }
    const double inv = 1.0 / std::sqrt(norm2 + 1e-12);
    for (int j = 0; j < d; ++j) {
      out.data()[static_cast<size_t>(c) * d + j] = mean[j] * inv;
    }
  }
  return out;
}

std::vector<int> zero_shot_classify(const Tensor& img_embs,
                                    const Tensor& class_embs) {
  if (img_embs.dim(1) != class_embs.dim(1)) {
    throw std::invalid_argument("zero_shot_classify: embedding dim mismatch");
  }
  const int n = img_embs.dim(0), c = class_embs.dim(0), d = img_embs.dim(1);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    const double* e = img_embs.data().data() + static_cast<size_t>(i) * d;
    int best = 0;
    double best_sim = -2.0;
    for (int j = 0; j < c; ++j) {
      const double* cj = class_embs.data().data() + static_cast<size_t>(j) * d;
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += e[k] * cj[k];
      if (s > best_sim) {  // strict: ties keep the lower class index
        best_sim = s;
        best = j;
      }
    }
    labels[i] = best;
  }
  return labels;
}

double classification_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw std::invalid_argument("classification_accuracy: size mismatch");
  }
  int hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == truth[i]) ++hits;
  }
  return 100.0 * hits / static_cast<double>(predicted.size());
}

ClassProbes make_class_probes(int canvas) {
  ClassProbes probes;
  static const char* templates[] = {"a photo of a %s %s", "a %s %s",
                                    "an image of a %s %s", "this is a %s %s"};
  for (int shape = 0; shape < kNumShapes; ++shape) {
    for (int color = 0; color < kNumColors; ++color) {
      const int cls = shape * kNumColors + color;
      for (int size = 0; size < 2; ++size) {
        for (int quad = 0; quad < kNumQuadrants; ++quad) {
          SceneSpec spec;
          spec.objects.push_back({shape, color, size, quad});
          probes.images.push_back(render_scene(spec, canvas));
          probes.labels.push_back(cls);
        }
      }
      std::vector<std::string> prompts;
      const std::string& cname = color_names()[color];
      const std::string& sname = shape_names()[shape];
      for (const char* tmpl : templates) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), tmpl, cname.c_str(), sname.c_str());
        prompts.emplace_back(buf);
      }
      probes.prompt_sets.push_back(std::move(prompts));
    }
  }
  return probes;
}

double zero_shot_accuracy(const DualEncoder& model, const ClassProbes& probes,
                          int input_size, int max_text_len) {
  const int canvas = probes.images.front().height;
  if (canvas % input_size != 0) {
    throw std::invalid_argument("zero_shot_accuracy: input size must divide "
                                "the probe canvas");
  }
  const double r = static_cast<double>(canvas) / input_size;
  // batch all probes into one ImageBatch at the requested input size
  ImageBatch batch;
  batch.batch = static_cast<int>(probes.images.size());
  batch.height = batch.width = input_size;
  batch.pixels.reserve(static_cast<size_t>(batch.batch) * input_size *
                       input_size * 3);
  for (const auto& img : probes.images) {
    const ImageBatch small = downsample(img, r);
    batch.pixels.insert(batch.pixels.end(), small.pixels.begin(),
                        small.pixels.end());
  }
  const Tensor img_embs = model.image.encode(batch);
  const Tensor class_embs =
      embed_class_prompts(model.text, probes.prompt_sets, max_text_len);
  return classification_accuracy(zero_shot_classify(img_embs, class_embs),
                                 probes.labels);
}

}  // namespace c2f
