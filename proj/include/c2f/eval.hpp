#pragma once

#include <map>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/encoder.hpp"
#include "c2f/tensor.hpp"

namespace c2f {

struct RetrievalMetrics {
  std::map<int, double> r_at_k_i2t;  // percentage, 0..100
  std::map<int, double> r_at_k_t2i;
  int n_queries = 0;
};

// Row i of both matrices is one ground-truth pair. Galleries are ranked by
// cosine similarity, ties broken by lower index; R@k for k > n is reported
// as R@n.
RetrievalMetrics retrieval_recall(const Tensor& img_embs,
                                  const Tensor& txt_embs,
                                  const std::vector<int>& ks);

// Class embedding = L2-normalized mean of the class's prompt embeddings.
Tensor embed_class_prompts(
    const TextEncoder& text,
    const std::vector<std::vector<std::string>>& prompt_sets, int max_len);

// argmax cosine similarity, ties broken by lowest class index.
std::vector<int> zero_shot_classify(const Tensor& img_embs,
                                    const Tensor& class_embs);

double classification_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& truth);

// Canonical single-object probe bench: every (shape, color) class rendered
// at both sizes in all four quadrants (8 images per class, 32 classes).
struct ClassProbes {
  std::vector<ImageBatch> images;  // one image each, canvas resolution
  std::vector<int> labels;         // class = shape * kNumColors + color
  std::vector<std::vector<std::string>> prompt_sets;  // per class
};

ClassProbes make_class_probes(int canvas);

// Convenience: encodes probe images (optionally downsampled to the model's
// input size) and reports zero-shot accuracy.
double zero_shot_accuracy(const DualEncoder& model, const ClassProbes& probes,
                          int input_size, int max_text_len);

}  // namespace c2f
