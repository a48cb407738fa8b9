#include "c2f/cost.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "c2f/contrastive.hpp"
#include "c2f/rng.hpp"
#include "c2f/schedule.hpp"

namespace c2f {

EncoderConfig reference_image_config() {
  EncoderConfig c;
  c.n_layers = 24;
  c.n_heads = 16;
  c.width = 1024;
  c.mlp_ratio = 4;
  c.patch_size = 16;
  c.max_seq_len = 0;
  c.embed_dim = 768;
  return c;
}

EncoderConfig reference_text_config() {
  EncoderConfig c;
  c.n_layers = 12;
  c.n_heads = 16;  // stated head count (12) does not divide the width; 16 used
  c.width = 1024;
  c.mlp_ratio = 4;
  c.patch_size = 0;
  c.max_seq_len = 16;
  c.embed_dim = 768;
  return c;
}

long long token_count(int h, int w, int p) {
  if (p < 1) throw std::invalid_argument("token_count: patch size must be >= 1");
  if (h % p != 0 || w % p != 0) {
    throw std::invalid_argument("token_count: " + std::to_string(h) + "x" +
                                std::to_string(w) +
                                " not divisible by patch size " +
                                std::to_string(p));
  }
  return static_cast<long long>(h / p) * (w / p);
}

TowerCost tower_forward_flops(const EncoderConfig& cfg, long long seq_len,
                              bool is_image_tower) {
  if (seq_len < 1) {
    throw std::invalid_argument("tower_forward_flops: seq_len must be >= 1");
  }
  const double n = static_cast<double>(seq_len);
  const double w = cfg.width;
  const double layers = cfg.n_layers;
  TowerCost c;
  if (is_image_tower) {
    c.embed_flops = n * (cfg.patch_size * cfg.patch_size * 3.0) * w;
  }
  c.attention_projection_flops = layers * 4.0 * n * w * w;  // q, k, v, o
  c.attention_quadratic_flops = layers * 2.0 * n * n * w;   // scores + apply
  c.mlp_flops = layers * 2.0 * n * w * (w * cfg.mlp_ratio);
  c.norm_activation_flops = layers * n * w;
  c.pool_project_flops = n * w + w * static_cast<double>(cfg.embed_dim);
  return c;
}

CostReport forward_flops(const EncoderConfig& img_cfg,
                         const EncoderConfig& txt_cfg, long long img_seq,
                         long long txt_seq) {
  CostReport r;
  r.image = tower_forward_flops(img_cfg, img_seq, true);
  r.text = tower_forward_flops(txt_cfg, txt_seq, false);
  r.image_tokens = img_seq;
  r.text_tokens = txt_seq;
  return r;
}

double schedule_cost(const ScheduleConfig& schedule,
                     const EncoderConfig& img_cfg,
                     const EncoderConfig& txt_cfg, int text_len) {
  double total = 0.0;
  for (const auto& phase : schedule.phases) {
    long long n = token_count(phase.image_size, phase.image_size,
                              img_cfg.patch_size);
    if (phase.mode == PhaseMode::kMask) {
      n = std::llround(phase.keep_ratio * static_cast<double>(n));
      if (n < 1) n = 1;
    }
    const CostReport per_fwd = forward_flops(img_cfg, txt_cfg, n, text_len);
    // 1 forward + backward at 2x forward
    total += static_cast<double>(phase.steps) * phase.batch_size * 3.0 *
             per_fwd.total();
  }
  return total;
}

double scaling_exponent(const EncoderConfig& img_cfg,
                        const std::vector<int>& sizes, CostTerm which) {
  if (sizes.size() < 2) {
    throw std::invalid_argument(
        "scaling_exponent: need at least 2 sizes, got " +
        std::to_string(sizes.size()));
  }
  int max_size = sizes[0];
  for (int s : sizes) max_size = std::max(max_size, s);
  std::vector<double> xs, ys;
  for (int s : sizes) {
    const long long n = token_count(s, s, img_cfg.patch_size);
    const TowerCost c = tower_forward_flops(img_cfg, n, true);
    double f = 0.0;
    switch (which) {
      case CostTerm::kAttentionOnly:
        f = c.attention_quadratic_flops;
        break;
      case CostTerm::kLinearOnly:
        // every term exactly proportional to N
        f = c.attention_projection_flops + c.mlp_flops + c.embed_flops +
            c.norm_activation_flops;
        break;
      case CostTerm::kTotal:
        f = c.total();
        break;
    }
    xs.push_back(std::log(static_cast<double>(s) / max_size));  // log(1/r)
    ys.push_back(std::log(f));
  }
  // least squares slope
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= xs.size();
  my /= ys.size();
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

StepTimeStats measured_step_time(const EncoderConfig& img_cfg,
                                 const EncoderConfig& txt_cfg, int image_size,
                                 int batch, int n_trials, uint64_t seed) {
  DualEncoder model(img_cfg, txt_cfg, image_size, vocab_size(), seed);
  Rng rng(mix64(seed ^ 0xabcdef));
  ImageBatch imgs;
  imgs.batch = batch;
  imgs.height = imgs.width = image_size;
  imgs.pixels.resize(static_cast<size_t>(batch) * image_size * image_size * 3);
  for (auto& v : imgs.pixels) v = rng.next_double();
  std::vector<Caption> caps(batch);
  for (auto& c : caps) {
    c.tokens.assign(static_cast<size_t>(txt_cfg.max_seq_len), 0);
    c.true_length = txt_cfg.max_seq_len;
    for (auto& t : c.tokens) {
      t = 2 + static_cast<int>(rng.next_below(
                  static_cast<uint64_t>(vocab_size() - 2)));
    }
  }

  StepTimeStats stats;
  for (int i = 0; i < n_trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor p = model.image.encode(imgs);
    Tensor q = model.text.encode(caps);
    Tensor loss = info_nce(p, q, model.log_inv_tau);
    backward(loss);
    const auto t1 = std::chrono::steady_clock::now();
    stats.samples_ms.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
    for (const auto& [name, t] : model.params()) {
      Tensor tt = t;
      tt.zero_grad();
    }
  }
  std::vector<double> sorted = stats.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (sorted.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double f = pos - lo;
    return sorted[lo] * (1.0 - f) + sorted[hi] * f;
  };
  stats.median_ms = quantile(0.5);
  stats.iqr_ms = quantile(0.75) - quantile(0.25);
  return stats;
}

}  // namespace c2f
