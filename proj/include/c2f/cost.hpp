#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2f/encoder.hpp"

namespace c2f {

struct ScheduleConfig;  // schedule.hpp

// FLOP accounting convention, pinned so the numbers are auditable:
//  - one multiply-accumulate counts as ONE flop (the convention used when
//    transformer papers quote per-forward GFLOPs);
//  - backward counts as 2x forward;
//  - softmax / layer norm / activation work is folded in at N*width per
//    layer; pooling and the final projection are counted, pointwise
//    residual adds are not.

// Per-forward breakdown for one tower at a given sequence length.
struct TowerCost {
  double embed_flops = 0;                 // patch or token embedding
  double attention_quadratic_flops = 0;   // scores + weighted sum, ~N^2 * w
  double attention_projection_flops = 0;  // q/k/v/o projections, ~N * w^2
  double mlp_flops = 0;                   // ~N * w^2 * mlp_ratio
  double norm_activation_flops = 0;       // small N * w terms
  double pool_project_flops = 0;

  double total() const {
    return embed_flops + attention_quadratic_flops +
           attention_projection_flops + mlp_flops + norm_activation_flops +
           pool_project_flops;
  }
};

struct CostReport {
  TowerCost image;
  TowerCost text;
  long long image_tokens = 0;
  long long text_tokens = 0;

  double total() const { return image.total() + text.total(); }
};

// Reference towers from the full-scale recipe (ViT-L/16 image tower and the
// 12-layer text tower); used to reproduce the published per-forward GFLOPs.
EncoderConfig reference_image_config();
EncoderConfig reference_text_config();

// N = h*w / p^2, exact integer arithmetic.
long long token_count(int h, int w, int p);

TowerCost tower_forward_flops(const EncoderConfig& cfg, long long seq_len,
                              bool is_image_tower);

CostReport forward_flops(const EncoderConfig& img_cfg,
                         const EncoderConfig& txt_cfg, long long img_seq,
                         long long txt_seq);

// Total training FLOPs for a schedule: sum over phases of
// steps * batch * 3 * forward (1 forward + 2x-forward backward).
// Mask-mode phases are charged at their kept sequence length.
double schedule_cost(const ScheduleConfig& schedule,
                     const EncoderConfig& img_cfg,
                     const EncoderConfig& txt_cfg, int text_len);

enum class CostTerm { kAttentionOnly, kLinearOnly, kTotal };

// Least-squares slope of log(image-tower flops) vs log(1/r) over the given
// image sizes (r relative to the largest size).
double scaling_exponent(const EncoderConfig& img_cfg,
                        const std::vector<int>& sizes, CostTerm which);

struct StepTimeStats {
  double median_ms = 0;
  double iqr_ms = 0;
  std::vector<double> samples_ms;
};

// Wall-clock of one forward+backward training step at the given size,
// measured n_trials times on the calling thread.
StepTimeStats measured_step_time(const EncoderConfig& img_cfg,
                                 const EncoderConfig& txt_cfg, int image_size,
                                 int batch, int n_trials, uint64_t seed);

}  // namespace c2f
