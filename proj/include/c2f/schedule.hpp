#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/encoder.hpp"
#include "c2f/optim.hpp"

namespace c2f {

enum class PhaseMode { kResize, kMask };

// One training stage: fixed image size, batch size, and a warmup-then-
// linear-decay LR shape.
struct Phase {
  int image_size = 32;   // model input size (resize mode) or full size (mask)
  int batch_size = 32;
  int steps = 3000;
  double peak_lr = 3e-3;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  PhaseMode mode = PhaseMode::kResize;
  double keep_ratio = 1.0;  // mask mode only

  void validate(int patch_size) const;
};

struct ScheduleConfig {
  std::string name;
  std::vector<Phase> phases;
  uint64_t seed = 0;
  int eval_every = 500;
};

// Linear ramp 0 -> peak over warmup_steps, then linear decay peak -> 0 at
// phase end.
double lr_at(int step, const Phase& phase);

// Desk-scale knobs shared by all presets.
struct PresetParams {
  int high_res = 32;     // full resolution (canvas size)
  int low_res = 8;       // main-phase size for the coarse-to-fine presets
  int batch = 32;
  int main_steps = 1800;
  int finetune_steps = 180;
  int warmup_main = 60;
  int warmup_finetune = 30;
  double peak_lr = 3e-3;
  double finetune_lr = 3e-4;  // mirrors the 10x LR drop of the recipe
  double weight_decay = 0.01;
};

const std::vector<std::string>& preset_names();
ScheduleConfig build_schedule(const std::string& preset,
                              const PresetParams& params = {});

// Resamples the image tower's positional table from from_size to to_size.
// Every other parameter is carried over bit-exactly; the optimizer moments
// of the positional table are dropped, all other moments are preserved.
void transfer_resolution(DualEncoder& model, Optimizer& opt, int from_size,
                         int to_size);

struct MetricsRow {
  int step = 0;          // global step across phases
  int phase = 0;
  double loss = 0;
  double lr = 0;
  double flops_cum = 0;
  double wall_ms = 0;    // excluded from determinism comparisons
  double r1_i2t = 0;
  double r1_t2i = 0;
  double zs_acc = 0;
};

std::string metrics_csv_header();
std::string metrics_row_csv(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> rows;
  double total_flops = 0;
  // R@1 on the held-out pairs measured at the end of each phase. All
  // evaluation happens at the full canvas resolution (coarse-phase models
  // evaluate through a resampled copy of the positional table), so the
  // numbers are comparable across phases and presets.
  std::vector<double> phase_end_r1_i2t;
  std::vector<double> phase_end_r1_t2i;
  std::vector<double> phase_end_zs_acc;
};

class Trainer {
 public:
  Trainer(DualEncoder model, const Dataset* data, ScheduleConfig schedule,
          OptimConfig optim = {});

  // Runs every phase, handling resolution transfers at the boundaries.
  TrainResult run();

  // Runs a single phase (exposed for tests); appends to result_.
  void run_phase(const Phase& phase, int phase_index);

  DualEncoder& model() { return model_; }
  const DualEncoder& model() const { return model_; }
  const TrainResult& result() const { return result_; }

  // When set, run() writes metrics.csv plus a checkpoint at every phase
  // boundary and at the end.
  void set_output_dir(std::string dir) { out_dir_ = std::move(dir); }

 private:
  struct EvalOutcome {
    double r1_i2t, r1_t2i, zs_acc;
  };
  EvalOutcome evaluate(const Phase& phase) const;
  void log_row(const Phase& phase, int phase_index, int step_in_phase,
               double loss, double lr);

  DualEncoder model_;
  const Dataset* data_;
  std::string out_dir_;
  ScheduleConfig schedule_;
  Optimizer opt_;
  TrainResult result_;
  int global_step_ = 0;
  double flops_cum_ = 0;
  double wall_ms_cum_ = 0;
  size_t data_cursor_ = 0;
  int epoch_ = 0;
  std::vector<size_t> order_;
};

}  // namespace c2f
