#include "c2f/schedule.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "c2f/checkpoint.hpp"
#include "c2f/contrastive.hpp"
#include "c2f/cost.hpp"
#include "c2f/eval.hpp"
#include "c2f/rng.hpp"

namespace c2f {

void Phase::validate(int patch_size) const {
  if (image_size < patch_size || image_size % patch_size != 0) {
    throw std::invalid_argument("phase: image size " +
                                std::to_string(image_size) +
                                " not a multiple of patch size " +
                                std::to_string(patch_size));
  }
  if (batch_size < 1) throw std::invalid_argument("phase: batch_size must be >= 1");
  if (warmup_steps < 0 || steps <= warmup_steps) {
    throw std::invalid_argument("phase: need steps > warmup_steps >= 0");
  }
  if (mode == PhaseMode::kMask && (keep_ratio <= 0.0 || keep_ratio > 1.0)) {
    throw std::invalid_argument("phase: keep_ratio must be in (0, 1]");
  }
}

double lr_at(int step, const Phase& phase) {
  if (step < 0 || step >= phase.steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) +
                                " outside [0, " + std::to_string(phase.steps) +
                                ")");
  }
  if (step < phase.warmup_steps) {
    return phase.peak_lr * step / phase.warmup_steps;
  }
  return phase.peak_lr * (phase.steps - step) /
         (phase.steps - phase.warmup_steps);
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "baseline",   "coarse2fine", "coarse2fine-16", "coarse2fine-short",
      "multistage", "multigrid",   "mask",           "mask-16"};
  return names;
}

namespace {

Phase main_phase(const PresetParams& p, int size) {
  Phase ph;
  ph.image_size = size;
  ph.batch_size = p.batch;
  ph.steps = p.main_steps;
  ph.peak_lr = p.peak_lr;
  ph.warmup_steps = p.warmup_main;
  ph.weight_decay = p.weight_decay;
  return ph;
}

Phase finetune_phase(const PresetParams& p, int steps) {
  Phase ph;
  ph.image_size = p.high_res;
  ph.batch_size = p.batch;
  ph.steps = steps;
  ph.peak_lr = p.finetune_lr;
  ph.warmup_steps = p.warmup_finetune;
  ph.weight_decay = p.weight_decay;
  return ph;
}

}  // namespace

ScheduleConfig build_schedule(const std::string& preset,
                              const PresetParams& p) {
  ScheduleConfig s;
  s.name = preset;
  if (preset == "baseline") {
    s.phases = {main_phase(p, p.high_res)};
  } else if (preset == "coarse2fine") {
    s.phases = {main_phase(p, p.low_res), finetune_phase(p, p.finetune_steps)};
  } else if (preset == "coarse2fine-16") {
    s.phases = {main_phase(p, p.high_res / 2),
                finetune_phase(p, p.finetune_steps)};
  } else if (preset == "coarse2fine-short") {
    // mirrors the 20k-vs-50k short-finetune variant (0.4x the finetune)
    Phase ft = finetune_phase(p, std::max(p.finetune_steps * 2 / 5,
                                          p.warmup_finetune + 1));
    s.phases = {main_phase(p, p.low_res), ft};
  } else if (preset == "multistage") {
    Phase mid = finetune_phase(p, p.finetune_steps / 2);
    mid.image_size = p.high_res / 2;
    Phase last = finetune_phase(p, p.finetune_steps / 2);
    s.phases = {main_phase(p, p.low_res), mid, last};
  } else if (preset == "multigrid") {
    // three equal stages, batch shrinking as resolution grows
    const int stage_steps = p.main_steps / 3;
    Phase a = main_phase(p, p.low_res);
    a.batch_size = p.batch * 4;
    a.steps = stage_steps;
    Phase b = main_phase(p, p.high_res / 2);
    b.batch_size = p.batch * 2;
    b.steps = stage_steps;
    b.warmup_steps = p.warmup_finetune;
    Phase c = main_phase(p, p.high_res);
    c.steps = stage_steps;
    c.warmup_steps = p.warmup_finetune;
    s.phases = {a, b, c};
  } else if (preset == "mask" || preset == "mask-16") {
    // token-dropping counterpart of the resize presets: same kept sequence
    // length, but inputs stay at full resolution
    const int low = preset == "mask" ? p.low_res : p.high_res / 2;
    const double ratio = static_cast<double>(low) * low /
                         (static_cast<double>(p.high_res) * p.high_res);
    Phase m = main_phase(p, p.high_res);
    m.mode = PhaseMode::kMask;
    m.keep_ratio = ratio;
    s.phases = {m, finetune_phase(p, p.finetune_steps)};
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + preset +
                                "'; valid presets: " + valid);
  }
  return s;
}

void transfer_resolution(DualEncoder& model, Optimizer& opt, int from_size,
                         int to_size) {
  const int p = model.image.config().patch_size;
  if (from_size % p != 0 || to_size % p != 0) {
    throw std::invalid_argument(
        "transfer_resolution: sizes must be divisible by the patch size");
  }
  if (model.image.image_size() != from_size) {
    throw std::invalid_argument("transfer_resolution: model is at size " +
                                std::to_string(model.image.image_size()) +
                                ", not " + std::to_string(from_size));
  }
  if (from_size == to_size) return;  // bit-identical by definition
  model.image.set_pos_embed(
      resample_pos_embed(model.image.pos_embed(), to_size / p, to_size / p));
  opt.reset_state("img.pos_embed");
}

std::string metrics_csv_header() {
  return "step,phase,loss,lr,flops_cum,wall_ms,r1_i2t,r1_t2i,zs_acc";
}

std::string metrics_row_csv(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%d,%d,%.12g,%.12g,%.12g,%.3f,%.6g,%.6g,%.6g", row.step,
                row.phase, row.loss, row.lr, row.flops_cum, row.wall_ms,
                row.r1_i2t, row.r1_t2i, row.zs_acc);
  return buf;
}

// ----- trainer ----------------------------------------------------------------

Trainer::Trainer(DualEncoder model, const Dataset* data,
                 ScheduleConfig schedule, OptimConfig optim)
    : model_(std::move(model)),
      data_(data),
      schedule_(std::move(schedule)),
      opt_(optim) {
  if (data_ == nullptr) throw std::invalid_argument("trainer: null dataset");
  for (const auto& phase : schedule_.phases) {
    phase.validate(model_.image.config().patch_size);
  }
}

TrainResult Trainer::run() {
  namespace fs = std::filesystem;
  if (!out_dir_.empty()) fs::create_directories(out_dir_);
  for (size_t i = 0; i < schedule_.phases.size(); ++i) {
    const Phase& phase = schedule_.phases[i];
    if (model_.image.image_size() != phase.image_size) {
      transfer_resolution(model_, opt_, model_.image.image_size(),
                          phase.image_size);
    }
    run_phase(phase, static_cast<int>(i));
    if (!out_dir_.empty()) {
      save_checkpoint(out_dir_ + "/ckpt_phase" + std::to_string(i) + ".c2fk",
                      model_, vocab_size());
    }
  }
  if (!out_dir_.empty()) {
    std::ofstream csv(out_dir_ + "/metrics.csv", std::ios::trunc);
    csv << metrics_csv_header() << "\n";
    for (const auto& row : result_.rows) csv << metrics_row_csv(row) << "\n";
  }
  return result_;
}

void Trainer::run_phase(const Phase& phase, int phase_index) {
  phase.validate(model_.image.config().patch_size);
  const int canvas = data_->canvas();
  const bool masked = phase.mode == PhaseMode::kMask;
  const int input_size = phase.image_size;
  if (canvas % input_size != 0) {
    throw std::invalid_argument("run_phase: phase size must divide the canvas");
  }
  const double r = static_cast<double>(canvas) / input_size;
  const long long n_tokens =
      token_count(input_size, input_size, model_.image.config().patch_size);
  long long kept = n_tokens;
  if (masked) {
    kept = std::llround(phase.keep_ratio * static_cast<double>(n_tokens));
    if (kept < 1) {
      throw std::invalid_argument("run_phase: keep_ratio keeps zero tokens");
    }
  }
  const double step_flops =
      3.0 * phase.batch_size *
      forward_flops(model_.image.config(), model_.text.config(), kept,
                    model_.text.config().max_seq_len)
          .total();

  Rng mask_rng(mix64(schedule_.seed ^ (0x6d61736bULL + phase_index)));
  opt_.set_weight_decay(phase.weight_decay);
  const auto params = model_.params();

  for (int step = 0; step < phase.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    // assemble one deterministic batch at the phase's resolution
    ImageBatch imgs;
    imgs.batch = phase.batch_size;
    imgs.height = imgs.width = input_size;
    imgs.pixels.reserve(static_cast<size_t>(phase.batch_size) * input_size *
                        input_size * 3);
    std::vector<Caption> caps;
    caps.reserve(phase.batch_size);
    for (int b = 0; b < phase.batch_size; ++b) {
      if (data_cursor_ >= order_.size()) {
        order_ = data_->epoch_order(epoch_++);
        data_cursor_ = 0;
      }
      const Pair& pair =
          data_->train_pair(static_cast<int>(order_[data_cursor_++]));
      const ImageBatch small = downsample(pair.image, r);
      imgs.pixels.insert(imgs.pixels.end(), small.pixels.begin(),
                         small.pixels.end());
      caps.push_back(pair.caption);
    }

    Tensor p_emb;
    if (masked) {
      const auto keep = sample_keep_indices(
          phase.batch_size, static_cast<int>(n_tokens), phase.keep_ratio,
          mask_rng);
      p_emb = model_.image.encode(imgs, &keep);
    } else {
      p_emb = model_.image.encode(imgs);
    }
    const Tensor q_emb = model_.text.encode(caps);
    const Tensor loss = info_nce(p_emb, q_emb, model_.log_inv_tau);
    const double loss_val = loss.item();
    backward(loss);

    const double lr = lr_at(step, phase);
    opt_.step(params, lr);
    // keep 1/tau inside [1, 100]
    TemperatureParam tp;
    tp.log_inv_tau = model_.log_inv_tau;
    tp.clamp();

    flops_cum_ += step_flops;
    const auto t1 = std::chrono::steady_clock::now();
    wall_ms_cum_ += std::chrono::duration<double, std::milli>(t1 - t0).count();

    if (step % schedule_.eval_every == 0) {
      log_row(phase, phase_index, step, loss_val, lr);
    }
    ++global_step_;
  }

  const EvalOutcome end = evaluate(phase);
  result_.phase_end_r1_i2t.push_back(end.r1_i2t);
  result_.phase_end_r1_t2i.push_back(end.r1_t2i);
  result_.phase_end_zs_acc.push_back(end.zs_acc);
  result_.total_flops = flops_cum_;
}

Trainer::EvalOutcome Trainer::evaluate(const Phase&) const {
  // Held-out metrics are always measured at the full canvas resolution so
  // numbers are comparable across phases and presets; a coarse-phase model
  // is evaluated through a resampled copy of its positional table, leaving
  // the training state untouched.
  const int canvas = data_->canvas();
  const int input_size = canvas;
  DualEncoder eval_model = model_;
  if (eval_model.image.image_size() != canvas) {
    const int p = eval_model.image.config().patch_size;
    eval_model.image.set_pos_embed(resample_pos_embed(
        eval_model.image.pos_embed(), canvas / p, canvas / p));
  }
  const double r = static_cast<double>(canvas) / input_size;
  const int n = data_->eval_size();
  ImageBatch imgs;
  imgs.batch = n;
  imgs.height = imgs.width = input_size;
  imgs.pixels.reserve(static_cast<size_t>(n) * input_size * input_size * 3);
  std::vector<Caption> caps;
  caps.reserve(n);
  for (int i = 0; i < n; ++i) {
    const Pair& pair = data_->eval_pair(i);
    const ImageBatch small = downsample(pair.image, r);
    imgs.pixels.insert(imgs.pixels.end(), small.pixels.begin(),
                       small.pixels.end());
    caps.push_back(pair.caption);
  }
  const Tensor p_emb = eval_model.image.encode(imgs);
  const Tensor q_emb = eval_model.text.encode(caps);
  const RetrievalMetrics rm = retrieval_recall(p_emb, q_emb, {1});

  static std::map<int, ClassProbes> probe_cache;
  auto it = probe_cache.find(canvas);
  if (it == probe_cache.end()) {
    it = probe_cache.emplace(canvas, make_class_probes(canvas)).first;
  }
  const double zs = zero_shot_accuracy(eval_model, it->second, input_size,
                                       data_->max_text_len());
  return {rm.r_at_k_i2t.at(1), rm.r_at_k_t2i.at(1), zs};
}

void Trainer::log_row(const Phase& phase, int phase_index, int step_in_phase,
                      double loss, double lr) {
  (void)step_in_phase;
  const EvalOutcome e = evaluate(phase);
  MetricsRow row;
  row.step = global_step_;
  row.phase = phase_index;
  row.loss = loss;
  row.lr = lr;
  row.flops_cum = flops_cum_;
  row.wall_ms = wall_ms_cum_;
  row.r1_i2t = e.r1_i2t;
  row.r1_t2i = e.r1_t2i;
  row.zs_acc = e.zs_acc;
  result_.rows.push_back(row);
}

}  // namespace c2f
