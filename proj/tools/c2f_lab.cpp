// Command-line surface for the coarse-to-fine contrastive lab:
//   data-gen  write a synthetic image/caption corpus to disk
//   train     run a schedule preset, write metrics CSV + checkpoints
//   eval      score a checkpoint on a held-out corpus
//   cost      print the analytical per-forward cost table
//   compare   paired resize-vs-mask study over seeds
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "c2f/checkpoint.hpp"
#include "c2f/cost.hpp"
#include "c2f/data.hpp"
#include "c2f/encoder.hpp"
#include "c2f/eval.hpp"
#include "c2f/schedule.hpp"

namespace {

struct RunConfig {
  std::string preset = "coarse2fine";
  uint64_t seed = 0;
  std::string out_dir = "out";
  int train_pairs = 2048;
  int eval_pairs = 256;
  int canvas = 32;
  int eval_every = 500;
  c2f::PresetParams params;
};

// plain key=value files, one pair per line, '#' comments
void apply_config_file(const std::string& path, RunConfig* cfg) {
  std::ifstream f(path);
  if (!f) throw CLI::ValidationError("--config", "cannot open " + path);
  std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"preset", [&](const std::string& v) { cfg->preset = v; }},
      {"seed", [&](const std::string& v) { cfg->seed = std::stoull(v); }},
      {"out_dir", [&](const std::string& v) { cfg->out_dir = v; }},
      {"train_pairs", [&](const std::string& v) { cfg->train_pairs = std::stoi(v); }},
      {"eval_pairs", [&](const std::string& v) { cfg->eval_pairs = std::stoi(v); }},
      {"canvas", [&](const std::string& v) { cfg->canvas = std::stoi(v); }},
      {"eval_every", [&](const std::string& v) { cfg->eval_every = std::stoi(v); }},
      {"high_res", [&](const std::string& v) { cfg->params.high_res = std::stoi(v); }},
      {"low_res", [&](const std::string& v) { cfg->params.low_res = std::stoi(v); }},
      {"batch", [&](const std::string& v) { cfg->params.batch = std::stoi(v); }},
      {"main_steps", [&](const std::string& v) { cfg->params.main_steps = std::stoi(v); }},
      {"finetune_steps", [&](const std::string& v) { cfg->params.finetune_steps = std::stoi(v); }},
      {"warmup_main", [&](const std::string& v) { cfg->params.warmup_main = std::stoi(v); }},
      {"warmup_finetune", [&](const std::string& v) { cfg->params.warmup_finetune = std::stoi(v); }},
      {"peak_lr", [&](const std::string& v) { cfg->params.peak_lr = std::stod(v); }},
      {"finetune_lr", [&](const std::string& v) { cfg->params.finetune_lr = std::stod(v); }},
      {"weight_decay", [&](const std::string& v) { cfg->params.weight_decay = std::stod(v); }},
  };
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError(
          "--config", path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw CLI::ValidationError(
          "--config", path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(val);
    } catch (const std::exception&) {
      throw CLI::ValidationError(
          "--config", path + ":" + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
}

c2f::ScheduleConfig resolve_schedule(const RunConfig& cfg) {
  c2f::ScheduleConfig s = c2f::build_schedule(cfg.preset, cfg.params);
  s.seed = cfg.seed;
  s.eval_every = cfg.eval_every;
  return s;
}

void print_schedule(const c2f::ScheduleConfig& s, const c2f::EncoderConfig& img,
                    const c2f::EncoderConfig& txt) {
  std::printf("schedule '%s' (seed %llu)\n", s.name.c_str(),
              static_cast<unsigned long long>(s.seed));
  std::printf("%-6s %-6s %-6s %-7s %-10s %-7s %-6s %s\n", "phase", "size",
              "batch", "steps", "peak_lr", "warmup", "mode", "keep");
  for (size_t i = 0; i < s.phases.size(); ++i) {
    const auto& p = s.phases[i];
    std::printf("%-6zu %-6d %-6d %-7d %-10g %-7d %-6s %.4g\n", i, p.image_size,
                p.batch_size, p.steps, p.peak_lr, p.warmup_steps,
                p.mode == c2f::PhaseMode::kResize ? "resize" : "mask",
                p.keep_ratio);
  }
  const double cost =
      c2f::schedule_cost(s, img, txt, txt.max_seq_len);
  std::printf("predicted training cost: %.4g GFLOPs\n", cost / 1e9);
}

c2f::TrainResult train_once(const RunConfig& cfg, const c2f::Dataset& data,
                            const std::string& out_dir) {
  const c2f::EncoderConfig img = c2f::default_image_config();
  const c2f::EncoderConfig txt = c2f::default_text_config();
  c2f::ScheduleConfig s = resolve_schedule(cfg);
  c2f::DualEncoder model(img, txt, s.phases.front().image_size,
                         c2f::vocab_size(), cfg.seed);
  c2f::Trainer trainer(std::move(model), &data, s);
  if (!out_dir.empty()) trainer.set_output_dir(out_dir);
  return trainer.run();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_cost(const std::string& csv_path) {
  const c2f::EncoderConfig img = c2f::reference_image_config();
  const c2f::EncoderConfig txt = c2f::reference_text_config();
  struct Row {
    const char* label;
    int size;
    int text_len;
  };
  // text length per row follows the published configs: 64 tokens for the
  // full-resolution and 112 runs, 16 for the short-text 80/64 runs
  const Row rows[] = {{"full-res-224", 224, 64},
                      {"coarse-112", 112, 64},
                      {"coarse-80", 80, 16},
                      {"coarse-64", 64, 16}};
  std::string csv = "label,image_size,image_tokens,text_len,gflops\n";
  std::printf("%-14s %-6s %-8s %-9s %s\n", "label", "size", "tokens",
              "text_len", "GFLOPs/forward");
  for (const auto& row : rows) {
    const long long n = c2f::token_count(row.size, row.size, img.patch_size);
    const c2f::CostReport r = c2f::forward_flops(img, txt, n, row.text_len);
    std::printf("%-14s %-6d %-8lld %-9d %.1f\n", row.label, row.size, n,
                row.text_len, r.total() / 1e9);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%d,%lld,%d,%.4f\n", row.label,
                  row.size, n, row.text_len, r.total() / 1e9);
    csv += buf;
  }
  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    f << csv;
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, int n_pairs, uint64_t seed,
             int canvas, const std::vector<int>& ks,
             const std::string& csv_path) {
  c2f::DualEncoder model = c2f::load_checkpoint(ckpt_path);
  const int max_len = model.text.config().max_seq_len;
  const c2f::Dataset data(0, n_pairs, canvas, seed, max_len);
  const int size = model.image.image_size();
  const double r = static_cast<double>(canvas) / size;

  c2f::ImageBatch imgs;
  imgs.batch = n_pairs;
  imgs.height = imgs.width = size;
  std::vector<c2f::Caption> caps;
  for (int i = 0; i < n_pairs; ++i) {
    const c2f::ImageBatch small = c2f::downsample(data.eval_pair(i).image, r);
    imgs.pixels.insert(imgs.pixels.end(), small.pixels.begin(),
                       small.pixels.end());
    caps.push_back(data.eval_pair(i).caption);
  }
  const c2f::Tensor p = model.image.encode(imgs);
  const c2f::Tensor q = model.text.encode(caps);
  const c2f::RetrievalMetrics m = c2f::retrieval_recall(p, q, ks);
  const c2f::ClassProbes probes = c2f::make_class_probes(canvas);
  const double zs = c2f::zero_shot_accuracy(model, probes, size, max_len);

  std::printf("%-8s %-10s %s\n", "k", "I2T R@k", "T2I R@k");
  std::string csv = "k,r_i2t,r_t2i\n";
  for (int k : ks) {
    std::printf("%-8d %-10.2f %.2f\n", k, m.r_at_k_i2t.at(k),
                m.r_at_k_t2i.at(k));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g\n", k, m.r_at_k_i2t.at(k),
                  m.r_at_k_t2i.at(k));
    csv += buf;
  }
  std::printf("zero-shot accuracy: %.2f%%\n", zs);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    f << csv << "zs_acc," << zs << ",\n";
  }
  return 0;
}

int cmd_compare(RunConfig cfg, int n_seeds, const std::vector<int>& sizes,
                const std::string& csv_path) {
  std::string csv = "mode,size,seed,zs_acc,r1_i2t\n";
  std::printf("%-8s %-6s %-6s %-8s %s\n", "mode", "size", "seed", "zs_acc",
              "r1_i2t");
  bool resize_wins_somewhere = false;
  for (int size : sizes) {
    std::vector<double> zs_resize, zs_mask;
    for (int i = 0; i < n_seeds; ++i) {
      const uint64_t seed = cfg.seed + static_cast<uint64_t>(i);
      const c2f::Dataset data(cfg.train_pairs, cfg.eval_pairs, cfg.canvas,
                              seed, c2f::default_text_config().max_seq_len);
      for (const bool masked : {false, true}) {
        RunConfig rc = cfg;
        rc.seed = seed;
        rc.params.low_res = size;
        if (masked) {
          rc.preset = size * 2 == cfg.params.high_res ? "mask-16" : "mask";
        } else {
          rc.preset = "coarse2fine";
        }
        const c2f::TrainResult res = train_once(rc, data, "");
        const double zs = res.phase_end_zs_acc.back();
        const double r1 = res.phase_end_r1_i2t.back();
        (masked ? zs_mask : zs_resize).push_back(zs);
        std::printf("%-8s %-6d %-6llu %-8.2f %.2f\n",
                    masked ? "mask" : "resize", size,
                    static_cast<unsigned long long>(seed), zs, r1);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s,%d,%llu,%.6g,%.6g\n",
                      masked ? "mask" : "resize", size,
                      static_cast<unsigned long long>(seed), zs, r1);
        csv += buf;
      }
    }
    const double mr = median(zs_resize), mm = median(zs_mask);
    std::printf("%-8s %-6d %-6s %-8.2f (median; mask median %.2f)\n", "resize",
                size, "med", mr, mm);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "resize-median,%d,,%.6g,\n", size, mr);
    csv += buf;
    std::snprintf(buf, sizeof(buf), "mask-median,%d,,%.6g,\n", size, mm);
    csv += buf;
    if (mr >= mm) resize_wins_somewhere = true;
  }
  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    f << csv;
  }
  std::printf(resize_wins_somewhere
                  ? "direction: resize >= mask (median) holds\n"
                  : "direction: mask beat resize at every size\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine contrastive pretraining lab"};
  app.require_subcommand(1);

  // data-gen
  auto* gen = app.add_subcommand("data-gen", "write a synthetic corpus");
  int gen_n = 256, gen_canvas = 32, gen_maxlen = 16;
  uint64_t gen_seed = 0;
  std::string gen_out = "data";
  gen->add_option("--n", gen_n, "number of pairs");
  gen->add_option("--canvas", gen_canvas, "image side length");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--max-text-len", gen_maxlen, "caption token budget");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "run a schedule preset");
  RunConfig tc;
  std::string train_config;
  bool dry_run = false;
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--preset", tc.preset, "schedule preset");
  train->add_option("--seed", tc.seed, "run seed");
  train->add_option("--out", tc.out_dir, "output directory");
  train->add_option("--train-pairs", tc.train_pairs, "corpus size");
  train->add_option("--eval-pairs", tc.eval_pairs, "held-out size");
  train->add_option("--canvas", tc.canvas, "full image side length");
  train->add_option("--eval-every", tc.eval_every, "metrics row interval");
  train->add_option("--main-steps", tc.params.main_steps, "main phase steps");
  train->add_option("--finetune-steps", tc.params.finetune_steps,
                    "finetune phase steps");
  train->add_option("--batch", tc.params.batch, "batch size");
  train->add_option("--peak-lr", tc.params.peak_lr, "main phase peak LR");
  train->add_option("--finetune-lr", tc.params.finetune_lr,
                    "finetune peak LR");
  train->add_option("--low-res", tc.params.low_res, "coarse phase image size");
  train->add_flag("--dry-run", dry_run,
                  "print resolved schedule and predicted cost, no training");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint");
  std::string ev_ckpt, ev_csv;
  int ev_n = 256, ev_canvas = 32;
  uint64_t ev_seed = 0;
  std::vector<int> ev_ks = {1, 5, 10};
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--pairs", ev_n, "held-out pairs");
  ev->add_option("--canvas", ev_canvas, "full image side length");
  ev->add_option("--seed", ev_seed, "corpus seed");
  ev->add_option("--ks", ev_ks, "recall cutoffs");
  ev->add_option("--csv", ev_csv, "also write CSV here");

  // cost
  auto* cost = app.add_subcommand("cost", "analytical cost table");
  std::string cost_csv;
  cost->add_option("--csv", cost_csv, "also write CSV here");

  // compare
  auto* cmp = app.add_subcommand("compare", "resize-vs-mask study");
  RunConfig cc;
  cc.params.main_steps = 900;
  cc.params.finetune_steps = 90;
  std::string cmp_config, cmp_csv;
  int cmp_seeds = 3;
  std::vector<int> cmp_sizes = {8};
  bool cmp_dry = false;
  cmp->add_option("--config", cmp_config, "key=value config file");
  cmp->add_option("--seeds", cmp_seeds, "number of seeds");
  cmp->add_option("--sizes", cmp_sizes, "coarse sizes to test");
  cmp->add_option("--seed", cc.seed, "base seed");
  cmp->add_option("--train-pairs", cc.train_pairs, "corpus size");
  cmp->add_option("--eval-pairs", cc.eval_pairs, "held-out size");
  cmp->add_option("--main-steps", cc.params.main_steps, "main phase steps");
  cmp->add_option("--finetune-steps", cc.params.finetune_steps,
                  "finetune phase steps");
  cmp->add_option("--csv", cmp_csv, "also write CSV here");
  cmp->add_flag("--dry-run", cmp_dry, "print schedules only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      c2f::write_dataset(gen_out, gen_n, gen_canvas, gen_seed, gen_maxlen);
      std::printf("wrote %d pairs to %s\n", gen_n, gen_out.c_str());
      return 0;
    }
    if (train->parsed()) {
      if (!train_config.empty()) apply_config_file(train_config, &tc);
      const c2f::ScheduleConfig s = resolve_schedule(tc);
      if (dry_run) {
        print_schedule(s, c2f::default_image_config(),
                       c2f::default_text_config());
        return 0;
      }
      const c2f::Dataset data(tc.train_pairs, tc.eval_pairs, tc.canvas,
                              tc.seed, c2f::default_text_config().max_seq_len);
      const c2f::TrainResult res = train_once(tc, data, tc.out_dir);
      std::printf("final: R@1 I2T %.2f, T2I %.2f, zero-shot %.2f%% "
                  "(%.4g GFLOPs)\n",
                  res.phase_end_r1_i2t.back(), res.phase_end_r1_t2i.back(),
                  res.phase_end_zs_acc.back(), res.total_flops / 1e9);
      return 0;
    }
    if (ev->parsed()) {
      return cmd_eval(ev_ckpt, ev_n, ev_seed, ev_canvas, ev_ks, ev_csv);
    }
    if (cost->parsed()) return cmd_cost(cost_csv);
    if (cmp->parsed()) {
      if (!cmp_config.empty()) apply_config_file(cmp_config, &cc);
      if (cmp_dry) {
        for (int size : cmp_sizes) {
          RunConfig rc = cc;
          rc.params.low_res = size;
          rc.preset = "coarse2fine";
          print_schedule(resolve_schedule(rc), c2f::default_image_config(),
                         c2f::default_text_config());
          rc.preset = size * 2 == cc.params.high_res ? "mask-16" : "mask";
          print_schedule(resolve_schedule(rc), c2f::default_image_config(),
                         c2f::default_text_config());
        }
        return 0;
      }
      return cmd_compare(cc, cmp_seeds, cmp_sizes, cmp_csv);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
