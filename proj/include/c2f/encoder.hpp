#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/tensor.hpp"

namespace c2f {

class Rng;

struct EncoderConfig {
  int n_layers = 4;
  int n_heads = 4;
  int width = 64;
  int mlp_ratio = 4;
  int patch_size = 4;   // image tower only; 0 for text
  int max_seq_len = 16;  // text tower only
  int embed_dim = 32;    // shared projection dimension

  void validate() const;
};

// Desk-scale defaults: a miniature of the reference towers that keeps every
// mechanism (patch grid, trainable positional table, pre-norm blocks, mean
// pooling, shared projection) while training in minutes on a CPU.
EncoderConfig default_image_config();
EncoderConfig default_text_config();

// Trainable per-patch positional table over a 2-D grid.
struct PosEmbed {
  int grid_h = 0;
  int grid_w = 0;
  Tensor weights;  // [grid_h * grid_w, width]
};

// Bilinear resampling of the positional table to a new grid, align-corners
// semantics (identity when the grid is unchanged, constant extension from a
// 1x1 grid). The result stays trainable.
PosEmbed resample_pos_embed(const PosEmbed& pe, int new_grid_h, int new_grid_w);

// img [B,h,w,3] -> [B, N, p*p*3] with N = h*w/p^2, patches in raster order.
Tensor patchify(const ImageBatch& img, int p);

// Inverse of patchify (test aid / format checks).
ImageBatch unpatchify(const Tensor& patches, int h, int w, int p);

// K = round(keep_ratio * N) kept positions per example, uniform without
// replacement, ascending order.
std::vector<std::vector<int>> sample_keep_indices(int batch, int n_tokens,
                                                  double keep_ratio, Rng& rng);

// Convenience wrapper over sample_keep_indices + gather_rows.
Tensor mask_tokens(const Tensor& tokens, double keep_ratio, uint64_t rng_seed);

struct TransformerBlock {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
};

// x: [B, N, width]; valid: optional key-padding mask of size B*N.
Tensor transformer_block_forward(const TransformerBlock& blk,
                                 const EncoderConfig& cfg, const Tensor& x,
                                 const std::vector<double>* valid = nullptr);

class ImageEncoder {
 public:
  ImageEncoder(const EncoderConfig& cfg, int image_size, Rng& rng);

  // Full pipeline: patchify, linear embed, + positional table, pre-norm
  // blocks, mean pool, project, L2 normalize. Rows of the result are
  // unit-norm. keep_idx, when given, drops tokens after the positional
  // add (the positional rows travel with their tokens).
  Tensor encode(const ImageBatch& img,
                const std::vector<std::vector<int>>* keep_idx = nullptr) const;

  // Token sequence after embed + positional add (pre-blocks); exposed for
  // the masking path and tests.
  Tensor embed_tokens(const ImageBatch& img) const;
  Tensor encode_tokens(const Tensor& tokens) const;  // blocks onward

  const EncoderConfig& config() const { return cfg_; }
  const PosEmbed& pos_embed() const { return pos_; }
  void set_pos_embed(PosEmbed pe);
  int image_size() const { return pos_.grid_h * cfg_.patch_size; }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>* out) const;

  EncoderConfig cfg_;
  Tensor patch_w, patch_b;  // [p*p*3, width], [width]
  PosEmbed pos_;
  std::vector<TransformerBlock> blocks;
  Tensor lnf_gamma, lnf_beta;
  Tensor proj;  // [width, embed_dim], no bias
};

class TextEncoder {
 public:
  TextEncoder(const EncoderConfig& cfg, int vocab, Rng& rng);

  // tokens: B sequences of length max_seq_len (0-padded). Masked mean
  // pooling over non-pad positions; pads are also masked out of attention,
  // so trailing padding cannot change the embedding.
  Tensor encode(const std::vector<Caption>& batch) const;

  const EncoderConfig& config() const { return cfg_; }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>* out) const;

  EncoderConfig cfg_;
  Tensor token_emb;  // [vocab, width]
  Tensor pos_emb;    // [max_seq_len, width], 1-D, never resampled
  std::vector<TransformerBlock> blocks;
  Tensor lnf_gamma, lnf_beta;
  Tensor proj;
};

struct DualEncoder {
  ImageEncoder image;
  TextEncoder text;
  Tensor log_inv_tau;  // scalar, trainable; see contrastive.hpp for clamping

  DualEncoder(const EncoderConfig& img_cfg, const EncoderConfig& txt_cfg,
              int image_size, int vocab, uint64_t seed);

  // Name -> tensor registry in a stable order.
  std::vector<std::pair<std::string, Tensor>> params() const;
  size_t param_count() const;
};

// Expected parameter count from the configs alone (asserted against the
// registry in tests).
size_t expected_param_count(const EncoderConfig& img_cfg,
                            const EncoderConfig& txt_cfg, int image_size,
                            int vocab);

TransformerBlock make_block(const EncoderConfig& cfg, Rng& rng);

}  // namespace c2f
