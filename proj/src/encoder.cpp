#include "c2f/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "c2f/rng.hpp"

namespace c2f {

void EncoderConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || width < 1 || mlp_ratio < 1 ||
      embed_dim < 1) {
    throw std::invalid_argument("EncoderConfig: all dims must be positive");
  }
  if (width % n_heads != 0) {
    throw std::invalid_argument("EncoderConfig: width " +
                                std::to_string(width) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
}

EncoderConfig default_image_config() {
  EncoderConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.width = 64;
  c.mlp_ratio = 4;
  c.patch_size = 4;
  c.max_seq_len = 0;
  c.embed_dim = 32;
  return c;
}

EncoderConfig default_text_config() {
  EncoderConfig c;
  c.n_layers = 2;
  c.n_heads = 4;
  c.width = 64;
  c.mlp_ratio = 4;
  c.patch_size = 0;
  c.max_seq_len = 16;
  c.embed_dim = 32;
  return c;
}

PosEmbed resample_pos_embed(const PosEmbed& pe, int new_grid_h,
                            int new_grid_w) {
  if (new_grid_h < 1 || new_grid_w < 1) {
    throw std::invalid_argument("resample_pos_embed: grid dims must be >= 1");
  }
  const int gh = pe.grid_h, gw = pe.grid_w;
  const int width = pe.weights.dim(1);
  PosEmbed out;
  out.grid_h = new_grid_h;
  out.grid_w = new_grid_w;
  if (new_grid_h == gh && new_grid_w == gw) {
    // identity resample: bit-identical weights
    out.weights = Tensor::from_data(pe.weights.shape(), pe.weights.data(),
                                    true);
    return out;
  }
  out.weights = Tensor::zeros({new_grid_h * new_grid_w, width}, true);
  const auto& src = pe.weights.data();
  auto& dst = out.weights.data();
  for (int y = 0; y < new_grid_h; ++y) {
    // align-corners sampling: endpoints map onto endpoints
    const double sy = new_grid_h > 1
                          ? static_cast<double>(y) * (gh - 1) / (new_grid_h - 1)
                          : 0.0;
    const int y0 = std::min(static_cast<int>(sy), gh - 1);
    const int y1 = std::min(y0 + 1, gh - 1);
    const double fy = sy - y0;
    for (int x = 0; x < new_grid_w; ++x) {
      const double sx =
          new_grid_w > 1 ? static_cast<double>(x) * (gw - 1) / (new_grid_w - 1)
                         : 0.0;
      const int x0 = std::min(static_cast<int>(sx), gw - 1);
      const int x1 = std::min(x0 + 1, gw - 1);
      const double fx = sx - x0;
      double* o = dst.data() + (static_cast<size_t>(y) * new_grid_w + x) * width;
      const double* s00 = src.data() + (static_cast<size_t>(y0) * gw + x0) * width;
      const double* s01 = src.data() + (static_cast<size_t>(y0) * gw + x1) * width;
      const double* s10 = src.data() + (static_cast<size_t>(y1) * gw + x0) * width;
      const double* s11 = src.data() + (static_cast<size_t>(y1) * gw + x1) * width;
      for (int c = 0; c < width; ++c) {
        const double top = s00[c] * (1.0 - fx) + s01[c] * fx;
        const double bot = s10[c] * (1.0 - fx) + s11[c] * fx;
        o[c] = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Tensor patchify(const ImageBatch& img, int p) {
  if (p < 1 || img.height % p != 0 || img.width % p != 0) {
    throw std::invalid_argument(
        "patchify: image " + std::to_string(img.height) + "x" +
        std::to_string(img.width) + " not divisible by patch size " +
        std::to_string(p));
  }
  const int B = img.batch;
  const int gh = img.height / p, gw = img.width / p;
  const int n = gh * gw;
  const int d = p * p * 3;
  Tensor out = Tensor::zeros({B, n, d});
  auto& od = out.data();
  for (int b = 0; b < B; ++b) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        double* patch =
            od.data() +
            (static_cast<size_t>(b) * n + static_cast<size_t>(gy) * gw + gx) *
                d;
        int k = 0;
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            for (int c = 0; c < 3; ++c) {
              patch[k++] = img.at(b, gy * p + dy, gx * p + dx, c);
            }
          }
        }
      }
    }
  }
  return out;
}

ImageBatch unpatchify(const Tensor& patches, int h, int w, int p) {
  const int B = patches.dim(0);
  const int gh = h / p, gw = w / p;
  if (patches.dim(1) != gh * gw || patches.dim(2) != p * p * 3) {
    throw std::invalid_argument("unpatchify: shape mismatch");
  }
  ImageBatch img;
  img.batch = B;
  img.height = h;
  img.width = w;
  img.pixels.assign(static_cast<size_t>(B) * h * w * 3, 0.0);
  const auto& pd = patches.data();
  const int d = p * p * 3;
  for (int b = 0; b < B; ++b) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        const double* patch =
            pd.data() +
            (static_cast<size_t>(b) * gh * gw + static_cast<size_t>(gy) * gw +
             gx) *
                d;
        int k = 0;
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            for (int c = 0; c < 3; ++c) {
              img.at(b, gy * p + dy, gx * p + dx, c) = patch[k++];
            }
          }
        }
      }
    }
  }
  return img;
}

std::vector<std::vector<int>> sample_keep_indices(int batch, int n_tokens,
                                                  double keep_ratio, Rng& rng) {
  if (keep_ratio <= 0.0 || keep_ratio > 1.0) {
    throw std::invalid_argument("sample_keep_indices: keep_ratio must be in (0, 1]");
  }
  const int k = static_cast<int>(std::lround(keep_ratio * n_tokens));
  if (k < 1) {
    throw std::invalid_argument(
        "sample_keep_indices: keep_ratio " + std::to_string(keep_ratio) +
        " keeps zero of " + std::to_string(n_tokens) + " tokens");
  }
  std::vector<std::vector<int>> idx(batch);
  for (int b = 0; b < batch; ++b) {
    auto perm = rng.permutation(static_cast<size_t>(n_tokens));
    perm.resize(static_cast<size_t>(k));
    std::sort(perm.begin(), perm.end());
    idx[b].assign(perm.begin(), perm.end());
  }
  return idx;
}

Tensor mask_tokens(const Tensor& tokens, double keep_ratio, uint64_t rng_seed) {
  Rng rng(mix64(rng_seed));
  const auto idx =
      sample_keep_indices(tokens.dim(0), tokens.dim(1), keep_ratio, rng);
  return gather_rows(tokens, idx);
}

// ----- transformer blocks ----------------------------------------------------

namespace {

constexpr double kLnEps = 1e-6;

}  // namespace

TransformerBlock make_block(const EncoderConfig& cfg, Rng& rng) {
  const int w = cfg.width;
  const double s = 0.02;
  TransformerBlock blk;
  blk.ln1_gamma = Tensor::full({w}, 1.0, true);
  blk.ln1_beta = Tensor::zeros({w}, true);
  blk.wq = Tensor::randn({w, w}, s, rng, true);
  blk.bq = Tensor::zeros({w}, true);
  blk.wk = Tensor::randn({w, w}, s, rng, true);
  blk.bk = Tensor::zeros({w}, true);
  blk.wv = Tensor::randn({w, w}, s, rng, true);
  blk.bv = Tensor::zeros({w}, true);
  blk.wo = Tensor::randn({w, w}, s, rng, true);
  blk.bo = Tensor::zeros({w}, true);
  blk.ln2_gamma = Tensor::full({w}, 1.0, true);
  blk.ln2_beta = Tensor::zeros({w}, true);
  blk.w_mlp_in = Tensor::randn({w, cfg.mlp_ratio * w}, s, rng, true);
  blk.b_mlp_in = Tensor::zeros({cfg.mlp_ratio * w}, true);
  blk.w_mlp_out = Tensor::randn({cfg.mlp_ratio * w, w}, s, rng, true);
  blk.b_mlp_out = Tensor::zeros({w}, true);
  return blk;
}

Tensor transformer_block_forward(const TransformerBlock& blk,
                                 const EncoderConfig& cfg, const Tensor& x,
                                 const std::vector<double>* valid) {
  const int w = x.dim(2);
  const int dh = w / cfg.n_heads;

  // pre-norm attention, heads addressed by stride inside the fused op
  Tensor xn = layer_norm(x, blk.ln1_gamma, blk.ln1_beta, kLnEps);
  Tensor q = linear(xn, blk.wq, blk.bq);
  Tensor k = linear(xn, blk.wk, blk.bk);
  Tensor v = linear(xn, blk.wv, blk.bv);
  Tensor ctx = multi_head_attention(q, k, v, cfg.n_heads,
                                    1.0 / std::sqrt(dh), valid);
  Tensor y = add(x, linear(ctx, blk.wo, blk.bo));

  // pre-norm MLP
  Tensor yn = layer_norm(y, blk.ln2_gamma, blk.ln2_beta, kLnEps);
  Tensor hidden = gelu(linear(yn, blk.w_mlp_in, blk.b_mlp_in));
  return add(y, linear(hidden, blk.w_mlp_out, blk.b_mlp_out));
}

namespace {

void collect_block(const std::string& prefix, const TransformerBlock& blk,
                   std::vector<std::pair<std::string, Tensor>>* out) {
  out->emplace_back(prefix + ".ln1_gamma", blk.ln1_gamma);
  out->emplace_back(prefix + ".ln1_beta", blk.ln1_beta);
  out->emplace_back(prefix + ".wq", blk.wq);
  out->emplace_back(prefix + ".bq", blk.bq);
  out->emplace_back(prefix + ".wk", blk.wk);
  out->emplace_back(prefix + ".bk", blk.bk);
  out->emplace_back(prefix + ".wv", blk.wv);
  out->emplace_back(prefix + ".bv", blk.bv);
  out->emplace_back(prefix + ".wo", blk.wo);
  out->emplace_back(prefix + ".bo", blk.bo);
  out->emplace_back(prefix + ".ln2_gamma", blk.ln2_gamma);
  out->emplace_back(prefix + ".ln2_beta", blk.ln2_beta);
  out->emplace_back(prefix + ".w_mlp_in", blk.w_mlp_in);
  out->emplace_back(prefix + ".b_mlp_in", blk.b_mlp_in);
  out->emplace_back(prefix + ".w_mlp_out", blk.w_mlp_out);
  out->emplace_back(prefix + ".b_mlp_out", blk.b_mlp_out);
}

}  // namespace

// ----- image encoder ---------------------------------------------------------

ImageEncoder::ImageEncoder(const EncoderConfig& cfg, int image_size, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.patch_size < 1 || image_size % cfg_.patch_size != 0) {
    throw std::invalid_argument("ImageEncoder: image size " +
                                std::to_string(image_size) +
                                " not divisible by patch size " +
                                std::to_string(cfg_.patch_size));
  }
  const int w = cfg_.width;
  patch_w = Tensor::randn({cfg_.patch_size * cfg_.patch_size * 3, w}, 0.02,
                          rng, true);
  patch_b = Tensor::zeros({w}, true);
  pos_.grid_h = pos_.grid_w = image_size / cfg_.patch_size;
  pos_.weights = Tensor::randn({pos_.grid_h * pos_.grid_w, w}, 0.01, rng, true);
  blocks.reserve(cfg_.n_layers);
  for (int i = 0; i < cfg_.n_layers; ++i) blocks.push_back(make_block(cfg_, rng));
  lnf_gamma = Tensor::full({w}, 1.0, true);
  lnf_beta = Tensor::zeros({w}, true);
  proj = Tensor::randn({w, cfg_.embed_dim}, 0.02, rng, true);
}

void ImageEncoder::set_pos_embed(PosEmbed pe) { pos_ = std::move(pe); }

Tensor ImageEncoder::embed_tokens(const ImageBatch& img) const {
  const int p = cfg_.patch_size;
  if (img.height / p != pos_.grid_h || img.width / p != pos_.grid_w) {
    throw std::invalid_argument(
        "encode_image: input grid " + std::to_string(img.height / p) + "x" +
        std::to_string(img.width / p) + " does not match the positional "
        "embedding grid " + std::to_string(pos_.grid_h) + "x" +
        std::to_string(pos_.grid_w) +
        "; run resample_pos_embed before encoding at this resolution");
  }
  Tensor tokens = linear(patchify(img, p), patch_w, patch_b);
  return add(tokens, pos_.weights);  // positional table broadcast over batch
}

Tensor ImageEncoder::encode_tokens(const Tensor& tokens) const {
  Tensor x = tokens;
  for (const auto& blk : blocks) {
    x = transformer_block_forward(blk, cfg_, x);
  }
  x = layer_norm(x, lnf_gamma, lnf_beta, kLnEps);
  Tensor pooled = mean_axis1(x);
  return l2_normalize(matmul(pooled, proj));
}

Tensor ImageEncoder::encode(const ImageBatch& img,
                            const std::vector<std::vector<int>>* keep_idx)
    const {
  Tensor tokens = embed_tokens(img);
  if (keep_idx != nullptr) tokens = gather_rows(tokens, *keep_idx);
  return encode_tokens(tokens);
}

void ImageEncoder::collect_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>* out) const {
  out->emplace_back(prefix + ".patch_w", patch_w);
  out->emplace_back(prefix + ".patch_b", patch_b);
  out->emplace_back(prefix + ".pos_embed", pos_.weights);
  for (size_t i = 0; i < blocks.size(); ++i) {
    collect_block(prefix + ".blk" + std::to_string(i), blocks[i], out);
  }
  out->emplace_back(prefix + ".lnf_gamma", lnf_gamma);
  out->emplace_back(prefix + ".lnf_beta", lnf_beta);
  out->emplace_back(prefix + ".proj", proj);
}

// ----- text encoder ----------------------------------------------------------

TextEncoder::TextEncoder(const EncoderConfig& cfg, int vocab, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.max_seq_len < 1) {
    throw std::invalid_argument("TextEncoder: max_seq_len must be >= 1");
  }
  const int w = cfg_.width;
  token_emb = Tensor::randn({vocab, w}, 0.02, rng, true);
  pos_emb = Tensor::randn({cfg_.max_seq_len, w}, 0.01, rng, true);
  blocks.reserve(cfg_.n_layers);
  for (int i = 0; i < cfg_.n_layers; ++i) blocks.push_back(make_block(cfg_, rng));
  lnf_gamma = Tensor::full({w}, 1.0, true);
  lnf_beta = Tensor::zeros({w}, true);
  proj = Tensor::randn({w, cfg_.embed_dim}, 0.02, rng, true);
}

Tensor TextEncoder::encode(const std::vector<Caption>& batch) const {
  const int B = static_cast<int>(batch.size());
  const int L = cfg_.max_seq_len;
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(B) * L);
  std::vector<double> valid(static_cast<size_t>(B) * L, 0.0);
  for (int b = 0; b < B; ++b) {
    const auto& cap = batch[b];
    if (static_cast<int>(cap.tokens.size()) > L) {
      throw std::invalid_argument(
          "encode_text: sequence of length " +
          std::to_string(cap.tokens.size()) + " exceeds max_seq_len " +
          std::to_string(L));
    }
    for (int i = 0; i < L; ++i) {
      const int t = i < static_cast<int>(cap.tokens.size()) ? cap.tokens[i]
                                                            : kPadToken;
      ids.push_back(t);
      if (i < cap.true_length) valid[static_cast<size_t>(b) * L + i] = 1.0;
    }
  }
  Tensor x = add(embedding(token_emb, ids, {B, L}), pos_emb);
  for (const auto& blk : blocks) {
    x = transformer_block_forward(blk, cfg_, x, &valid);
  }
  x = layer_norm(x, lnf_gamma, lnf_beta, kLnEps);
  Tensor pooled = masked_mean_axis1(x, valid);
  return l2_normalize(matmul(pooled, proj));
}

void TextEncoder::collect_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>* out) const {
  out->emplace_back(prefix + ".token_emb", token_emb);
  out->emplace_back(prefix + ".pos_emb", pos_emb);
  for (size_t i = 0; i < blocks.size(); ++i) {
    collect_block(prefix + ".blk" + std::to_string(i), blocks[i], out);
  }
  out->emplace_back(prefix + ".lnf_gamma", lnf_gamma);
  out->emplace_back(prefix + ".lnf_beta", lnf_beta);
  out->emplace_back(prefix + ".proj", proj);
}

// ----- dual encoder ----------------------------------------------------------

DualEncoder::DualEncoder(const EncoderConfig& img_cfg,
                         const EncoderConfig& txt_cfg, int image_size,
                         int vocab, uint64_t seed)
    : image([&] {
        Rng rng(mix64(seed ^ 0x1111));
        return ImageEncoder(img_cfg, image_size, rng);
      }()),
      text([&] {
        Rng rng(mix64(seed ^ 0x2222));
        return TextEncoder(txt_cfg, vocab, rng);
      }()) {
  // 1/tau = 1/0.07, the CLIP-family initialization
  log_inv_tau = Tensor::scalar(std::log(1.0 / 0.07), true);
}

std::vector<std::pair<std::string, Tensor>> DualEncoder::params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  image.collect_params("img", &out);
  text.collect_params("txt", &out);
  out.emplace_back("log_inv_tau", log_inv_tau);
  return out;
}

size_t DualEncoder::param_count() const {
  size_t n = 0;
  for (const auto& [name, t] : params()) n += t.numel();
  return n;
}

size_t expected_param_count(const EncoderConfig& img_cfg,
                            const EncoderConfig& txt_cfg, int image_size,
                            int vocab) {
  auto block_params = [](const EncoderConfig& c) -> size_t {
    const size_t w = static_cast<size_t>(c.width);
    const size_t mlp = w * c.mlp_ratio;
    return 2 * w                 // ln1
           + 4 * (w * w + w)     // q, k, v, o
           + 2 * w               // ln2
           + w * mlp + mlp       // mlp in
           + mlp * w + w;        // mlp out
  };
  const size_t gi = static_cast<size_t>(image_size / img_cfg.patch_size);
  size_t img = static_cast<size_t>(img_cfg.patch_size) * img_cfg.patch_size *
                   3 * img_cfg.width +
               img_cfg.width                                // patch embed
               + gi * gi * img_cfg.width                    // positional table
               + img_cfg.n_layers * block_params(img_cfg)   // blocks
               + 2 * img_cfg.width                          // final norm
               + static_cast<size_t>(img_cfg.width) * img_cfg.embed_dim;
  size_t txt = static_cast<size_t>(vocab) * txt_cfg.width +
               static_cast<size_t>(txt_cfg.max_seq_len) * txt_cfg.width +
               txt_cfg.n_layers * block_params(txt_cfg) + 2 * txt_cfg.width +
               static_cast<size_t>(txt_cfg.width) * txt_cfg.embed_dim;
  return img + txt + 1;  // + temperature
}

}  // namespace c2f
