#include "c2f/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace c2f {

namespace {

constexpr char kMagic[8] = {'C', '2', 'F', 'C', 'K', 'P', 'T', '1'};

nlohmann::json config_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
          {"width", c.width},         {"mlp_ratio", c.mlp_ratio},
          {"patch_size", c.patch_size}, {"max_seq_len", c.max_seq_len},
          {"embed_dim", c.embed_dim}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.width = j.at("width").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const DualEncoder& model,
                     int vocab) {
  auto params = model.params();
  std::sort(params.begin(), params.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  nlohmann::json header;
  header["image_config"] = config_json(model.image.config());
  header["text_config"] = config_json(model.text.config());
  header["image_size"] = model.image.image_size();
  header["vocab"] = vocab;

  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    table.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", offset}});
    offset += t.numel() * sizeof(double);
  }
  header["params"] = std::move(table);

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), hs.size());
  for (const auto& [name, t] : params) {
    f.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

DualEncoder load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw std::runtime_error("load_checkpoint: truncated header");
  const nlohmann::json header = nlohmann::json::parse(hs);

  const EncoderConfig img_cfg = config_from_json(header.at("image_config"));
  const EncoderConfig txt_cfg = config_from_json(header.at("text_config"));
  const int image_size = header.at("image_size").get<int>();
  const int vocab = header.at("vocab").get<int>();

  DualEncoder model(img_cfg, txt_cfg, image_size, vocab, /*seed=*/0);
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : model.params()) by_name.emplace(name, t);

  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("load_checkpoint: unknown parameter " + name);
    }
    Tensor t = it->second;
    if (t.shape() != shape) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    f.read(reinterpret_cast<char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
    by_name.erase(it);
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated payload");
  if (!by_name.empty()) {
    throw std::runtime_error("load_checkpoint: missing parameter " +
                             by_name.begin()->first);
  }
  return model;
}

}  // namespace c2f
