#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lithomt/config.hpp"
#include "lithomt/detection.hpp"
#include "lithomt/genmodel/generator.hpp"

namespace lmt {

struct DetConfig {
  Task task = Task::drc;
  int image = 128;
  std::vector<int> stem{16, 32};
  std::vector<int> channels{32, 64, 128};  // S1, S2, S3
  int width = 128;
  int heads = 4;
  int ffn = 256;
  int queries = 30;
  int decoder_layers = 3;
  double prior_prob = 0.01;
  bool unified = false;   // generator-feature injection (LRC only)
  int context_width = 192;  // generator model width
  std::uint64_t init_seed = 11;

  bool dual() const { return task == Task::lrc; }
  int memory_grid() const { return image / 16; }
  void validate() const;
  static DetConfig from_config(const KeyValueConfig& kv);
  void write_config(KeyValueConfig& kv) const;
};

template <typename T>
struct PyramidFeatures {
  Var<T> s1, s2, s3;  // strides 8, 16, 32
};

// Per decoder layer predictions; the last entry is the model output.
template <typename T>
struct DetForward {
  std::vector<Var<T>> probs;  // [B, Q, K] per layer
  std::vector<Var<T>> boxes;  // [B, Q, 4] per layer, normalized (cx, cy, w, h)
  Tensor<T> encoder_attention;
};

template <typename T>
class Detector {
 public:
  explicit Detector(const DetConfig& cfg);

  const DetConfig& config() const { return cfg_; }
  ParamList<T> parameters() const;
  ParamList<T> injection_parameters() const;
  int encoder_layers() const { return 1; }
  long stem_parameter_count() const;

  PyramidFeatures<T> backbone(const Var<T>& primary, const std::optional<Var<T>>& secondary) const;
  Var<T> encode_global(const Var<T>& s3, Tensor<T>* attn = nullptr) const;
  Var<T> fuse_pyramid(const PyramidFeatures<T>& p) const;
  Var<T> inject(const Var<T>& memory, const Var<T>& context_tokens, int ctx_h, int ctx_w) const;
  DetForward<T> decode(const Var<T>& memory) const;

  // inputs: {layout} for DRC, {mask} for MRC, {contour, layout} for LRC; each [B, H, W, 1].
  DetForward<T> forward(const std::vector<Var<T>>& inputs, const FusedFeatures<T>* context = nullptr) const;

  // One detection per query and image.
  std::vector<std::vector<Detection>> detect(Task task, const std::vector<std::vector<const BinaryRaster*>>& inputs,
                                             const FusedFeatures<T>* context = nullptr) const;

 private:
  struct Stem {
    Conv<T> c0, c1;
  };
  struct DecoderLayer {
    Linear<T> sa_qk, sa_v, sa_o, ca_q, ca_k, ca_v, ca_o;
    LayerNorm<T> n1, n2, n3;
    Mlp<T> ffn;
  };
  Var<T> run_stem(const Stem& s, const Var<T>& x) const;
  Var<T> self_attention(const DecoderLayer& l, const Var<T>& content, const Var<T>& qpos) const;

  DetConfig cfg_;
  Stem stem_a_, stem_b_;
  std::optional<Conv<T>> stem_fuse_;
  std::vector<Conv<T>> down_;
  std::vector<ResBlock<T>> stage_;
  // encoder
  Linear<T> enc_in_, enc_qk_, enc_v_, enc_o_;
  LayerNorm<T> enc_n1_, enc_n2_;
  Mlp<T> enc_ffn_;
  // pyramid fusion
  Conv<T> fuse_;
  // generator context injection
  std::optional<Linear<T>> ctx_proj_;
  std::optional<Conv<T>> ctx_fuse_;
  // decoder
  Var<T> query_content_, query_ref_;
  std::vector<DecoderLayer> layers_;
  Mlp<T> query_pos_;
  Linear<T> class_head_;
  Mlp<T> box_head_;
};

// Fixed 2-D sinusoidal encoding [h*w, d].
template <typename T>
Tensor<T> sine_positions(int h, int w, int d);

// Stack single-channel rasters into [B, H, W, 1].
template <typename T>
Tensor<T> stack_rasters(const std::vector<const BinaryRaster*>& rs);

}  // namespace lmt
