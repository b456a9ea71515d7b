#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lithomt/config.hpp"
#include "lithomt/corpus/process.hpp"
#include "lithomt/genmodel/blocks.hpp"

namespace lmt {

struct GenConfig {
  int image = 128;
  int patch = 4;
  std::vector<int> widths{48, 96, 192};
  std::vector<int> depths{2, 2, 2};
  int window = 4;
  int heads = 4;
  int mlp_ratio = 2;
  int proc_size = 32;
  std::vector<int> proc_channels{32, 64};
  std::vector<int> dec_widths{96, 48, 32, 16};
  int scalar_hidden = 16;
  int attn_grid = 16;  // decoder levels at or below this grid side get a global attention block
  std::uint64_t init_seed = 7;

  int stages() const { return static_cast<int>(widths.size()); }
  int width() const { return widths.back(); }
  int token_grid() const { return image / (patch << (stages() - 1)); }
  int process_grid() const { return proc_size / 4; }
  void validate() const;
  static GenConfig from_config(const KeyValueConfig& kv);
  void write_config(KeyValueConfig& kv) const;
};

template <typename T>
struct LayoutEmbedding {
  Var<T> tokens;               // [B, N, d]
  std::vector<Var<T>> stages;  // NHWC output of every stage, finest first
  int h = 0, w = 0;
  int n() const { return h * w; }
};

template <typename T>
struct FusedFeatures {
  Var<T> tokens;             // [B, M, d]
  Tensor<T> attention_maps;  // [B, heads, M, N]
  int h = 0, w = 0;
};

template <typename T>
struct GenerationOutput {
  Var<T> mask_prob, contour_prob;  // [B, H, W, 1]
  FusedFeatures<T> fused;          // contour stage
  FusedFeatures<T> mask_fused;
};

// Layout encoder invocations since start-up.
std::uint64_t layout_encode_count();

template <typename T>
class Generator {
 public:
  explicit Generator(const GenConfig& cfg);

  const GenConfig& config() const { return cfg_; }
  ParamList<T> parameters() const;

  // layout [B, H, W, 1] in {0, 1}
  LayoutEmbedding<T> encode_layout(const Var<T>& layout) const;
  // extra [B, H, W, 1] (mask channel) or empty.
  Var<T> encode_process(const std::vector<ProcessCondition>& conds, const std::optional<Var<T>>& extra) const;
  // Scalar channels and source in the encoder input layout [B, S, S, 4|5].
  Var<T> process_input(const std::vector<ProcessCondition>& conds, const std::optional<Var<T>>& extra) const;
  FusedFeatures<T> fuse(const Var<T>& proc, const LayoutEmbedding<T>& lay) const;
  // Probability raster [B, H, W, 1]; extra is the full-resolution mask channel (zeros in the mask stage).
  Var<T> decode(const FusedFeatures<T>& fused, const LayoutEmbedding<T>& lay, const Var<T>& layout,
                const Var<T>& extra) const;

  // soft = true passes the mask probability to the contour stage unbinarized.
  GenerationOutput<T> generate(const Var<T>& layout, const std::vector<ProcessCondition>& conds,
                               bool soft = false) const;
  // Contour stage only, with a caller-provided mask channel.
  Var<T> contour_from_mask(const LayoutEmbedding<T>& lay, const Var<T>& layout,
                           const std::vector<ProcessCondition>& conds, const Var<T>& mask,
                           FusedFeatures<T>* fused = nullptr) const;

  struct CrossAttention {
    Linear<T> q, k, v, o;
    LayerNorm<T> norm;
    int heads = 4;
  };
  const CrossAttention& cross_attention() const { return xattn_; }

 private:
  GenConfig cfg_;
  // layout encoder
  Conv<T> patch_embed_;
  Var<T> pos_embed_;
  std::vector<std::vector<SwinBlock<T>>> swin_;
  std::vector<LayerNorm<T>> merge_norm_;
  std::vector<Linear<T>> merge_;
  // process encoder
  std::vector<Mlp<T>> scalar_mlp_;
  Var<T> proc_conv0_w_, proc_conv0_b_;
  Conv<T> proc_conv1_;
  Linear<T> proc_proj_;
  Var<T> proc_pos_;
  AttnBlock<T> proc_attn0_, proc_attn1_;
  ResBlock<T> proc_res_;
  // fusion
  CrossAttention xattn_;
  // decoder
  Conv<T> dec_in_;
  AttnBlock<T> dec_attn_;
  std::vector<UpConv<T>> up_;
  std::vector<Conv<T>> merge_conv_;
  std::vector<ResBlock<T>> dec_res_;
  std::vector<std::optional<AttnBlock<T>>> dec_level_attn_;
  Conv<T> head0_, head1_;
};

// Scalar process inputs scaled to order one: threshold, focus, dose.
std::array<double, 3> process_scalars(const ProcessCondition& c);

}  // namespace lmt
