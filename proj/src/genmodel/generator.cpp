#include "lithomt/genmodel/generator.hpp"

#include <atomic>
#include <cmath>

#include "lithomt/error.hpp"

namespace lmt {

namespace {

std::atomic<std::uint64_t> g_layout_encodes{0};

std::vector<int> to_ints(const std::vector<long>& v) { return std::vector<int>(v.begin(), v.end()); }
std::vector<long> to_longs(const std::vector<int>& v) { return std::vector<long>(v.begin(), v.end()); }

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
Var<T> pool_to(const Var<T>& x, int side) {
  const int f = x.dim(1) / side;
  return f == 1 ? x : avg_pool(x, f);
}

template <typename T>
Var<T> add_positions(const Var<T>& x, const Var<T>& pos) {
  const int b = x.dim(0), n = pos.dim(0);
  return add(x, gather_rows(pos, grid::tile(n, b), x.shape()));
}

}  // namespace

std::uint64_t layout_encode_count() { return g_layout_encodes.load(); }

std::array<double, 3> process_scalars(const ProcessCondition& c) {
  return {c.resist_threshold * 10.0, c.focus_nm / 50.0, (c.dose - 1.0) * 5.0};
}

void GenConfig::validate() const {
  if (widths.empty() || widths.size() != depths.size()) throw ConfigError("gen: widths and depths must be non-empty and equal length");
  if (image <= 0 || patch <= 0 || window <= 0 || heads <= 0 || mlp_ratio <= 0 || scalar_hidden <= 0)
    throw ConfigError("gen: sizes must be positive");
  if (image % (patch << (stages() - 1)) != 0) throw ConfigError("gen: image side not divisible by patch * 2^(stages-1)");
  for (int s = 0; s < stages(); ++s) {
    const int g = image / (patch << s);
    if (g % window != 0) throw ConfigError("gen: window must divide the token grid of every stage");
    if (widths[s] % heads != 0) throw ConfigError("gen: heads must divide every stage width");
    if (depths[s] <= 0) throw ConfigError("gen: stage depth must be positive");
  }
  if (proc_channels.size() != 2) throw ConfigError("gen: proc_channels needs two entries");
  if (proc_size % 4 != 0 || process_grid() != token_grid())
    throw ConfigError("gen: process grid (proc_size / 4) must equal the layout token grid");
  if (image % proc_size != 0) throw ConfigError("gen: proc_size must divide the image side");
  if (dec_widths.empty() || (token_grid() << dec_widths.size()) != image)
    throw ConfigError("gen: decoder ladder does not reach the image side");
  for (size_t k = 0; k < dec_widths.size(); ++k)
    if ((token_grid() << (k + 1)) <= attn_grid && dec_widths[k] % heads != 0)
      throw ConfigError("gen: heads must divide decoder widths that carry attention");
}

GenConfig GenConfig::from_config(const KeyValueConfig& kv) {
  GenConfig c;
  c.image = static_cast<int>(kv.get_int("gen.image", c.image));
  c.patch = static_cast<int>(kv.get_int("gen.patch", c.patch));
  c.widths = to_ints(kv.get_ints("gen.widths", to_longs(c.widths)));
  c.depths = to_ints(kv.get_ints("gen.depths", to_longs(c.depths)));
  c.window = static_cast<int>(kv.get_int("gen.window", c.window));
  c.heads = static_cast<int>(kv.get_int("gen.heads", c.heads));
  c.mlp_ratio = static_cast<int>(kv.get_int("gen.mlp_ratio", c.mlp_ratio));
  c.proc_size = static_cast<int>(kv.get_int("gen.proc_size", c.proc_size));
  c.proc_channels = to_ints(kv.get_ints("gen.proc_channels", to_longs(c.proc_channels)));
  c.dec_widths = to_ints(kv.get_ints("gen.dec_widths", to_longs(c.dec_widths)));
  c.scalar_hidden = static_cast<int>(kv.get_int("gen.scalar_hidden", c.scalar_hidden));
  c.attn_grid = static_cast<int>(kv.get_int("gen.attn_grid", c.attn_grid));
  c.init_seed = static_cast<std::uint64_t>(kv.get_int("gen.init_seed", static_cast<long>(c.init_seed)));
  c.validate();
  return c;
}

void GenConfig::write_config(KeyValueConfig& kv) const {
  kv.set("gen.image", std::to_string(image));
  kv.set("gen.patch", std::to_string(patch));
  kv.set("gen.widths", join(widths));
  kv.set("gen.depths", join(depths));
  kv.set("gen.window", std::to_string(window));
  kv.set("gen.heads", std::to_string(heads));
  kv.set("gen.mlp_ratio", std::to_string(mlp_ratio));
  kv.set("gen.proc_size", std::to_string(proc_size));
  kv.set("gen.proc_channels", join(proc_channels));
  kv.set("gen.dec_widths", join(dec_widths));
  kv.set("gen.scalar_hidden", std::to_string(scalar_hidden));
  kv.set("gen.attn_grid", std::to_string(attn_grid));
  kv.set("gen.init_seed", std::to_string(init_seed));
}

template <typename T>
Generator<T>::Generator(const GenConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  const int s_count = cfg_.stages(), d = cfg_.width();
  const int g0 = cfg_.image / cfg_.patch;
  patch_embed_ = Conv<T>(1, cfg_.widths[0], cfg_.patch, cfg_.patch, 0, rng);
  pos_embed_ = param_normal<T>({g0 * g0, cfg_.widths[0]}, T(0.02), rng);
  swin_.resize(s_count);
  for (int s = 0; s < s_count; ++s) {
    for (int i = 0; i < cfg_.depths[s]; ++i)
      swin_[s].emplace_back(cfg_.widths[s], cfg_.heads, cfg_.window, i % 2 ? cfg_.window / 2 : 0, cfg_.mlp_ratio, rng);
    if (s + 1 < s_count) {
      merge_norm_.emplace_back(4 * cfg_.widths[s]);
      merge_.emplace_back(4 * cfg_.widths[s], cfg_.widths[s + 1], rng, false);
    }
  }

  for (int j = 0; j < 3; ++j) scalar_mlp_.emplace_back(1, cfg_.scalar_hidden, 1, rng);
  const int pc0 = cfg_.proc_channels[0], pc1 = cfg_.proc_channels[1];
  proc_conv0_w_ = param_normal<T>({9 * 5, pc0}, T(std::sqrt(2.0 / 45.0)), rng);
  proc_conv0_b_ = param_const<T>({pc0}, T(0));
  proc_conv1_ = Conv<T>(pc0, pc1, 3, 2, 1, rng);
  proc_proj_ = Linear<T>(pc1, d, rng);
  proc_pos_ = param_normal<T>({cfg_.process_grid() * cfg_.process_grid(), d}, T(0.02), rng);
  proc_attn0_ = AttnBlock<T>(d, cfg_.heads, cfg_.mlp_ratio, rng);
  proc_res_ = ResBlock<T>(d, rng);
  proc_attn1_ = AttnBlock<T>(d, cfg_.heads, cfg_.mlp_ratio, rng);

  xattn_.q = Linear<T>(d, d, rng);
  xattn_.k = Linear<T>(d, d, rng);
  xattn_.v = Linear<T>(d, d, rng);
  xattn_.o = Linear<T>(d, d, rng);
  xattn_.norm = LayerNorm<T>(d);
  xattn_.heads = cfg_.heads;

  dec_in_ = Conv<T>(2 * d, d, 1, 1, 0, rng);
  dec_attn_ = AttnBlock<T>(d, cfg_.heads, cfg_.mlp_ratio, rng);
  int cin = d;
  for (size_t k = 0; k < cfg_.dec_widths.size(); ++k) {
    const int cout = cfg_.dec_widths[k];
    const int s = s_count - 2 - static_cast<int>(k);
    const int skip = s >= 0 ? cfg_.widths[s] : 0;
    up_.emplace_back(cin, cout, rng);
    merge_conv_.emplace_back(cout + skip + 2, cout, 3, 1, 1, rng);
    dec_res_.emplace_back(cout, rng);
    if ((cfg_.token_grid() << (k + 1)) <= cfg_.attn_grid)
      dec_level_attn_.emplace_back(AttnBlock<T>(cout, cfg_.heads, cfg_.mlp_ratio, rng));
    else
      dec_level_attn_.emplace_back(std::nullopt);
    cin = cout;
  }
  head0_ = Conv<T>(cin, cin, 3, 1, 1, rng);
  head1_ = Conv<T>(cin, 1, 1, 1, 0, rng);
}

template <typename T>
ParamList<T> Generator<T>::parameters() const {
  ParamList<T> ps;
  patch_embed_.collect("gen.layout.patch", ps);
  ps.push_back({"gen.layout.pos", pos_embed_});
  for (size_t s = 0; s < swin_.size(); ++s) {
    for (size_t i = 0; i < swin_[s].size(); ++i)
      swin_[s][i].collect("gen.layout.s" + std::to_string(s) + ".b" + std::to_string(i), ps);
    if (s < merge_.size()) {
      merge_norm_[s].collect("gen.layout.merge" + std::to_string(s) + ".norm", ps);
      merge_[s].collect("gen.layout.merge" + std::to_string(s), ps);
    }
  }
  for (size_t j = 0; j < scalar_mlp_.size(); ++j) scalar_mlp_[j].collect("gen.proc.scalar" + std::to_string(j), ps);
  ps.push_back({"gen.proc.conv0.w", proc_conv0_w_});
  ps.push_back({"gen.proc.conv0.b", proc_conv0_b_});
  proc_conv1_.collect("gen.proc.conv1", ps);
  proc_proj_.collect("gen.proc.proj", ps);
  ps.push_back({"gen.proc.pos", proc_pos_});
  proc_attn0_.collect("gen.proc.attn0", ps);
  proc_res_.collect("gen.proc.res", ps);
  proc_attn1_.collect("gen.proc.attn1", ps);
  xattn_.q.collect("gen.fuse.q", ps);
  xattn_.k.collect("gen.fuse.k", ps);
  xattn_.v.collect("gen.fuse.v", ps);
  xattn_.o.collect("gen.fuse.o", ps);
  xattn_.norm.collect("gen.fuse.norm", ps);
  dec_in_.collect("gen.dec.in", ps);
  dec_attn_.collect("gen.dec.attn", ps);
  for (size_t k = 0; k < up_.size(); ++k) {
    const std::string p = "gen.dec.l" + std::to_string(k);
    up_[k].collect(p + ".up", ps);
    merge_conv_[k].collect(p + ".merge", ps);
    dec_res_[k].collect(p + ".res", ps);
    if (dec_level_attn_[k]) dec_level_attn_[k]->collect(p + ".attn", ps);
  }
  head0_.collect("gen.dec.head0", ps);
  head1_.collect("gen.dec.head1", ps);
  return ps;
}

template <typename T>
LayoutEmbedding<T> Generator<T>::encode_layout(const Var<T>& layout) const {
  if (layout.value().rank() != 4 || layout.dim(1) != cfg_.image || layout.dim(2) != cfg_.image || layout.dim(3) != 1)
    throw ConfigError("encode_layout: expected [B, " + std::to_string(cfg_.image) + ", " + std::to_string(cfg_.image) +
                      ", 1], got " + shape_str(layout.shape()));
  ++g_layout_encodes;
  const int b = layout.dim(0);
  Var<T> x = add_positions(patch_embed_(layout), pos_embed_);
  LayoutEmbedding<T> out;
  for (size_t s = 0; s < swin_.size(); ++s) {
    for (const auto& blk : swin_[s]) x = blk(x);
    out.stages.push_back(x);
    if (s < merge_.size()) {
      const int h = x.dim(1), w = x.dim(2), c = x.dim(3);
      x = merge_[s](merge_norm_[s](gather_rows(x, grid::space_to_depth(b, h, w), {b, h / 2, w / 2, 4 * c})));
    }
  }
  out.h = x.dim(1);
  out.w = x.dim(2);
  out.tokens = reshape(x, {b, out.h * out.w, x.dim(3)});
  return out;
}

template <typename T>
Var<T> Generator<T>::process_input(const std::vector<ProcessCondition>& conds, const std::optional<Var<T>>& extra) const {
  const int b = static_cast<int>(conds.size()), s = cfg_.proc_size;
  if (b == 0) throw InputError("encode_process: empty condition batch");
  Tensor<T> source(Shape{b, s, s, 1});
  Tensor<T> scal[3] = {Tensor<T>(Shape{b, 1}), Tensor<T>(Shape{b, 1}), Tensor<T>(Shape{b, 1})};
  for (int i = 0; i < b; ++i) {
    const auto& src = conds[i].source_raster;
    if (src.size() == 0) throw InputError("encode_process: condition without a source raster");
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        source.data((static_cast<long>(i) * s + y) * s + x) = T(src(y * src.rows() / s, x * src.cols() / s));
    const auto v = process_scalars(conds[i]);
    for (int j = 0; j < 3; ++j) scal[j].data(i) = T(v[j]);
  }
  std::vector<Var<T>> channels{Var<T>::constant(std::move(source))};
  for (int j = 0; j < 3; ++j)
    channels.push_back(gather_rows(scalar_mlp_[j](Var<T>::constant(scal[j])), grid::repeat_each(b, s * s), {b, s, s, 1}));
  if (extra) {
    if (extra->dim(0) != b || extra->dim(1) != cfg_.image) throw InputError("encode_process: mask channel shape mismatch");
    channels.push_back(pool_to(*extra, s));
  }
  return concat_cols(channels);
}

template <typename T>
Var<T> Generator<T>::encode_process(const std::vector<ProcessCondition>& conds, const std::optional<Var<T>>& extra) const {
  const Var<T> in = process_input(conds, extra);
  const int b = in.dim(0), g = cfg_.process_grid(), d = cfg_.width();
  Var<T> w0 = proc_conv0_w_;
  if (!extra) {
    std::vector<int> rows;
    for (int r = 0; r < 45; ++r)
      if (r % 5 != 4) rows.push_back(r);
    w0 = gather_rows(proc_conv0_w_, rows, {36, proc_conv0_w_.dim(1)});
  }
  Var<T> x = gelu(conv2d(in, w0, std::optional<Var<T>>(proc_conv0_b_), 3, 2, 1));
  x = gelu(proc_conv1_(x));
  Var<T> t = reshape(add_positions(proc_proj_(x), proc_pos_), {b, g * g, d});
  t = proc_attn0_(t);
  t = reshape(proc_res_(reshape(t, {b, g, g, d})), {b, g * g, d});
  return proc_attn1_(t);
}

template <typename T>
FusedFeatures<T> Generator<T>::fuse(const Var<T>& proc, const LayoutEmbedding<T>& lay) const {
  if (proc.dim(2) != lay.tokens.dim(2) || proc.dim(0) != lay.tokens.dim(0))
    throw ConfigError("cross_attention_fuse: width or batch mismatch");
  FusedFeatures<T> f;
  const Var<T> a = attention<T>(xattn_.q(proc), xattn_.k(lay.tokens), xattn_.v(lay.tokens), xattn_.heads,
                             std::optional<Var<T>>(), nullptr, &f.attention_maps);
  f.tokens = xattn_.norm(add(proc, xattn_.o(a)));
  f.h = f.w = cfg_.process_grid();
  return f;
}

template <typename T>
Var<T> Generator<T>::decode(const FusedFeatures<T>& fused, const LayoutEmbedding<T>& lay, const Var<T>& layout,
                            const Var<T>& extra) const {
  const int b = fused.tokens.dim(0), g = cfg_.token_grid(), d = cfg_.width();
  Var<T> x = dec_in_(concat_cols<T>({reshape(fused.tokens, {b, g, g, d}), lay.stages.back()}));
  x = reshape(dec_attn_(reshape(x, {b, g * g, d})), {b, g, g, d});
  const Var<T> raw = concat_cols<T>({layout, extra});
  const int s_count = cfg_.stages();
  for (size_t k = 0; k < up_.size(); ++k) {
    x = up_[k](x);
    const int side = x.dim(1), c = x.dim(3);
    std::vector<Var<T>> parts{x};
    const int s = s_count - 2 - static_cast<int>(k);
    if (s >= 0) parts.push_back(lay.stages[s]);
    parts.push_back(pool_to(raw, side));
    x = dec_res_[k](gelu(merge_conv_[k](concat_cols(parts))));
    if (dec_level_attn_[k]) x = reshape((*dec_level_attn_[k])(reshape(x, {b, side * side, c})), {b, side, side, c});
  }
  return sigmoid(head1_(gelu(head0_(x))));
}

template <typename T>
Var<T> Generator<T>::contour_from_mask(const LayoutEmbedding<T>& lay, const Var<T>& layout,
                                       const std::vector<ProcessCondition>& conds, const Var<T>& mask,
                                       FusedFeatures<T>* fused) const {
  FusedFeatures<T> f = fuse(encode_process(conds, mask), lay);
  Var<T> out = decode(f, lay, layout, mask);
  if (fused) *fused = std::move(f);
  return out;
}

template <typename T>
GenerationOutput<T> Generator<T>::generate(const Var<T>& layout, const std::vector<ProcessCondition>& conds,
                                           bool soft) const {
  if (static_cast<int>(conds.size()) != layout.dim(0)) throw InputError("generate: one condition per layout required");
  GenerationOutput<T> out;
  const LayoutEmbedding<T> lay = encode_layout(layout);
  out.mask_fused = fuse(encode_process(conds, std::nullopt), lay);
  const Var<T> zeros = Var<T>::constant(Tensor<T>(layout.shape()));
  out.mask_prob = decode(out.mask_fused, lay, layout, zeros);
  const Var<T> m = soft ? out.mask_prob : binarize_ste(out.mask_prob);
  out.contour_prob = contour_from_mask(lay, layout, conds, m, &out.fused);
  return out;
}

template class Generator<float>;
template class Generator<double>;

}  // namespace lmt
