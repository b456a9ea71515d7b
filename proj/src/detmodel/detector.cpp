#include "lithomt/detmodel/detector.hpp"

#include <cmath>

#include "lithomt/error.hpp"

namespace lmt {

namespace {

std::vector<int> to_ints(const std::vector<long>& v) { return std::vector<int>(v.begin(), v.end()); }
std::vector<long> to_longs(const std::vector<int>& v) { return std::vector<long>(v.begin(), v.end()); }

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
Var<T> tile_batch(const Var<T>& x, int b) {
  Shape s = x.shape();
  const int rows = static_cast<int>(x.value().rows());
  s.insert(s.begin(), b);
  return gather_rows(x, grid::tile(rows, b), s);
}

template <typename T>
Var<T> tile_batch(const Tensor<T>& x, int b) {
  return tile_batch(Var<T>::constant(x), b);
}

template <typename T>
Var<T> resize_to(const Var<T>& x, int side) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h == side && w == side) return x;
  if (h % side == 0 && w % side == 0) return avg_pool(x, h / side);
  return gather_rows(x, grid::resize_nearest(b, h, w, side, side), {b, side, side, c});
}

}  // namespace

void DetConfig::validate() const {
  if (image <= 0 || image % 32 != 0) throw ConfigError("det: image side must be a positive multiple of 32");
  if (stem.size() != 2 || channels.size() != 3) throw ConfigError("det: stem needs 2 widths and channels 3");
  if (width <= 0 || heads <= 0 || width % heads != 0) throw ConfigError("det: heads must divide the width");
  if (width % 4 != 0 || (width / 4) % 2 != 0) throw ConfigError("det: width must be a multiple of 8");
  if (queries <= 0 || decoder_layers <= 0 || ffn <= 0) throw ConfigError("det: queries, layers and ffn must be positive");
  if (!(prior_prob > 0 && prior_prob < 1)) throw ConfigError("det: prior probability must lie in (0, 1)");
  if (unified && task != Task::lrc) throw ConfigError("det: generator injection is only defined for LRC");
  if (context_width <= 0) throw ConfigError("det: context width must be positive");
}

DetConfig DetConfig::from_config(const KeyValueConfig& kv) {
  DetConfig c;
  c.task = parse_task(kv.get_string("det.task", to_string(c.task)));
  c.image = static_cast<int>(kv.get_int("det.image", c.image));
  c.stem = to_ints(kv.get_ints("det.stem", to_longs(c.stem)));
  c.channels = to_ints(kv.get_ints("det.channels", to_longs(c.channels)));
  c.width = static_cast<int>(kv.get_int("det.width", c.width));
  c.heads = static_cast<int>(kv.get_int("det.heads", c.heads));
  c.ffn = static_cast<int>(kv.get_int("det.ffn", c.ffn));
  c.queries = static_cast<int>(kv.get_int("det.queries", c.queries));
  c.decoder_layers = static_cast<int>(kv.get_int("det.decoder_layers", c.decoder_layers));
  c.prior_prob = kv.get_double("det.prior_prob", c.prior_prob);
  c.unified = kv.get_bool("det.unified", c.unified);
  c.context_width = static_cast<int>(kv.get_int("det.context_width", c.context_width));
  c.init_seed = static_cast<std::uint64_t>(kv.get_int("det.init_seed", static_cast<long>(c.init_seed)));
  c.validate();
  return c;
}

void DetConfig::write_config(KeyValueConfig& kv) const {
  kv.set("det.task", to_string(task));
  kv.set("det.image", std::to_string(image));
  kv.set("det.stem", join(stem));
  kv.set("det.channels", join(channels));
  kv.set("det.width", std::to_string(width));
  kv.set("det.heads", std::to_string(heads));
  kv.set("det.ffn", std::to_string(ffn));
  kv.set("det.queries", std::to_string(queries));
  kv.set("det.decoder_layers", std::to_string(decoder_layers));
  std::ostringstream pp;
  pp.precision(17);
  pp << prior_prob;
  kv.set("det.prior_prob", pp.str());
  kv.set("det.unified", unified ? "true" : "false");
  kv.set("det.context_width", std::to_string(context_width));
  kv.set("det.init_seed", std::to_string(init_seed));
}

template <typename T>
Tensor<T> sine_positions(int h, int w, int d) {
  Tensor<T> out(Shape{h * w, d});
  const int half = d / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int i = 0; i < half; ++i) {
        const double t = std::pow(10000.0, 2.0 * (i / 2) / half);
        const double ay = (y + 0.5) / h * 2 * M_PI / t, ax = (x + 0.5) / w * 2 * M_PI / t;
        out.data((static_cast<long>(y) * w + x) * d + i) = T(i % 2 ? std::cos(ay) : std::sin(ay));
        out.data((static_cast<long>(y) * w + x) * d + half + i) = T(i % 2 ? std::cos(ax) : std::sin(ax));
      }
  return out;
}

template <typename T>
Tensor<T> stack_rasters(const std::vector<const BinaryRaster*>& rs) {
  if (rs.empty()) throw InputError("stack_rasters: empty batch");
  const int h = static_cast<int>(rs[0]->rows()), w = static_cast<int>(rs[0]->cols());
  Tensor<T> t(Shape{static_cast<int>(rs.size()), h, w, 1});
  for (size_t i = 0; i < rs.size(); ++i) {
    if (rs[i]->rows() != h || rs[i]->cols() != w) throw InputError("stack_rasters: raster shapes differ");
    for (int p = 0; p < h * w; ++p) t.data(static_cast<long>(i) * h * w + p) = rs[i]->pixels.data()[p] ? T(1) : T(0);
  }
  return t;
}

template <typename T>
Detector<T>::Detector(const DetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  const int d = cfg_.width;
  stem_a_ = {Conv<T>(1, cfg_.stem[0], 3, 2, 1, rng), Conv<T>(cfg_.stem[0], cfg_.stem[1], 3, 2, 1, rng)};
  if (cfg_.dual()) {
    stem_b_ = {Conv<T>(1, cfg_.stem[0], 3, 2, 1, rng), Conv<T>(cfg_.stem[0], cfg_.stem[1], 3, 2, 1, rng)};
    stem_fuse_ = Conv<T>(2 * cfg_.stem[1], cfg_.stem[1], 1, 1, 0, rng);
  }
  int c = cfg_.stem[1];
  for (int i = 0; i < 3; ++i) {
    down_.emplace_back(c, cfg_.channels[i], 3, 2, 1, rng);
    stage_.emplace_back(cfg_.channels[i], rng);
    c = cfg_.channels[i];
  }
  enc_in_ = Linear<T>(cfg_.channels[2], d, rng);
  enc_qk_ = Linear<T>(d, 2 * d, rng);
  enc_v_ = Linear<T>(d, d, rng);
  enc_o_ = Linear<T>(d, d, rng);
  enc_n1_ = LayerNorm<T>(d);
  enc_n2_ = LayerNorm<T>(d);
  enc_ffn_ = Mlp<T>(d, cfg_.ffn, d, rng);
  fuse_ = Conv<T>(cfg_.channels[0] + cfg_.channels[1] + d, d, 1, 1, 0, rng);
  if (cfg_.unified) {
    ctx_proj_ = Linear<T>(cfg_.context_width, d, rng);
    Conv<T> f(2 * d, d, 1, 1, 0, rng);
    Tensor<T> w(Shape{2 * d, d});
    for (int i = 0; i < d; ++i) w.data(static_cast<long>(i) * d + i) = T(1);
    f.w.mutable_value() = w;
    ctx_fuse_ = f;
  }

  query_content_ = param_normal<T>({cfg_.queries, d}, T(0.1), rng);
  Tensor<T> ref(Shape{cfg_.queries, 4});
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int q = 0; q < cfg_.queries; ++q) {
    const double vals[4] = {u(rng), u(rng), 0.1, 0.1};
    for (int j = 0; j < 4; ++j) ref.data(q * 4 + j) = T(std::log(vals[j] / (1 - vals[j])));
  }
  query_ref_ = Var<T>::leaf(ref);
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    DecoderLayer dl;
    dl.sa_qk = Linear<T>(d, 2 * d, rng);
    dl.sa_v = Linear<T>(d, d, rng);
    dl.sa_o = Linear<T>(d, d, rng);
    dl.ca_q = Linear<T>(d, d, rng);
    dl.ca_k = Linear<T>(d, d, rng);
    dl.ca_v = Linear<T>(d, d, rng);
    dl.ca_o = Linear<T>(d, d, rng);
    dl.n1 = LayerNorm<T>(d);
    dl.n2 = LayerNorm<T>(d);
    dl.n3 = LayerNorm<T>(d);
    dl.ffn = Mlp<T>(d, cfg_.ffn, d, rng);
    layers_.push_back(std::move(dl));
  }
  query_pos_ = Mlp<T>(d, d, d, rng);
  class_head_ = Linear<T>(d, kClassesPerTask, rng);
  class_head_.b.mutable_value().data.setConstant(T(-std::log((1 - cfg_.prior_prob) / cfg_.prior_prob)));
  box_head_ = Mlp<T>(d, d, 4, rng);
  box_head_.fc2.w.mutable_value().data.setZero();
}

template <typename T>
ParamList<T> Detector<T>::parameters() const {
  ParamList<T> ps;
  stem_a_.c0.collect("det.stem_a.c0", ps);
  stem_a_.c1.collect("det.stem_a.c1", ps);
  if (cfg_.dual()) {
    stem_b_.c0.collect("det.stem_b.c0", ps);
    stem_b_.c1.collect("det.stem_b.c1", ps);
    stem_fuse_->collect("det.stem_fuse", ps);
  }
  for (int i = 0; i < 3; ++i) {
    down_[i].collect("det.down" + std::to_string(i), ps);
    stage_[i].collect("det.stage" + std::to_string(i), ps);
  }
  enc_in_.collect("det.enc.in", ps);
  enc_qk_.collect("det.enc.qk", ps);
  enc_v_.collect("det.enc.v", ps);
  enc_o_.collect("det.enc.o", ps);
  enc_n1_.collect("det.enc.n1", ps);
  enc_n2_.collect("det.enc.n2", ps);
  enc_ffn_.collect("det.enc.ffn", ps);
  fuse_.collect("det.fuse", ps);
  for (auto& p : injection_parameters()) ps.push_back(p);
  ps.push_back({"det.query.content", query_content_});
  ps.push_back({"det.query.ref", query_ref_});
  for (size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "det.dec" + std::to_string(l);
    const auto& dl = layers_[l];
    dl.sa_qk.collect(p + ".sa_qk", ps);
    dl.sa_v.collect(p + ".sa_v", ps);
    dl.sa_o.collect(p + ".sa_o", ps);
    dl.ca_q.collect(p + ".ca_q", ps);
    dl.ca_k.collect(p + ".ca_k", ps);
    dl.ca_v.collect(p + ".ca_v", ps);
    dl.ca_o.collect(p + ".ca_o", ps);
    dl.n1.collect(p + ".n1", ps);
    dl.n2.collect(p + ".n2", ps);
    dl.n3.collect(p + ".n3", ps);
    dl.ffn.collect(p + ".ffn", ps);
  }
  query_pos_.collect("det.query.pos", ps);
  class_head_.collect("det.head.class", ps);
  box_head_.collect("det.head.box", ps);
  return ps;
}

template <typename T>
ParamList<T> Detector<T>::injection_parameters() const {
  ParamList<T> ps;
  if (ctx_proj_) ctx_proj_->collect("det.inject.proj", ps);
  if (ctx_fuse_) ctx_fuse_->collect("det.inject.fuse", ps);
  return ps;
}

template <typename T>
long Detector<T>::stem_parameter_count() const {
  ParamList<T> ps;
  stem_a_.c0.collect("a0", ps);
  stem_a_.c1.collect("a1", ps);
  if (cfg_.dual()) {
    stem_b_.c0.collect("b0", ps);
    stem_b_.c1.collect("b1", ps);
    stem_fuse_->collect("f", ps);
  }
  return count_parameters(ps);
}

template <typename T>
Var<T> Detector<T>::run_stem(const Stem& s, const Var<T>& x) const {
  return gelu(s.c1(gelu(s.c0(x))));
}

template <typename T>
PyramidFeatures<T> Detector<T>::backbone(const Var<T>& primary, const std::optional<Var<T>>& secondary) const {
  if (cfg_.dual() != secondary.has_value())
    throw InputError(cfg_.dual() ? "backbone: dual-branch model needs contour and layout" : "backbone: single-input model got two rasters");
  if (secondary && secondary->shape() != primary.shape()) throw InputError("backbone: contour and layout shapes differ");
  Var<T> x = run_stem(stem_a_, primary);
  if (secondary) x = gelu((*stem_fuse_)(concat_cols<T>({x, run_stem(stem_b_, *secondary)})));
  PyramidFeatures<T> p;
  Var<T>* levels[3] = {&p.s1, &p.s2, &p.s3};
  for (int i = 0; i < 3; ++i) {
    x = stage_[i](gelu(down_[i](x)));
    *levels[i] = x;
  }
  return p;
}

template <typename T>
Var<T> Detector<T>::encode_global(const Var<T>& s3, Tensor<T>* attn) const {
  const int b = s3.dim(0), h = s3.dim(1), w = s3.dim(2), d = cfg_.width;
  const Var<T> t = enc_in_(reshape(s3, {b, h * w, s3.dim(3)}));
  const Var<T> pos = tile_batch(sine_positions<T>(h, w, d), b);
  const Var<T> qk = enc_qk_(add(t, pos));
  const Var<T> a = attention<T>(slice_cols(qk, 0, d), slice_cols(qk, d, d), enc_v_(t), cfg_.heads,
                                std::optional<Var<T>>(), nullptr, attn);
  Var<T> y = enc_n1_(add(t, enc_o_(a)));
  y = enc_n2_(add(y, enc_ffn_(y)));
  return reshape(y, {b, h, w, d});
}

template <typename T>
Var<T> Detector<T>::fuse_pyramid(const PyramidFeatures<T>& p) const {
  const int side = p.s2.dim(1);
  return fuse_(concat_cols<T>({resize_to(p.s1, side), p.s2, resize_to(p.s3, side)}));
}

template <typename T>
Var<T> Detector<T>::inject(const Var<T>& memory, const Var<T>& context_tokens, int ctx_h, int ctx_w) const {
  if (!ctx_proj_) throw UsageError("inject_generator_context: detector was not built in unified mode");
  const int b = memory.dim(0);
  if (context_tokens.dim(0) != b || context_tokens.dim(1) != ctx_h * ctx_w)
    throw InputError("inject_generator_context: context token grid mismatch");
  const Var<T> ctx = resize_to(reshape((*ctx_proj_)(context_tokens), {b, ctx_h, ctx_w, cfg_.width}), memory.dim(1));
  return (*ctx_fuse_)(concat_cols<T>({memory, ctx}));
}

template <typename T>
Var<T> Detector<T>::self_attention(const DecoderLayer& l, const Var<T>& content, const Var<T>& qpos) const {
  const int d = cfg_.width;
  const Var<T> qk = l.sa_qk(add(content, qpos));
  return l.sa_o(attention<T>(slice_cols(qk, 0, d), slice_cols(qk, d, d), l.sa_v(content), cfg_.heads));
}

template <typename T>
DetForward<T> Detector<T>::decode(const Var<T>& memory) const {
  const int b = memory.dim(0), h = memory.dim(1), w = memory.dim(2), d = cfg_.width, q = cfg_.queries;
  const Var<T> mem = reshape(memory, {b, h * w, d});
  const Var<T> mem_k = add(mem, tile_batch(sine_positions<T>(h, w, d), b));
  Var<T> content = tile_batch(query_content_, b);
  Var<T> ref = sigmoid(tile_batch(query_ref_, b));
  DetForward<T> out;
  for (const auto& l : layers_) {
    const Var<T> qpos = query_pos_(sine_embed(ref, d / 4));
    content = l.n1(add(content, self_attention(l, content, qpos)));
    const Var<T> ca = attention<T>(l.ca_q(add(content, qpos)), l.ca_k(mem_k), l.ca_v(mem), cfg_.heads);
    content = l.n2(add(content, l.ca_o(ca)));
    content = l.n3(add(content, l.ffn(content)));
    const Var<T> box = sigmoid(add(inverse_sigmoid(ref), box_head_(content)));
    out.probs.push_back(sigmoid(class_head_(content)));
    out.boxes.push_back(box);
    ref = detach(box);
  }
  (void)q;
  return out;
}

template <typename T>
DetForward<T> Detector<T>::forward(const std::vector<Var<T>>& inputs, const FusedFeatures<T>* context) const {
  const size_t want = cfg_.dual() ? 2 : 1;
  if (inputs.size() != want)
    throw InputError("detect: " + to_string(cfg_.task) + " expects " + std::to_string(want) + " raster(s), got " +
                     std::to_string(inputs.size()));
  for (const auto& x : inputs)
    if (x.value().rank() != 4 || x.dim(1) != cfg_.image || x.dim(2) != cfg_.image || x.dim(3) != 1)
      throw InputError("detect: expected [B, " + std::to_string(cfg_.image) + ", " + std::to_string(cfg_.image) +
                       ", 1] input, got " + shape_str(x.shape()));
  if (context && !cfg_.unified) throw UsageError("detect: generator context given to a non-unified detector");
  PyramidFeatures<T> p = backbone(inputs[0], cfg_.dual() ? std::optional<Var<T>>(inputs[1]) : std::nullopt);
  Tensor<T> attn;
  p.s3 = encode_global(p.s3, &attn);
  Var<T> memory = fuse_pyramid(p);
  if (cfg_.unified) {
    if (context) {
      memory = inject(memory, context->tokens, context->h, context->w);
    } else {
      const int m = cfg_.memory_grid();
      memory = inject(memory, Var<T>::constant(Tensor<T>(Shape{memory.dim(0), m * m, cfg_.context_width})), m, m);
    }
  }
  DetForward<T> out = decode(memory);
  out.encoder_attention = std::move(attn);
  return out;
}

template <typename T>
std::vector<std::vector<Detection>> Detector<T>::detect(Task task, const std::vector<std::vector<const BinaryRaster*>>& inputs,
                                                       const FusedFeatures<T>* context) const {
  if (task != cfg_.task) throw InputError("detect: model was trained for " + to_string(cfg_.task));
  NoGradGuard guard;
  std::vector<Var<T>> vars;
  for (const auto& channel : inputs) vars.push_back(Var<T>::constant(stack_rasters<T>(channel)));
  const DetForward<T> f = forward(vars, context);
  const Tensor<T>& probs = f.probs.back().value();
  const Tensor<T>& boxes = f.boxes.back().value();
  const int b = probs.dim(0), q = probs.dim(1), k = probs.dim(2);
  std::vector<std::vector<Detection>> out(b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < q; ++j) {
      const long base = (static_cast<long>(i) * q + j);
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (probs.data(base * k + c) > probs.data(base * k + best)) best = c;
      Detection det;
      det.task = task;
      det.klass = class_from_index(task, best);
      det.confidence = double(probs.data(base * k + best));
      det.box = {double(boxes.data(base * 4)), double(boxes.data(base * 4 + 1)), double(boxes.data(base * 4 + 2)),
                 double(boxes.data(base * 4 + 3))};
      out[i].push_back(det);
    }
  return out;
}

template class Detector<float>;
template class Detector<double>;
template Tensor<float> sine_positions(int, int, int);
template Tensor<double> sine_positions(int, int, int);
template Tensor<float> stack_rasters(const std::vector<const BinaryRaster*>&);
template Tensor<double> stack_rasters(const std::vector<const BinaryRaster*>&);

}  // namespace lmt
