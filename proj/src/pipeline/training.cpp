#include "lithomt/pipeline/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "lithomt/error.hpp"
#include "lithomt/hash.hpp"

namespace lmt {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

Rng step_rng(std::uint64_t seed, long step, std::uint64_t stream) {
  return Rng(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(step)), stream));
}

std::vector<Grid<float>> split_images(const Tensor<float>& t) {
  const int n = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<Grid<float>> out;
  for (int i = 0; i < n; ++i)
    out.push_back(Eigen::Map<const Grid<float>>(t.ptr() + static_cast<long>(i) * h * w, h, w));
  return out;
}

Tensor<float> join_images(const std::vector<Grid<float>>& gs) {
  const int h = static_cast<int>(gs[0].rows()), w = static_cast<int>(gs[0].cols());
  Tensor<float> t(Shape{static_cast<int>(gs.size()), h, w, 1});
  for (size_t i = 0; i < gs.size(); ++i)
    Eigen::Map<Grid<float>>(t.ptr() + static_cast<long>(i) * h * w, h, w) = gs[i];
  return t;
}

std::vector<ProcessCondition> conditions_of(const std::vector<Sample>& s, const std::vector<int>& idx) {
  std::vector<ProcessCondition> out;
  for (int i : idx) out.push_back(s[i].condition);
  return out;
}

void check_size(const TrainingSet& ts, int image) {
  if (ts.size != image)
    throw ConfigError("corpus rasters are " + std::to_string(ts.size) + " px but the model expects " +
                      std::to_string(image));
}

ParamList<float> without_prefix(const ParamList<float>& ps, const std::string& prefix) {
  ParamList<float> out;
  for (const auto& p : ps)
    if (p.first.rfind(prefix, 0) != 0) out.push_back(p);
  return out;
}

void write_log(const fs::path& path, const std::vector<StepLog>& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,lr,total,grad_norm";
  if (!log.empty())
    for (const auto& [k, v] : log.front().terms) f << "," << k;
  f << "\n";
  f.precision(9);
  for (const auto& l : log) {
    f << l.step << "," << l.lr << "," << l.total << "," << l.grad_norm;
    for (const auto& [k, v] : l.terms) f << "," << v;
    f << "\n";
  }
}

std::vector<StepLog> read_log(const fs::path& path, long before) {
  std::vector<StepLog> out;
  std::ifstream f(path);
  if (!f) return out;
  std::string line;
  std::getline(f, line);
  std::vector<std::string> names;
  {
    std::stringstream s(line);
    std::string c;
    while (std::getline(s, c, ',')) names.push_back(c);
  }
  while (std::getline(f, line)) {
    std::stringstream s(line);
    std::string c;
    std::vector<std::string> cells;
    while (std::getline(s, c, ',')) cells.push_back(c);
    if (cells.size() != names.size() || cells.size() < 4) continue;
    StepLog l;
    l.step = std::stol(cells[0]);
    if (l.step >= before) break;
    l.lr = std::stod(cells[1]);
    l.total = std::stod(cells[2]);
    l.grad_norm = std::stod(cells[3]);
    for (size_t i = 4; i < cells.size(); ++i) l.terms[names[i]] = std::stod(cells[i]);
    out.push_back(l);
  }
  return out;
}

// Shared optimization loop. `step_fn` builds the loss for one step, runs
// backward and returns the logged values.
TrainResult optimize(const RunConfig& cfg, const TrainOptions& opt, const std::string& kind,
                     const ParamList<float>& trainable, const KeyValueConfig& echo, const std::string& corpus_hash,
                     const std::function<void(Checkpoint&)>& extra, const std::function<StepLog(long)>& step_fn) {
  if (opt.out_dir.empty()) throw ConfigError("training needs an output directory");
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) throw IoError("cannot create " + opt.out_dir.string() + ": " + ec.message());
  Adam<float> adam(trainable, {0.9, 0.999, 1e-8, cfg.optim.weight_decay});
  TrainResult res;
  long start = 0;
  const fs::path last = opt.out_dir / "last.ckpt", curve = opt.out_dir / "loss.csv";

  if (opt.resume && fs::exists(last)) {
    const Checkpoint c = load_checkpoint(last);
    if (c.kind != kind) throw ConfigError("resume: " + last.string() + " holds a " + c.kind + " checkpoint");
    for (const auto& [k, v] : echo.entries())
      if (c.config.get_string(k, "") != v) throw ConfigError("resume: configuration differs at " + k);
    restore_parameters(c, trainable);
    restore_optimizer(c, trainable, adam);
    start = c.step;
    res.log = read_log(curve, start);
    spdlog::info("{}: resuming at step {}", kind, start);
  }

  auto snapshot = [&](long step) {
    Checkpoint c;
    c.kind = kind;
    c.step = step;
    c.corpus_hash = corpus_hash;
    c.config = echo;
    store_parameters(c, trainable);
    extra(c);
    store_optimizer(c, trainable, adam);
    return c;
  };

  const auto t0 = Clock::now();
  long step = start;
  for (; step < cfg.steps; ++step) {
    if (opt.stop_after >= 0 && step >= opt.stop_after) break;
    zero_grads(trainable);
    StepLog l = step_fn(step);
    l.step = step;
    l.lr = scheduled_lr(cfg.optim.lr, step, cfg.optim.warmup, cfg.steps, cfg.optim.min_ratio);
    if (!std::isfinite(l.total)) {
      std::string detail;
      for (const auto& [k, v] : l.terms) detail += " " + k + "=" + std::to_string(v);
      throw NumericError(kind + ": non-finite loss at step " + std::to_string(step) + ":" + detail);
    }
    l.grad_norm = clip_grad_norm(trainable, cfg.optim.clip);
    adam.step(trainable, l.lr);
    res.log.push_back(l);
    if (opt.on_step) opt.on_step(l);
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
      std::string detail;
      for (const auto& [k, v] : l.terms) detail += fmt::format(" {}={:.4f}", k, v);
      spdlog::info("{} step {}/{} loss={:.5f}{} lr={:.2e} ({:.1f}s)", kind, step + 1, cfg.steps, l.total, detail, l.lr,
                   secs);
      write_log(curve, res.log);
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps)
      save_checkpoint(last, snapshot(step + 1));
  }
  write_log(curve, res.log);
  res.checkpoint = snapshot(step);
  if (step == cfg.steps) {
    res.final_path = opt.out_dir / "final.ckpt";
    save_checkpoint(res.final_path, res.checkpoint);
  } else {
    res.final_path = last;
  }
  save_checkpoint(last, res.checkpoint);
  return res;
}

struct DetLossAccum {
  double total = 0;
  std::map<std::string, double> terms;
  std::vector<Var<float>> nodes;
  std::vector<Tensor<float>> grads;
};

// Detection loss of every selected decoder layer, averaged over images.
DetLossAccum detection_batch_loss(const DetForward<float>& f, const std::vector<const std::vector<GtBox>*>& gts,
                                  const DetLossWeights& w, bool aux) {
  DetLossAccum acc;
  const size_t layers = f.probs.size();
  const size_t first = aux ? 0 : layers - 1;
  const int b = static_cast<int>(gts.size());
  for (size_t l = first; l < layers; ++l) {
    const Tensor<float>& pv = f.probs[l].value();
    const Tensor<float>& bv = f.boxes[l].value();
    const int q = pv.dim(1), k = pv.dim(2);
    Tensor<float> gp(pv.shape), gb(bv.shape);
    for (int i = 0; i < b; ++i) {
      DetectorOutput<float> o;
      o.probs = Tensor<float>(Shape{q, k});
      o.boxes = Tensor<float>(Shape{q, 4});
      o.probs.data = pv.data.segment(static_cast<long>(i) * q * k, q * k);
      o.boxes.data = bv.data.segment(static_cast<long>(i) * q * 4, q * 4);
      const auto t = total_detection_loss(o, *gts[i], w);
      acc.total += t.total / b;
      gp.data.segment(static_cast<long>(i) * q * k, q * k) = t.grad_probs.data / float(b);
      gb.data.segment(static_cast<long>(i) * q * 4, q * 4) = t.grad_boxes.data / float(b);
      if (l + 1 == layers) {
        acc.terms["vfl"] += t.vfl / b;
        acc.terms["fppl"] += t.fppl / b;
        acc.terms["bbox"] += t.bbox / b;
        acc.terms["giou"] += t.giou / b;
      }
    }
    acc.nodes.push_back(f.probs[l]);
    acc.nodes.push_back(f.boxes[l]);
    acc.grads.push_back(std::move(gp));
    acc.grads.push_back(std::move(gb));
  }
  return acc;
}

StepLog backprop_detection(DetLossAccum acc) {
  custom_loss(float(acc.total), acc.nodes, std::move(acc.grads)).backward();
  StepLog l;
  l.total = acc.total;
  l.terms = std::move(acc.terms);
  return l;
}

}  // namespace

TrainingSet load_training_set(const fs::path& corpus, Split split) {
  if (corpus.empty() || !fs::exists(corpus / "manifest.jsonl"))
    throw IoError("no corpus at '" + corpus.string() + "'");
  const CorpusManifest m = load_manifest(corpus);
  TrainingSet ts;
  ts.corpus_hash = m.content_hash;
  ts.size = m.size;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    ts.samples.push_back(load_sample(corpus, m, r));
    ts.samples.back().split = r.split;
    ts.group.push_back(r.layout_group);
  }
  if (ts.samples.empty()) throw IoError(corpus.string() + ": the " + to_string(split) + " split is empty");
  return ts;
}

GenBatchPlan plan_generator_batch(const std::vector<int>& group, int batch, std::uint64_t seed, long step) {
  std::map<int, std::vector<int>> members;
  for (size_t i = 0; i < group.size(); ++i) members[group[i]].push_back(static_cast<int>(i));
  std::vector<int> keys;
  for (const auto& [g, v] : members) keys.push_back(g);
  Rng rng = step_rng(seed, step, 1);
  std::shuffle(keys.begin(), keys.end(), rng);
  const int b = std::min<int>(batch, static_cast<int>(keys.size()));
  GenBatchPlan plan;
  std::vector<int> anchors, partners, owner;
  for (int i = 0; i < b; ++i) {
    std::vector<int> m = members[keys[i]];
    std::shuffle(m.begin(), m.end(), rng);
    anchors.push_back(m[0]);
    partners.push_back(m.size() > 1 ? m[1] : -1);
  }
  for (int a : anchors) plan.entries.push_back(a), owner.push_back(static_cast<int>(owner.size()));
  std::vector<int> partner_slot(b, -1);
  for (int i = 0; i < b; ++i)
    if (partners[i] >= 0) {
      partner_slot[i] = static_cast<int>(plan.entries.size());
      plan.entries.push_back(partners[i]);
      owner.push_back(i);
    }
  for (int i = 0; i < b; ++i) {
    if (partner_slot[i] < 0) continue;
    const int p = partner_slot[i];
    std::vector<int> neg;
    for (size_t e = 0; e < plan.entries.size(); ++e)
      if (owner[e] != i) neg.push_back(static_cast<int>(e));
    if (!neg.empty()) {
      plan.sac.push_back({i, p, neg});
      plan.sac.push_back({p, i, neg});
    }
    plan.pac.push_back({p, i});
    plan.pac.push_back({i, p});
  }
  return plan;
}

std::vector<int> plan_detector_batch(int n, int batch, std::uint64_t seed, long step) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = step_rng(seed, step, 2);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n, batch));
  return idx;
}

std::vector<const BinaryRaster*> detector_inputs(const Sample& s, Task task) {
  switch (task) {
    case Task::drc: return {&s.layout};
    case Task::mrc: return {&s.mask};
    case Task::lrc: return {&s.contour, &s.layout};
  }
  return {};
}

std::vector<GtBox> ground_truth(const Sample& s, Task task) {
  std::vector<GtBox> out;
  const int w = static_cast<int>(s.layout.cols()), h = static_cast<int>(s.layout.rows());
  for (const auto& a : s.annotations_for(task)) out.push_back({class_index(a.klass), normalize(a.bbox, w, h)});
  return out;
}

Tensor<float> raster_batch(const std::vector<const BinaryRaster*>& rs) { return stack_rasters<float>(rs); }

Generator<float> generator_from(const Checkpoint& c) {
  if (!c.has_prefix("gen.")) throw ConfigError("checkpoint holds no generator (kind " + c.kind + ")");
  Generator<float> g(GenConfig::from_config(c.config));
  restore_parameters(c, g.parameters());
  return g;
}

Detector<float> detector_from(const Checkpoint& c) {
  if (!c.has_prefix("det.")) throw ConfigError("checkpoint holds no detector (kind " + c.kind + ")");
  Detector<float> d(DetConfig::from_config(c.config));
  restore_parameters(c, d.parameters());
  return d;
}

TrainResult pretrain_generator(const RunConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  const TrainingSet ts = load_training_set(cfg.corpus, Split::train);
  check_size(ts, cfg.gen.image);
  Generator<float> gen(cfg.gen);
  const ParamList<float> ps = gen.parameters();
  spdlog::info("generator: {} parameters, {} training triplets", count_parameters(ps), ts.samples.size());

  auto step_fn = [&](long step) {
    const GenBatchPlan plan = plan_generator_batch(ts.group, cfg.batch, cfg.seed, step);
    std::vector<const BinaryRaster*> lays;
    GenBatch<float> gb;
    for (int e : plan.entries) {
      lays.push_back(&ts.samples[e].layout);
      gb.gt_mask.push_back(&ts.samples[e].mask.pixels);
      gb.gt_contour.push_back(&ts.samples[e].contour.pixels);
    }
    const auto out = gen.generate(Var<float>::constant(raster_batch(lays)), conditions_of(ts.samples, plan.entries));
    gb.mask_pred = split_images(out.mask_prob.value());
    gb.contour_pred = split_images(out.contour_prob.value());
    gb.sac = plan.sac;
    gb.pac = plan.pac;
    const auto t = total_generation_loss(gb, cfg.gen_loss);
    custom_loss(t.total, {out.mask_prob, out.contour_prob}, {join_images(t.grad_mask), join_images(t.grad_contour)})
        .backward();
    StepLog l;
    l.total = t.total;
    l.terms = {{"rec", t.rec}, {"sac", t.sac}, {"pac", t.pac}, {"contrast", t.contrast}};
    double bce = 0, dice = 0, edge = 0;
    for (size_t i = 0; i < gb.mask_pred.size(); ++i) {
      const auto r = reconstruction_loss(gb.mask_pred[i], gb.contour_pred[i], *gb.gt_mask[i], *gb.gt_contour[i],
                                         cfg.gen_loss);
      bce += (r.mask_bce + r.contour_bce) / gb.mask_pred.size();
      dice += (r.mask_dice + r.contour_dice) / gb.mask_pred.size();
      edge += (r.mask_edge + r.contour_edge) / gb.mask_pred.size();
    }
    l.terms["bce"] = bce;
    l.terms["dice"] = dice;
    l.terms["edge"] = edge;
    return l;
  };
  return optimize(cfg, opt, "generator", ps, cfg.echo(), ts.corpus_hash, [](Checkpoint&) {}, step_fn);
}

TrainResult pretrain_detector(const RunConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (cfg.det.unified) throw ConfigError("detector pre-training runs without generator injection");
  if (cfg.det.task != cfg.task) throw ConfigError("det.task and run.task disagree");
  const TrainingSet ts = load_training_set(cfg.corpus, Split::train);
  check_size(ts, cfg.det.image);
  Detector<float> det(cfg.det);
  const ParamList<float> ps = det.parameters();
  std::vector<std::vector<GtBox>> gts;
  int boxes = 0;
  for (const auto& s : ts.samples) gts.push_back(ground_truth(s, cfg.task)), boxes += gts.back().size();
  spdlog::info("detector[{}]: {} parameters, {} images, {} boxes", to_string(cfg.task), count_parameters(ps),
               ts.samples.size(), boxes);

  auto step_fn = [&](long step) {
    const auto idx = plan_detector_batch(static_cast<int>(ts.samples.size()), cfg.batch, cfg.seed, step);
    std::vector<Var<float>> inputs;
    for (size_t c = 0; c < (cfg.det.dual() ? 2u : 1u); ++c) {
      std::vector<const BinaryRaster*> rs;
      for (int i : idx) rs.push_back(detector_inputs(ts.samples[i], cfg.task)[c]);
      inputs.push_back(Var<float>::constant(raster_batch(rs)));
    }
    std::vector<const std::vector<GtBox>*> g;
    for (int i : idx) g.push_back(&gts[i]);
    return backprop_detection(detection_batch_loss(det.forward(inputs), g, cfg.det_loss, cfg.aux_loss));
  };
  return optimize(cfg, opt, "detector", ps, cfg.echo(), ts.corpus_hash, [](Checkpoint&) {}, step_fn);
}

TrainResult joint_finetune(const RunConfig& cfg_in, const TrainOptions& opt) {
  cfg_in.validate();
  const Checkpoint gck = load_checkpoint(cfg_in.gen_checkpoint);
  const Checkpoint dck = load_checkpoint(cfg_in.det_checkpoint);
  const Generator<float> gen = generator_from(gck);
  DetConfig dc = DetConfig::from_config(dck.config);
  if (dc.task != Task::lrc) throw ConfigError("joint fine-tuning needs an LRC detector checkpoint");
  dc.unified = true;
  dc.context_width = gen.config().width();
  Detector<float> det(dc);
  if (dck.has_prefix("det.inject"))
    restore_parameters(dck, det.parameters());
  else
    restore_parameters(dck, without_prefix(det.parameters(), "det.inject"));

  RunConfig cfg = cfg_in;
  cfg.gen = gen.config();
  cfg.det = dc;
  const TrainingSet ts = load_training_set(cfg.corpus, Split::train);
  check_size(ts, cfg.gen.image);
  const ParamList<float> gps = gen.parameters();
  TrainResult res;
  const std::string before = weight_hash(gps);

  // The generator is frozen, so its contours and fused features are constants.
  std::vector<BinaryRaster> contours;
  std::vector<Tensor<float>> context;
  int ctx_h = 0, ctx_w = 0;
  {
    NoGradGuard ng;
    const size_t chunk = 8;
    for (size_t s = 0; s < ts.samples.size(); s += chunk) {
      std::vector<int> idx;
      std::vector<const BinaryRaster*> lays;
      for (size_t i = s; i < std::min(ts.samples.size(), s + chunk); ++i)
        idx.push_back(static_cast<int>(i)), lays.push_back(&ts.samples[i].layout);
      const auto out = gen.generate(Var<float>::constant(raster_batch(lays)), conditions_of(ts.samples, idx));
      const auto imgs = split_images(out.contour_prob.value());
      const Tensor<float>& tok = out.fused.tokens.value();
      const long per = tok.numel() / tok.dim(0);
      for (size_t k = 0; k < idx.size(); ++k) {
        contours.push_back(threshold(imgs[k], 0.5f, ts.samples[idx[k]].layout.pitch_nm));
        context.emplace_back(Shape{1, tok.dim(1), tok.dim(2)}, tok.data.segment(static_cast<long>(k) * per, per));
      }
      ctx_h = out.fused.h;
      ctx_w = out.fused.w;
    }
  }
  std::vector<std::vector<GtBox>> gts;
  for (const auto& s : ts.samples) gts.push_back(ground_truth(s, Task::lrc));
  const ParamList<float> ps = det.parameters();
  spdlog::info("joint: detector {} parameters, generator frozen ({})", count_parameters(ps), before);

  auto step_fn = [&](long step) {
    const auto idx = plan_detector_batch(static_cast<int>(ts.samples.size()), cfg.batch, cfg.seed, step);
    std::vector<const BinaryRaster*> cs, ls;
    std::vector<const std::vector<GtBox>*> g;
    FusedFeatures<float> ctx;
    const Tensor<float>& t0 = context[idx[0]];
    Tensor<float> tok(Shape{static_cast<int>(idx.size()), t0.dim(1), t0.dim(2)});
    for (size_t k = 0; k < idx.size(); ++k) {
      cs.push_back(&contours[idx[k]]);
      ls.push_back(&ts.samples[idx[k]].layout);
      g.push_back(&gts[idx[k]]);
      tok.data.segment(static_cast<long>(k) * t0.numel(), t0.numel()) = context[idx[k]].data;
    }
    ctx.tokens = Var<float>::constant(std::move(tok));
    ctx.h = ctx_h;
    ctx.w = ctx_w;
    const auto f = det.forward({Var<float>::constant(raster_batch(cs)), Var<float>::constant(raster_batch(ls))}, &ctx);
    return backprop_detection(detection_batch_loss(f, g, cfg.det_loss, cfg.aux_loss));
  };
  KeyValueConfig echo = cfg.echo();
  res = optimize(cfg, opt, "unified", ps, echo, ts.corpus_hash, [&](Checkpoint& c) { store_parameters(c, gps); },
                 step_fn);
  res.generator_hash_before = before;
  res.generator_hash_after = weight_hash(gps);
  if (res.generator_hash_after != before) throw NumericError("joint fine-tuning modified the frozen generator");
  return res;
}

TrainResult run_training(const RunConfig& cfg, const TrainOptions& opt) {
  switch (cfg.phase) {
    case Phase::gen_pretrain: return pretrain_generator(cfg, opt);
    case Phase::det_pretrain: return pretrain_detector(cfg, opt);
    case Phase::joint_finetune: return joint_finetune(cfg, opt);
  }
  throw ConfigError("unknown phase");
}

}  // namespace lmt
