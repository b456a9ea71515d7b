#include "lithomt/pipeline/evaluation.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lithomt/corpus/litho.hpp"
#include "lithomt/error.hpp"
#include "lithomt/image_io.hpp"
#include "lithomt/pipeline/training.hpp"

namespace lmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Color = std::array<std::uint8_t, 3>;
constexpr Color kRed{230, 30, 30}, kBlue{40, 80, 240}, kPurple{160, 40, 200};

struct Generated {
  std::vector<BinaryRaster> mask, contour;
  std::vector<Tensor<float>> tokens;
  int h = 0, w = 0;
};

Generated run_generator(const Generator<float>& g, const std::vector<Sample>& samples, int batch) {
  NoGradGuard ng;
  Generated out;
  for (size_t s = 0; s < samples.size(); s += batch) {
    std::vector<const BinaryRaster*> lays;
    std::vector<ProcessCondition> conds;
    for (size_t i = s; i < std::min(samples.size(), s + batch); ++i)
      lays.push_back(&samples[i].layout), conds.push_back(samples[i].condition);
    const auto r = g.generate(Var<float>::constant(raster_batch(lays)), conds);
    const Tensor<float>& m = r.mask_prob.value();
    const Tensor<float>& c = r.contour_prob.value();
    const Tensor<float>& t = r.fused.tokens.value();
    const int h = m.dim(1), w = m.dim(2);
    const long per = t.numel() / t.dim(0);
    for (size_t k = 0; k < lays.size(); ++k) {
      const double pitch = lays[k]->pitch_nm;
      out.mask.push_back(threshold(Grid<float>(Eigen::Map<const Grid<float>>(m.ptr() + k * h * w, h, w)), 0.5f, pitch));
      out.contour.push_back(
          threshold(Grid<float>(Eigen::Map<const Grid<float>>(c.ptr() + k * h * w, h, w)), 0.5f, pitch));
      out.tokens.emplace_back(Shape{1, t.dim(1), t.dim(2)}, t.data.segment(static_cast<long>(k) * per, per));
    }
    out.h = r.fused.h;
    out.w = r.fused.w;
  }
  return out;
}

json box_json(const BoxCorners& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

void draw_box(io::Rgb& img, const BoxCorners& b, Color c) {
  const int x0 = static_cast<int>(std::floor(b.x0)), y0 = static_cast<int>(std::floor(b.y0));
  const int x1 = static_cast<int>(std::ceil(b.x1)) - 1, y1 = static_cast<int>(std::ceil(b.y1)) - 1;
  for (int x = x0; x <= x1; ++x) img.set(x, y0, c), img.set(x, y1, c);
  for (int y = y0; y <= y1; ++y) img.set(x0, y, c), img.set(x1, y, c);
}

io::Rgb gray_base(const BinaryRaster& r) {
  io::Rgb img(static_cast<int>(r.cols()), static_cast<int>(r.rows()));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t v = r.pixels(y, x) ? 150 : 20;
      img.set(x, y, {v, v, v});
    }
  return img;
}

std::string condition_label(const ProcessCondition& c) { return c.label(); }

}  // namespace

EvalReport evaluate_run(const Checkpoint& ck, const fs::path& corpus, const EvalOptions& opt) {
  const bool has_gen = ck.has_prefix("gen."), has_det = ck.has_prefix("det.");
  EvalReport r;
  r.task = opt.task;
  r.split = to_string(opt.split);
  r.checkpoint_kind = ck.kind;
  r.config = ck.config;
  r.corpus = corpus;

  std::optional<Task> det_task;
  if (opt.task == "gen") {
    if (!has_gen) throw ConfigError("eval: task gen needs a generator checkpoint");
    r.generation = true;
  } else if (opt.task == "unified") {
    if (!has_gen || !has_det || ck.kind != "unified") throw ConfigError("eval: task unified needs a unified checkpoint");
    r.generation = r.detection = true;
    det_task = Task::lrc;
  } else {
    det_task = parse_task(opt.task);
    if (!has_det) throw ConfigError("eval: task " + opt.task + " needs a detector checkpoint");
    if (ck.kind == "unified") throw ConfigError("eval: use task unified with a unified checkpoint");
    if (DetConfig::from_config(ck.config).task != *det_task)
      throw ConfigError("eval: checkpoint detector was trained for " + to_string(DetConfig::from_config(ck.config).task));
    r.detection = true;
  }

  const TrainingSet ts = load_training_set(corpus, opt.split);
  r.corpus_hash = ts.corpus_hash;
  r.n_images = static_cast<int>(ts.samples.size());
  const std::uint64_t calls_before = simulation_call_count();

  Generated gen;
  if (r.generation) {
    const Generator<float> g = generator_from(ck);
    if (g.config().image != ts.size) throw ConfigError("eval: corpus raster size does not match the checkpoint");
    gen = run_generator(g, ts.samples, opt.batch);
  }
  std::vector<std::vector<Detection>> dets;
  if (r.detection) {
    const Detector<float> d = detector_from(ck);
    if (d.config().image != ts.size) throw ConfigError("eval: corpus raster size does not match the checkpoint");
    for (size_t s = 0; s < ts.samples.size(); s += opt.batch) {
      const size_t e = std::min(ts.samples.size(), s + opt.batch);
      std::vector<std::vector<const BinaryRaster*>> inputs;
      std::optional<FusedFeatures<float>> ctx;
      if (opt.task == "unified") {
        inputs.resize(2);
        const Tensor<float>& t0 = gen.tokens[s];
        Tensor<float> tok(Shape{static_cast<int>(e - s), t0.dim(1), t0.dim(2)});
        for (size_t i = s; i < e; ++i) {
          inputs[0].push_back(&gen.contour[i]);
          inputs[1].push_back(&ts.samples[i].layout);
          tok.data.segment(static_cast<long>(i - s) * t0.numel(), t0.numel()) = gen.tokens[i].data;
        }
        ctx.emplace();
        ctx->tokens = Var<float>::constant(std::move(tok));
        ctx->h = gen.h;
        ctx->w = gen.w;
      } else {
        const size_t arity = d.config().dual() ? 2 : 1;
        inputs.resize(arity);
        for (size_t i = s; i < e; ++i)
          for (size_t c = 0; c < arity; ++c) inputs[c].push_back(detector_inputs(ts.samples[i], *det_task)[c]);
      }
      auto part = d.detect(*det_task, inputs, ctx ? &*ctx : nullptr);
      for (auto& p : part) dets.push_back(std::move(p));
    }
  }
  r.oracle_calls = simulation_call_count() - calls_before;

  std::vector<ImageDetections> all;
  std::vector<BinaryRaster> gm, gc;
  for (size_t i = 0; i < ts.samples.size(); ++i) {
    const Sample& s = ts.samples[i];
    ImageReport ir;
    ir.id = s.id;
    ir.condition = condition_label(s.condition);
    if (r.generation) {
      ir.pa = pixel_accuracy(gen.contour[i], s.contour);
      ir.iou = raster_iou(gen.contour[i], s.contour);
      ir.edge_f1 = edge_f1_score(gen.contour[i], s.contour, opt.edge_radius);
      ir.mask_iou = raster_iou(gen.mask[i], s.mask);
      gm.push_back(s.mask);
      gc.push_back(s.contour);
    }
    if (r.detection) {
      ir.detections = {dets[i], s.annotations_for(*det_task), static_cast<int>(s.layout.cols()),
                       static_cast<int>(s.layout.rows())};
      ir.match = match_detections(ir.detections, opt.match);
      all.push_back(ir.detections);
    }
    r.images.push_back(std::move(ir));
  }
  if (r.generation) {
    r.mpa = mean_pixel_accuracy(gen.contour, gc);
    r.miou = mean_iou(gen.contour, gc);
    r.edge_f1 = edge_f1(gen.contour, gc, opt.edge_radius);
    r.mask_mpa = mean_pixel_accuracy(gen.mask, gm);
    r.mask_miou = mean_iou(gen.mask, gm);
    r.mask_edge_f1 = edge_f1(gen.mask, gm, opt.edge_radius);
  }
  if (r.detection) r.summary = detection_summary(all, opt.match);

  if (!opt.overlay_dir.empty() && r.detection) {
    std::error_code ec;
    fs::create_directories(opt.overlay_dir, ec);
    for (size_t i = 0; i < r.images.size(); ++i) {
      const auto& ir = r.images[i];
      io::Rgb img = gray_base(ts.samples[i].layout);
      const auto& d = ir.detections;
      for (size_t g = 0; g < d.gts.size(); ++g)
        if (ir.match.matched_gt[g] < 0) draw_box(img, to_corners(d.gts[g].bbox), kBlue);
      for (size_t k = 0; k < d.dets.size(); ++k)
        if (ir.match.det_status[k] >= 0)
          draw_box(img, to_corners(d.dets[k].box, d.width, d.height), ir.match.det_status[k] ? kRed : kPurple);
      io::write_rgb_png(opt.overlay_dir / (ir.id + "_overlay.png"), img);
    }
  }
  return r;
}

EvalReport evaluate_run(const fs::path& ckpt, const fs::path& corpus, const EvalOptions& opt) {
  return evaluate_run(load_checkpoint(ckpt), corpus, opt);
}

std::string report_json(const EvalReport& r) {
  json j;
  j["task"] = r.task;
  j["split"] = r.split;
  j["checkpoint_kind"] = r.checkpoint_kind;
  j["n_images"] = r.n_images;
  j["oracle_calls"] = r.oracle_calls;
  j["corpus"] = r.corpus.string();
  j["corpus_hash"] = r.corpus_hash;
  for (const char* k : {"mPA", "mIoU", "edge_f1", "mask_mPA", "mask_mIoU", "mask_edge_f1", "recall", "precision", "f1",
                        "fa", "tp", "fp", "n_gt", "ap50"})
    j[k] = nullptr;
  if (r.generation) {
    j["mPA"] = r.mpa;
    j["mIoU"] = r.miou;
    j["edge_f1"] = r.edge_f1;
    j["mask_mPA"] = r.mask_mpa;
    j["mask_mIoU"] = r.mask_miou;
    j["mask_edge_f1"] = r.mask_edge_f1;
  }
  if (r.detection) {
    const auto& s = r.summary;
    j["recall"] = s.recall;
    j["precision"] = s.precision;
    j["f1"] = s.f1;
    j["fa"] = s.fa;
    j["tp"] = s.tp;
    j["fp"] = s.fp;
    j["n_gt"] = s.n_gt;
    j["ap50"] = s.ap50;
  }
  json echo = json::object();
  for (const auto& [k, v] : r.config.entries()) echo[k] = v;
  j["config_echo"] = echo;
  json images = json::array();
  for (const auto& ir : r.images) {
    json im = {{"id", ir.id}, {"condition", ir.condition}};
    if (r.generation) {
      im["pa"] = ir.pa;
      im["iou"] = ir.iou;
      im["edge_f1"] = ir.edge_f1;
      im["mask_iou"] = ir.mask_iou;
    }
    if (r.detection) {
      const auto& d = ir.detections;
      json dets = json::array(), gts = json::array();
      for (size_t k = 0; k < d.dets.size(); ++k)
        dets.push_back({{"class", to_string(d.dets[k].klass)},
                        {"bbox_px", box_json(to_corners(d.dets[k].box, d.width, d.height))},
                        {"confidence", d.dets[k].confidence},
                        {"status", ir.match.det_status[k]}});
      for (size_t g = 0; g < d.gts.size(); ++g)
        gts.push_back({{"class", to_string(d.gts[g].klass)},
                       {"bbox_px", box_json(to_corners(d.gts[g].bbox))},
                       {"matched", ir.match.matched_gt[g]}});
      im["width"] = d.width;
      im["height"] = d.height;
      im["tp"] = ir.match.tp;
      im["fp"] = ir.match.fp;
      im["detections"] = dets;
      im["gts"] = gts;
    }
    images.push_back(im);
  }
  j["images"] = images;
  return j.dump(2);
}

void write_report(const EvalReport& r, const fs::path& json_path, const fs::path& csv_path) {
  std::error_code ec;
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path(), ec);
  {
    std::ofstream f(json_path);
    if (!f) throw IoError("cannot write " + json_path.string());
    f << report_json(r) << "\n";
  }
  if (csv_path.empty()) return;
  std::ofstream f(csv_path);
  if (!f) throw IoError("cannot write " + csv_path.string());
  f.precision(9);
  f << "id,condition,pa,iou,edge_f1,mask_iou,tp,fp,n_gt\n";
  for (const auto& ir : r.images)
    f << ir.id << "," << ir.condition << "," << ir.pa << "," << ir.iou << "," << ir.edge_f1 << "," << ir.mask_iou << ","
      << ir.match.tp << "," << ir.match.fp << "," << ir.detections.gts.size() << "\n";
}

void render_report(const fs::path& report_path, const fs::path& out_dir) {
  std::ifstream f(report_path);
  if (!f) throw IoError("cannot open report " + report_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError(report_path.string() + ": " + e.what());
  }
  const fs::path corpus = j.at("corpus").get<std::string>();
  const std::string split = j.at("split").get<std::string>();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  for (const auto& im : j.at("images")) {
    const std::string id = im.at("id").get<std::string>();
    io::Rgb img = gray_base(io::read_binary_png(corpus / split / (id + "_layout.png")));
    auto corners = [](const json& b) {
      return BoxCorners{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    };
    if (im.contains("gts"))
      for (const auto& g : im.at("gts"))
        if (g.at("matched").get<int>() < 0) draw_box(img, corners(g.at("bbox_px")), kBlue);
    if (im.contains("detections"))
      for (const auto& d : im.at("detections")) {
        const int st = d.at("status").get<int>();
        if (st >= 0) draw_box(img, corners(d.at("bbox_px")), st ? kRed : kPurple);
      }
    io::write_rgb_png(out_dir / (id + "_overlay.png"), img);
  }
}

ProcessCondition parse_condition_json(const std::string& text, int source_size) {
  json j;
  try {
    j = json::parse(text);
    ProcessCondition c = make_condition(parse_source_type(j.at("source").get<std::string>()),
                                        j.at("threshold").get<double>(), j.value("focus", 0.0), j.value("dose", 1.0),
                                        source_size);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("condition: ") + e.what());
  }
}

void predict(const fs::path& ckpt_path, const fs::path& layout_png, const fs::path& condition_json,
             const fs::path& out_dir, const PredictOptions& opt) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const BinaryRaster layout = io::read_binary_png(layout_png);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  std::string id = layout_png.stem().string();
  if (id.size() > 7 && id.ends_with("_layout")) id.resize(id.size() - 7);
  const bool has_gen = ck.has_prefix("gen."), has_det = ck.has_prefix("det.");

  std::vector<Detection> dets;
  Task task = Task::drc;
  if (has_gen) {
    std::ifstream cf(condition_json);
    if (!cf) throw IoError("cannot open condition " + condition_json.string());
    std::stringstream ss;
    ss << cf.rdbuf();
    const Generator<float> g = generator_from(ck);
    if (layout.rows() != g.config().image || layout.cols() != g.config().image)
      throw ConfigError("predict: layout size does not match the checkpoint");
    const ProcessCondition cond = parse_condition_json(ss.str());
    NoGradGuard ng;
    const auto r = g.generate(Var<float>::constant(raster_batch({&layout})), {cond});
    const int s = g.config().image;
    const Grid<float> m = Eigen::Map<const Grid<float>>(r.mask_prob.value().ptr(), s, s);
    const Grid<float> c = Eigen::Map<const Grid<float>>(r.contour_prob.value().ptr(), s, s);
    const BinaryRaster mb = threshold(m, 0.5f), cb = threshold(c, 0.5f);
    io::write_binary_png(out_dir / (id + "_maskpred.png"), mb);
    io::write_binary_png(out_dir / (id + "_contourpred.png"), cb);
    if (opt.probabilities) {
      io::write_probability_png(out_dir / (id + "_maskprob.png"), m);
      io::write_probability_png(out_dir / (id + "_contourprob.png"), c);
    }
    if (has_det) {
      task = Task::lrc;
      const Detector<float> d = detector_from(ck);
      dets = d.detect(Task::lrc, {{&cb}, {&layout}}, &r.fused).front();
    }
  } else if (has_det) {
    const Detector<float> d = detector_from(ck);
    task = d.config().task;
    if (task != Task::drc) throw UsageError("predict: a " + to_string(task) + " detector needs simulated inputs");
    dets = d.detect(Task::drc, {{&layout}}).front();
  } else {
    throw ConfigError("predict: empty checkpoint");
  }
  if (!has_det) return;

  json line = {{"id", id}, {"task", ck.kind == "unified" ? "unified" : to_string(task)}};
  json arr = json::array();
  io::Rgb img = gray_base(layout);
  const int w = static_cast<int>(layout.cols()), h = static_cast<int>(layout.rows());
  for (const auto& d : dets) {
    if (d.confidence < opt.min_confidence) continue;
    arr.push_back({{"class", to_string(d.klass)}, {"bbox_px", box_json(to_corners(d.box, w, h))},
                   {"confidence", d.confidence}});
    if (d.confidence > opt.overlay_confidence) draw_box(img, to_corners(d.box, w, h), kRed);
  }
  line["detections"] = arr;
  std::ofstream f(out_dir / "detections.jsonl", std::ios::app);
  if (!f) throw IoError("cannot write detections.jsonl");
  f << line.dump() << "\n";
  io::write_rgb_png(out_dir / (id + "_detections.png"), img);
}

}  // namespace lmt
