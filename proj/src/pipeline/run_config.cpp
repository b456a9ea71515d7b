#include "lithomt/pipeline/run_config.hpp"

#include <cstdlib>
#include <sstream>

#include "lithomt/error.hpp"

namespace lmt {

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::gen_pretrain: return "gen_pretrain";
    case Phase::det_pretrain: return "det_pretrain";
    case Phase::joint_finetune: return "joint_finetune";
  }
  return "?";
}

Phase parse_phase(const std::string& name) {
  if (name == "gen_pretrain") return Phase::gen_pretrain;
  if (name == "det_pretrain") return Phase::det_pretrain;
  if (name == "joint_finetune") return Phase::joint_finetune;
  throw ConfigError("unknown phase '" + name + "'");
}

double default_learning_rate(Phase p) { return p == Phase::gen_pretrain ? 2e-4 : 1e-4; }

void read_loss_weights(const KeyValueConfig& kv, GenLossWeights& g, DetLossWeights& d) {
  g.w_rec = kv.get_double("loss.w_rec", g.w_rec);
  g.w_con = kv.get_double("loss.w_con", g.w_con);
  g.w_mask = kv.get_double("loss.w_mask", g.w_mask);
  g.w_contour = kv.get_double("loss.w_contour", g.w_contour);
  g.w_dice = kv.get_double("loss.w_dice", g.w_dice);
  g.w_bce = kv.get_double("loss.w_bce", g.w_bce);
  g.w_edge = kv.get_double("loss.w_edge", g.w_edge);
  g.tau = kv.get_double("loss.tau", g.tau);
  g.margin = kv.get_double("loss.margin", g.margin);
  g.no_bce = kv.get_bool("loss.no_bce", g.no_bce);
  g.no_dice = kv.get_bool("loss.no_dice", g.no_dice);
  g.no_edge = kv.get_bool("loss.no_edge", g.no_edge);
  g.no_sac = kv.get_bool("loss.no_sac", g.no_sac);
  g.no_pac = kv.get_bool("loss.no_pac", g.no_pac);
  g.sac_literal = kv.get_bool("loss.sac_literal", g.sac_literal);

  d.w_vfl = kv.get_double("loss.w_vfl", d.w_vfl);
  d.w_fppl = kv.get_double("loss.w_fppl", d.w_fppl);
  d.w_bbox = kv.get_double("loss.w_bbox", d.w_bbox);
  d.w_giou = kv.get_double("loss.w_giou", d.w_giou);
  d.vfl_alpha = kv.get_double("loss.vfl_alpha", d.vfl_alpha);
  d.vfl_gamma = kv.get_double("loss.vfl_gamma", d.vfl_gamma);
  d.fppl_alpha = kv.get_double("loss.fppl_alpha", d.fppl_alpha);
  d.fppl_gamma = kv.get_double("loss.fppl_gamma", d.fppl_gamma);
  d.focal_alpha = kv.get_double("loss.focal_alpha", d.focal_alpha);
  d.focal_gamma = kv.get_double("loss.focal_gamma", d.focal_gamma);
  d.no_fppl = kv.get_bool("loss.no_fppl", d.no_fppl);
  d.vfl_to_focal = kv.get_bool("loss.vfl_to_focal", d.vfl_to_focal);
  d.iou_only = kv.get_bool("loss.iou_only", d.iou_only);
  d.fppl_literal = kv.get_bool("loss.fppl_literal", d.fppl_literal);
  g.validate();
  d.validate();
}

void write_loss_weights(KeyValueConfig& kv, const GenLossWeights& g, const DetLossWeights& d) {
  kv.set("loss.w_rec", num(g.w_rec));
  kv.set("loss.w_con", num(g.w_con));
  kv.set("loss.w_mask", num(g.w_mask));
  kv.set("loss.w_contour", num(g.w_contour));
  kv.set("loss.w_dice", num(g.w_dice));
  kv.set("loss.w_bce", num(g.w_bce));
  kv.set("loss.w_edge", num(g.w_edge));
  kv.set("loss.tau", num(g.tau));
  kv.set("loss.margin", num(g.margin));
  kv.set("loss.no_bce", flag(g.no_bce));
  kv.set("loss.no_dice", flag(g.no_dice));
  kv.set("loss.no_edge", flag(g.no_edge));
  kv.set("loss.no_sac", flag(g.no_sac));
  kv.set("loss.no_pac", flag(g.no_pac));
  kv.set("loss.sac_literal", flag(g.sac_literal));
  kv.set("loss.w_vfl", num(d.w_vfl));
  kv.set("loss.w_fppl", num(d.w_fppl));
  kv.set("loss.w_bbox", num(d.w_bbox));
  kv.set("loss.w_giou", num(d.w_giou));
  kv.set("loss.vfl_alpha", num(d.vfl_alpha));
  kv.set("loss.vfl_gamma", num(d.vfl_gamma));
  kv.set("loss.fppl_alpha", num(d.fppl_alpha));
  kv.set("loss.fppl_gamma", num(d.fppl_gamma));
  kv.set("loss.focal_alpha", num(d.focal_alpha));
  kv.set("loss.focal_gamma", num(d.focal_gamma));
  kv.set("loss.no_fppl", flag(d.no_fppl));
  kv.set("loss.vfl_to_focal", flag(d.vfl_to_focal));
  kv.set("loss.iou_only", flag(d.iou_only));
  kv.set("loss.fppl_literal", flag(d.fppl_literal));
}

void RunConfig::validate() const {
  if (steps < 0) throw ConfigError("run.steps must be non-negative");
  if (batch <= 0) throw ConfigError("run.batch must be positive");
  if (checkpoint_every < 0 || log_every <= 0) throw ConfigError("run cadences must be positive");
  if (!(optim.lr > 0) || optim.warmup < 0 || optim.clip <= 0) throw ConfigError("optim settings out of range");
  if (!(optim.min_ratio >= 0 && optim.min_ratio <= 1)) throw ConfigError("optim.min_ratio must lie in [0, 1]");
  if (phase == Phase::joint_finetune) {
    if (gen_checkpoint.empty() || det_checkpoint.empty())
      throw ConfigError("joint_finetune needs run.gen_checkpoint and run.det_checkpoint");
    if (task != Task::lrc) throw ConfigError("joint_finetune is defined for the LRC task");
  }
  gen.validate();
  det.validate();
  gen_loss.validate();
  det_loss.validate();
}

RunConfig RunConfig::from_config(const KeyValueConfig& kv) {
  RunConfig c;
  c.phase = parse_phase(kv.get_string("run.phase", to_string(c.phase)));
  c.task = parse_task(kv.get_string("run.task", c.phase == Phase::joint_finetune ? "lrc" : to_string(c.task)));
  c.corpus = kv.get_string("run.corpus", "");
  c.gen_checkpoint = kv.get_string("run.gen_checkpoint", "");
  c.det_checkpoint = kv.get_string("run.det_checkpoint", "");
  c.steps = kv.get_int("run.steps", c.steps);
  c.batch = static_cast<int>(kv.get_int("run.batch", c.batch));
  c.seed = static_cast<std::uint64_t>(kv.get_int("run.seed", static_cast<long>(c.seed)));
  c.checkpoint_every = kv.get_int("run.checkpoint_every", c.checkpoint_every);
  c.log_every = kv.get_int("run.log_every", c.log_every);
  c.aux_loss = kv.get_bool("run.aux_loss", c.aux_loss);
  c.optim.lr = kv.get_double("optim.lr", default_learning_rate(c.phase));
  c.optim.warmup = kv.get_int("optim.warmup", c.optim.warmup);
  c.optim.min_ratio = kv.get_double("optim.min_ratio", c.optim.min_ratio);
  c.optim.clip = kv.get_double("optim.clip", c.optim.clip);
  c.optim.weight_decay = kv.get_double("optim.weight_decay", c.optim.weight_decay);
  c.gen = GenConfig::from_config(kv);
  KeyValueConfig dk = kv;
  if (!kv.has("det.task")) dk.set("det.task", to_string(c.task));
  if (!kv.has("det.image")) dk.set("det.image", std::to_string(c.gen.image));
  if (!kv.has("det.context_width")) dk.set("det.context_width", std::to_string(c.gen.width()));
  if (c.phase == Phase::joint_finetune) dk.set("det.unified", "true");
  c.det = DetConfig::from_config(dk);
  read_loss_weights(kv, c.gen_loss, c.det_loss);
  c.validate();
  return c;
}

KeyValueConfig RunConfig::echo() const {
  KeyValueConfig kv;
  kv.set("run.phase", to_string(phase));
  kv.set("run.task", to_string(task));
  kv.set("run.corpus", corpus.string());
  kv.set("run.gen_checkpoint", gen_checkpoint.string());
  kv.set("run.det_checkpoint", det_checkpoint.string());
  kv.set("run.steps", std::to_string(steps));
  kv.set("run.batch", std::to_string(batch));
  kv.set("run.seed", std::to_string(seed));
  kv.set("run.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("run.log_every", std::to_string(log_every));
  kv.set("run.aux_loss", flag(aux_loss));
  kv.set("optim.lr", num(optim.lr));
  kv.set("optim.warmup", std::to_string(optim.warmup));
  kv.set("optim.min_ratio", num(optim.min_ratio));
  kv.set("optim.clip", num(optim.clip));
  kv.set("optim.weight_decay", num(optim.weight_decay));
  gen.write_config(kv);
  det.write_config(kv);
  write_loss_weights(kv, gen_loss, det_loss);
  return kv;
}

bool deterministic_mode() {
  const char* v = std::getenv("LITHOMT_DETERMINISTIC");
  if (!v) return false;
  const std::string s(v);
  return !(s.empty() || s == "0" || s == "false" || s == "off");
}

}  // namespace lmt
