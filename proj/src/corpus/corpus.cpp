#include "lithomt/corpus/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lithomt/error.hpp"
#include "lithomt/hash.hpp"
#include "lithomt/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lmt {

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

namespace {

RuleSet read_rules(const KeyValueConfig& kv, const std::string& prefix, RuleSet r) {
  r.min_width = static_cast<int>(kv.get_int(prefix + ".min_width", r.min_width));
  r.min_spacing = static_cast<int>(kv.get_int(prefix + ".min_spacing", r.min_spacing));
  r.min_area = static_cast<int>(kv.get_int(prefix + ".min_area", r.min_area));
  r.pinch_width = static_cast<int>(kv.get_int(prefix + ".pinch_width", r.pinch_width));
  r.bridge_gap = static_cast<int>(kv.get_int(prefix + ".bridge_gap", r.bridge_gap));
  r.epe_tolerance = kv.get_double(prefix + ".epe_tolerance", r.epe_tolerance);
  r.min_box = static_cast<int>(kv.get_int(prefix + ".min_box", r.min_box));
  return r;
}

void write_rules(KeyValueConfig& kv, const std::string& prefix, const RuleSet& r) {
  kv.set(prefix + ".min_width", std::to_string(r.min_width));
  kv.set(prefix + ".min_spacing", std::to_string(r.min_spacing));
  kv.set(prefix + ".min_area", std::to_string(r.min_area));
  kv.set(prefix + ".pinch_width", std::to_string(r.pinch_width));
  kv.set(prefix + ".bridge_gap", std::to_string(r.bridge_gap));
  kv.set(prefix + ".min_box", std::to_string(r.min_box));
  std::ostringstream os;
  os.precision(17);
  os << r.epe_tolerance;
  kv.set(prefix + ".epe_tolerance", os.str());
}

std::string join_numbers(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05d", index);
  return buf;
}

json box_json(const PixelBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

PixelBox box_from_json(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

json condition_json(const ProcessCondition& c) {
  return {{"source", to_string(c.source)}, {"threshold", c.resist_threshold}, {"focus", c.focus_nm}, {"dose", c.dose}};
}

json rules_json(const RuleSet& r) {
  return {{"min_width", r.min_width},     {"min_spacing", r.min_spacing}, {"min_area", r.min_area},
          {"pinch_width", r.pinch_width}, {"bridge_gap", r.bridge_gap},   {"epe_tolerance", r.epe_tolerance},
          {"min_box", r.min_box}};
}

json record_json(const SampleRecord& r) {
  json ann = json::array();
  for (const auto& a : r.annotations)
    ann.push_back({{"task", to_string(a.task)}, {"class", to_string(a.klass)}, {"bbox", box_json(a.bbox)}});
  json planted = json::array();
  for (const auto& d : r.planted) planted.push_back({{"class", to_string(d.klass)}, {"bbox", box_json(d.bbox)}});
  return {{"id", r.id},
          {"split", to_string(r.split)},
          {"condition_index", r.condition_index},
          {"layout_group", r.layout_group},
          {"condition", condition_json(r.condition)},
          {"annotations", ann},
          {"planted", planted}};
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

CorpusConfig CorpusConfig::from_config(const KeyValueConfig& kv) {
  CorpusConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("corpus.seed", static_cast<long>(c.seed)));
  c.count = static_cast<int>(kv.get_int("corpus.count", c.count));
  c.train_ratio = kv.get_double("corpus.train_ratio", c.train_ratio);
  c.conditions_per_layout = static_cast<int>(kv.get_int("corpus.conditions_per_layout", c.conditions_per_layout));
  c.opc_iterations = static_cast<int>(kv.get_int("corpus.opc_iterations", c.opc_iterations));
  c.source_size = static_cast<int>(kv.get_int("corpus.source_size", c.source_size));
  c.workers = static_cast<int>(kv.get_int("corpus.workers", c.workers));

  if (kv.has("grid.sources")) {
    c.sources.clear();
    for (const auto& s : kv.get_strings("grid.sources", {})) c.sources.push_back(parse_source_type(s));
  }
  c.thresholds = kv.get_doubles("grid.thresholds", c.thresholds);
  c.foci = kv.get_doubles("grid.foci", c.foci);
  c.doses = kv.get_doubles("grid.doses", c.doses);

  LayoutConfig& l = c.layout;
  l.size = static_cast<int>(kv.get_int("layout.size", l.size));
  l.pitch_nm = kv.get_double("layout.pitch_nm", l.pitch_nm);
  l.grid = static_cast<int>(kv.get_int("layout.grid", l.grid));
  l.track_pitch = static_cast<int>(kv.get_int("layout.track_pitch", l.track_pitch));
  if (kv.has("layout.wire_widths")) {
    l.wire_widths.clear();
    for (long w : kv.get_ints("layout.wire_widths", {})) l.wire_widths.push_back(static_cast<int>(w));
  }
  l.density = kv.get_double("layout.density", l.density);
  l.jog_rate = kv.get_double("layout.jog_rate", l.jog_rate);
  l.injection_rate = kv.get_double("layout.injection_rate", l.injection_rate);
  l.defect_size = static_cast<int>(kv.get_int("layout.defect_size", l.defect_size));
  l.allow_transpose = kv.get_bool("layout.transpose", l.allow_transpose);

  c.optics.sigma0 = kv.get_double("optics.sigma0", c.optics.sigma0);
  c.optics.focus_gain = kv.get_double("optics.focus_gain", c.optics.focus_gain);
  c.optics.calibration = kv.get_double("optics.calibration", c.optics.calibration);

  c.drc = read_rules(kv, "drc", c.drc);
  c.mrc = read_rules(kv, "mrc", c.mrc);
  c.lrc = read_rules(kv, "lrc", c.lrc);
  l.rules = c.drc;
  c.validate();
  return c;
}

KeyValueConfig CorpusConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("corpus.seed", std::to_string(seed));
  kv.set("corpus.count", std::to_string(count));
  kv.set("corpus.train_ratio", join_numbers({train_ratio}));
  kv.set("corpus.conditions_per_layout", std::to_string(conditions_per_layout));
  kv.set("corpus.opc_iterations", std::to_string(opc_iterations));
  kv.set("corpus.source_size", std::to_string(source_size));
  std::string src;
  for (size_t i = 0; i < sources.size(); ++i) src += (i ? "," : "") + to_string(sources[i]);
  kv.set("grid.sources", src);
  kv.set("grid.thresholds", join_numbers(thresholds));
  kv.set("grid.foci", join_numbers(foci));
  kv.set("grid.doses", join_numbers(doses));
  kv.set("layout.size", std::to_string(layout.size));
  kv.set("layout.pitch_nm", join_numbers({layout.pitch_nm}));
  kv.set("layout.grid", std::to_string(layout.grid));
  kv.set("layout.track_pitch", std::to_string(layout.track_pitch));
  std::string widths;
  for (size_t i = 0; i < layout.wire_widths.size(); ++i) widths += (i ? "," : "") + std::to_string(layout.wire_widths[i]);
  kv.set("layout.wire_widths", widths);
  kv.set("layout.density", join_numbers({layout.density}));
  kv.set("layout.jog_rate", join_numbers({layout.jog_rate}));
  kv.set("layout.injection_rate", join_numbers({layout.injection_rate}));
  kv.set("layout.defect_size", std::to_string(layout.defect_size));
  kv.set("layout.transpose", layout.allow_transpose ? "true" : "false");
  kv.set("optics.sigma0", join_numbers({optics.sigma0}));
  kv.set("optics.focus_gain", join_numbers({optics.focus_gain}));
  kv.set("optics.calibration", join_numbers({optics.calibration}));
  write_rules(kv, "drc", drc);
  write_rules(kv, "mrc", mrc);
  write_rules(kv, "lrc", lrc);
  return kv;
}

void CorpusConfig::validate() const {
  if (count <= 0) throw ConfigError("corpus.count must be positive");
  if (!(train_ratio >= 0 && train_ratio <= 1)) throw ConfigError("corpus.train_ratio must lie in [0, 1]");
  if (conditions_per_layout <= 0) throw ConfigError("corpus.conditions_per_layout must be positive");
  if (opc_iterations < 0) throw ConfigError("corpus.opc_iterations must be non-negative");
  if (source_size <= 0) throw ConfigError("corpus.source_size must be positive");
  if (sources.empty() || thresholds.empty() || foci.empty() || doses.empty())
    throw ConfigError("process grid axes must be non-empty");
  if (layout.size != 64 && layout.size != 128 && layout.size != 256 && layout.size != 512)
    throw ConfigError("layout.size must be one of 64, 128, 256, 512");
  layout.validate();
  drc.validate_geometric();
  mrc.validate_geometric();
  lrc.validate_lithographic();
  for (const auto& c : condition_grid()) c.validate();
}

std::vector<ProcessCondition> CorpusConfig::condition_grid() const {
  std::vector<ProcessCondition> out;
  for (auto s : sources)
    for (double t : thresholds)
      for (double f : foci)
        for (double d : doses) out.push_back(make_condition(s, t, f, d, source_size));
  return out;
}

std::vector<HotspotAnnotation> Sample::annotations_for(Task t) const {
  std::vector<HotspotAnnotation> out;
  for (const auto& a : annotations)
    if (a.task == t) out.push_back(a);
  return out;
}

int CorpusManifest::count(Split s) const {
  return static_cast<int>(std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.split == s; }));
}

int CorpusManifest::count(Split s, Task t) const {
  return static_cast<int>(std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) {
    return r.split == s &&
           std::any_of(r.annotations.begin(), r.annotations.end(), [&](const auto& a) { return a.task == t; });
  }));
}

std::vector<Split> assign_splits(std::uint64_t seed, int groups, double train_ratio) {
  const int n_train = static_cast<int>(std::lround(groups * train_ratio));
  std::vector<int> order(groups);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](int g) { return hash_combine(hash_combine(seed, fnv1a("split")), static_cast<std::uint64_t>(g)); };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ka = key(a), kb = key(b);
    return ka != kb ? ka < kb : a < b;
  });
  std::vector<Split> out(groups, Split::test);
  for (int i = 0; i < n_train; ++i) out[order[i]] = Split::train;
  return out;
}

Sample make_sample(const CorpusConfig& cfg, int index, std::vector<PlantedDefect>* planted) {
  const auto grid = cfg.condition_grid();
  const int group = index / cfg.conditions_per_layout;
  LayoutConfig lc = cfg.layout;
  lc.rules = cfg.drc;
  GeneratedLayout gen = generate_layout(hash_combine(cfg.seed, static_cast<std::uint64_t>(group)), lc);

  Sample s;
  s.id = sample_id(index);
  s.condition = grid[index % grid.size()];
  s.layout = std::move(gen.raster);
  s.mask = run_opc(s.layout, s.condition, cfg.opc_iterations, cfg.optics);
  s.contour = simulate_contour(s.mask, s.condition, cfg.optics);
  for (auto& a : check_drc(s.layout, cfg.drc)) s.annotations.push_back(a);
  for (auto& a : check_mrc(s.mask, cfg.mrc)) s.annotations.push_back(a);
  for (auto& a : check_lrc(s.contour, s.layout, cfg.lrc)) s.annotations.push_back(a);
  if (planted) *planted = std::move(gen.defects);
  return s;
}

CorpusManifest build_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  for (const char* sub : {"train", "test"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  const int groups = (cfg.count + cfg.conditions_per_layout - 1) / cfg.conditions_per_layout;
  const std::vector<Split> group_split = assign_splits(cfg.seed, groups, cfg.train_ratio);
  const auto grid = cfg.condition_grid();

  CorpusManifest m;
  m.seed = cfg.seed;
  m.condition_grid = grid;
  m.size = cfg.layout.size;
  m.pitch_nm = cfg.layout.pitch_nm;
  m.calibration = cfg.optics.calibration;
  m.records.resize(cfg.count);

  int workers = cfg.workers > 0 ? cfg.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* det = std::getenv("LITHOMT_DETERMINISTIC"); det && std::string(det) == "1") workers = 1;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](int w) {
    try {
      for (int i = next++; i < cfg.count; i = next++) {
        std::vector<PlantedDefect> planted;
        Sample s = make_sample(cfg, i, &planted);
        const int group = i / cfg.conditions_per_layout;
        s.split = group_split[group];
        const fs::path dir = out_dir / to_string(s.split);
        io::write_binary_png(dir / (s.id + "_layout.png"), s.layout);
        io::write_binary_png(dir / (s.id + "_mask.png"), s.mask);
        io::write_binary_png(dir / (s.id + "_contour.png"), s.contour);
        m.records[i] = {s.id, s.split, static_cast<int>(i % grid.size()), group, s.condition,
                        std::move(s.annotations), std::move(planted)};
      }
    } catch (...) {
      errors[w] = std::current_exception();
      next = cfg.count;
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work, w);
  work(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string lines;
  for (const auto& r : m.records) lines += record_json(r).dump() + "\n";
  json grid_j = json::array();
  for (const auto& c : grid) grid_j.push_back(condition_json(c));
  json counts = json::object();
  for (Split s : {Split::train, Split::test}) {
    json per = {{"total", m.count(s)}};
    for (Task t : {Task::drc, Task::mrc, Task::lrc}) per[to_string(t)] = m.count(s, t);
    counts[to_string(s)] = per;
  }
  const json meta = {{"seed", cfg.seed},
                     {"size", cfg.layout.size},
                     {"pitch_nm", cfg.layout.pitch_nm},
                     {"source_size", cfg.source_size},
                     {"calibration", cfg.optics.calibration},
                     {"sigma0", cfg.optics.sigma0},
                     {"focus_gain", cfg.optics.focus_gain},
                     {"opc_iterations", cfg.opc_iterations},
                     {"condition_grid", grid_j},
                     {"rules", {{"drc", rules_json(cfg.drc)}, {"mrc", rules_json(cfg.mrc)}, {"lrc", rules_json(cfg.lrc)}}},
                     {"counts", counts},
                     {"config", cfg.to_config().dump()}};
  const std::string meta_text = meta.dump(2) + "\n";
  write_text(out_dir / "manifest.jsonl", lines);
  write_text(out_dir / "meta.json", meta_text);
  m.content_hash = hex64(fnv1a(meta_text, fnv1a(lines)));
  return m;
}

CorpusManifest load_manifest(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.jsonl") || !fs::exists(dir / "meta.json"))
    throw IoError("no corpus at " + dir.string());
  const std::string lines = read_text(dir / "manifest.jsonl");
  const std::string meta_text = read_text(dir / "meta.json");
  CorpusManifest m;
  try {
    const json meta = json::parse(meta_text);
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.size = meta.at("size").get<int>();
    m.pitch_nm = meta.at("pitch_nm").get<double>();
    m.calibration = meta.at("calibration").get<double>();
    const int source_size = meta.at("source_size").get<int>();
    auto cond = [&](const json& c) {
      return make_condition(parse_source_type(c.at("source").get<std::string>()), c.at("threshold").get<double>(),
                            c.at("focus").get<double>(), c.at("dose").get<double>(), source_size);
    };
    for (const auto& c : meta.at("condition_grid")) m.condition_grid.push_back(cond(c));
    std::istringstream in(lines);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      SampleRecord r;
      r.id = j.at("id").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.condition_index = j.at("condition_index").get<int>();
      r.layout_group = j.at("layout_group").get<int>();
      r.condition = cond(j.at("condition"));
      for (const auto& a : j.at("annotations"))
        r.annotations.push_back({parse_task(a.at("task").get<std::string>()),
                                 parse_hotspot_class(a.at("class").get<std::string>()), box_from_json(a.at("bbox"))});
      for (const auto& d : j.at("planted"))
        r.planted.push_back({parse_hotspot_class(d.at("class").get<std::string>()), box_from_json(d.at("bbox"))});
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed corpus metadata in " + dir.string() + ": " + e.what());
  }
  m.content_hash = hex64(fnv1a(meta_text, fnv1a(lines)));
  return m;
}

Sample load_sample(const fs::path& dir, const CorpusManifest& m, const SampleRecord& r) {
  Sample s;
  s.id = r.id;
  s.split = r.split;
  s.condition = r.condition;
  s.annotations = r.annotations;
  const fs::path base = dir / to_string(r.split);
  s.layout = io::read_binary_png(base / (r.id + "_layout.png"), m.pitch_nm);
  s.mask = io::read_binary_png(base / (r.id + "_mask.png"), m.pitch_nm);
  s.contour = io::read_binary_png(base / (r.id + "_contour.png"), m.pitch_nm);
  return s;
}

std::vector<Sample> load_split(const fs::path& dir, const CorpusManifest& m, Split s) {
  std::vector<Sample> out;
  for (const auto& r : m.records)
    if (r.split == s) out.push_back(load_sample(dir, m, r));
  return out;
}

}  // namespace lmt
