#include "pcdm/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pcdm/errors.hpp"
#include "pcdm/image.hpp"
#include "pcdm/metrics.hpp"
#include "pcdm/theory.hpp"

namespace fs = std::filesystem;

namespace pcdm {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int64_t parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno != 0)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  const char* key;
  bool hashed;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto path = [&](const char* k, fs::path RunConfig::*m) {
      f.push_back({k, false, [m](RunConfig& c, const std::string& v) { c.*m = v; },
                   [m](const RunConfig& c) { return (c.*m).string(); }});
    };
    auto str = [&](const char* k, std::string RunConfig::*m) {
      f.push_back({k, true, [m](RunConfig& c, const std::string& v) { c.*m = v; },
                   [m](const RunConfig& c) { return c.*m; }});
    };
    auto i64 = [&](const char* k, int64_t RunConfig::*m) {
      f.push_back({k, true, [m, k](RunConfig& c, const std::string& v) { c.*m = parse_int(k, v); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto i32 = [&](const char* k, int RunConfig::*m) {
      f.push_back({k, true, [m, k](RunConfig& c, const std::string& v) { c.*m = static_cast<int>(parse_int(k, v)); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto real = [&](const char* k, double RunConfig::*m) {
      f.push_back({k, true, [m, k](RunConfig& c, const std::string& v) { c.*m = parse_real(k, v); },
                   [m](const RunConfig& c) { return fmt_double(c.*m); }});
    };
    auto adam = [&](const char* k, double AdamConfig::*m) {
      f.push_back({k, true, [m, k](RunConfig& c, const std::string& v) { c.adam.*m = parse_real(k, v); },
                   [m](const RunConfig& c) { return fmt_double(c.adam.*m); }});
    };
    path("dataset_root", &RunConfig::dataset_root);
    str("split", &RunConfig::split);
    i64("height", &RunConfig::height);
    i64("width", &RunConfig::width);
    i32("steps", &RunConfig::steps);
    real("offset", &RunConfig::offset);
    i32("depth", &RunConfig::depth);
    i64("base_width", &RunConfig::base_width);
    i64("time_encoding_dim", &RunConfig::time_encoding_dim);
    i64("cond_encoding_dim", &RunConfig::cond_encoding_dim);
    real("period", &RunConfig::period);
    i64("max_groups", &RunConfig::max_groups);
    adam("lr", &AdamConfig::lr);
    adam("beta1", &AdamConfig::beta1);
    adam("beta2", &AdamConfig::beta2);
    adam("adam_eps", &AdamConfig::eps);
    adam("weight_decay", &AdamConfig::weight_decay);
    i32("batch", &RunConfig::batch);
    i32("epochs", &RunConfig::epochs);
    f.push_back({"parameterization", true,
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.parameterization = parse_parameterization(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("parameterization: ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.parameterization); }});
    f.push_back({"clip_x0", true, [](RunConfig& c, const std::string& v) { c.clip_x0 = parse_bool("clip_x0", v); },
                 [](const RunConfig& c) { return std::string(c.clip_x0 ? "true" : "false"); }});
    i32("t_infer", &RunConfig::t_infer);
    f.push_back({"seed", true, [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    path("output_dir", &RunConfig::output_dir);
    return f;
  }();
  return table;
}

template <class Fn>
int guarded(std::ostream& log, const char* cmd, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    log << cmd << ": config error: " << e.what() << "\n";
    return exit_code::kConfigError;
  } catch (const UsageError& e) {
    log << cmd << ": usage error: " << e.what() << "\n";
    return exit_code::kConfigError;
  } catch (const DataError& e) {
    log << cmd << ": data error: " << e.what() << "\n";
    return exit_code::kMissingData;
  } catch (const std::exception& e) {
    log << cmd << ": " << e.what() << "\n";
    return exit_code::kVerifyFailed;
  }
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError("no such directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

SemanticDrawing fit_resolution(SemanticDrawing d, int64_t height, int64_t width, const std::string& what) {
  if (d.width == width && d.height == height) return d;
  if (d.width < width || d.height < height || d.width % width != 0 || d.height % height != 0)
    throw DataError(what + ": " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                    " does not reduce evenly to " + std::to_string(height) + "x" + std::to_string(width));
  auto id = d.origin_id;
  auto cond = d.condition;
  d = downsample_majority(d, width, height);
  d.origin_id = id;
  d.condition = cond;
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

}  // namespace

// ---- config ----

DenoiserConfig RunConfig::denoiser() const {
  DenoiserConfig d;
  d.height = height;
  d.width = width;
  d.depth = depth;
  d.base_width = base_width;
  d.time_encoding_dim = time_encoding_dim;
  d.cond_encoding_dim = cond_encoding_dim;
  d.period = period;
  d.max_groups = max_groups;
  return d;
}

DiffusionConfig RunConfig::diffusion() const {
  DiffusionConfig d;
  d.parameterization = parameterization;
  d.clip_x0 = clip_x0;
  d.t_infer = t_infer;
  return d;
}

void RunConfig::validate() const {
  if (height < 1 || width < 1) throw ConfigError("height and width must be positive");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(offset > 0)) throw ConfigError("offset must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch != 1) throw ConfigError("only batch = 1 is supported, got " + std::to_string(batch));
  if (!(adam.lr > 0)) throw ConfigError("lr must be positive");
  if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1)
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  if (!(adam.eps > 0)) throw ConfigError("adam_eps must be positive");
  if (t_infer < 0 || t_infer > steps) throw ConfigError("t_infer must lie in 0..steps");
  if (split.empty()) throw ConfigError("split must not be empty");
  denoiser().validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

uint64_t RunConfig::hash() const {
  std::string text;
  for (const auto& f : fields())
    if (f.hashed) text += std::string(f.key) + "=" + f.get(*this) + "\n";
  return fnv1a64(text);
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  const auto bytes = read_file_bytes(path);
  RunConfig cfg = parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  return cfg;
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string format_hash(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- data ----

std::vector<SemanticDrawing> load_split(const fs::path& root, const std::string& split, int64_t height,
                                        int64_t width) {
  const auto files = list_files(root / split, ".png");
  if (files.empty()) throw DataError("no PNG files in " + (root / split).string());
  std::vector<SemanticDrawing> out;
  out.reserve(files.size());
  for (const auto& p : files) {
    SemanticDrawing d = load_drawing_file(p, RgbMode::Lenient);
    if (!d.condition) throw DataError(p.string() + ": file name carries no condition tag");
    out.push_back(fit_resolution(std::move(d), height, width, p.string()));
  }
  return out;
}

TrainingSample to_training_sample(const SemanticDrawing& structural) {
  if (!structural.condition) throw DataError(structural.origin_id + ": no condition");
  const SemanticDrawing arch = architectural_of(structural);
  return {line_drawing_of(structural).to_tensor(), extract_canvas(arch).to_tensor(), *structural.condition,
          structural.origin_id};
}

// ---- checkpoints ----

std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

Checkpoint make_checkpoint(const RunConfig& cfg, const DenoiserModel& model, const AdamState* adam, int epoch) {
  Checkpoint c;
  c.config_hash = cfg.hash();
  c.metadata["config"] = cfg.to_text();
  c.metadata["epoch"] = std::to_string(epoch);
  const ParameterStore& ps = model.parameters();
  for (size_t i = 0; i < ps.size(); ++i) c.parameters.emplace_back(ps.names()[i], ps.vars()[i].value());
  if (adam) c.adam = *adam;
  return c;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  const auto it = ckpt.metadata.find("config");
  if (it == ckpt.metadata.end()) throw DataError("checkpoint has no config metadata");
  LoadedModel out;
  try {
    out.config = parse_run_config(it->second);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  if (out.config.hash() != ckpt.config_hash)
    throw DataError("checkpoint config hash " + format_hash(ckpt.config_hash) + " does not match its config (" +
                    format_hash(out.config.hash()) + ")");
  if (const auto e = ckpt.metadata.find("epoch"); e != ckpt.metadata.end()) out.epoch = std::atoi(e->second.c_str());
  out.model = std::make_unique<DenoiserModel>(out.config.denoiser(), out.config.seed);
  out.model->load_parameters(ckpt.parameters);
  return out;
}

LoadedModel load_model(const fs::path& path) { return load_model(read_checkpoint(path)); }

// ---- generation ----

Generation generate(const Denoiser& model, const SemanticDrawing& arch, double d, const DiffusionConfig& cfg,
                    const NoiseSchedule& sched, Rng& rng) {
  const Canvas canvas = extract_canvas(arch);
  const Tensor raw = sample_chain(model, canvas.to_tensor(), d, cfg, sched, rng);
  Generation g;
  g.line = quantize_line_drawing(raw, canvas);
  g.structural = compose_structural(g.line, arch);
  g.structural.condition = d;
  g.structural.origin_id = arch.origin_id;
  return g;
}

SemanticDrawing load_sample_input(const fs::path& path, int64_t height, int64_t width) {
  const RgbImage img = read_png(path);
  SemanticDrawing arch;
  if (looks_like_canvas(img)) {
    const Canvas c = canvas_from_rgb(img);
    arch = SemanticDrawing(c.width, c.height);
    for (size_t i = 0; i < c.values.size(); ++i)
      if (c.values[i] == 0.0) arch.classes[i] = PixelClass::InfillWall;
  } else {
    arch = drawing_from_rgb(img, RgbMode::Lenient);
  }
  arch.origin_id = path.stem().string();
  try {
    return fit_resolution(std::move(arch), height, width, path.string());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

// ---- commands ----

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, "train", [&] {
    if (cfg.dataset_root.empty()) throw ConfigError("dataset_root is not set");
    cfg.validate();
    const auto drawings = load_split(cfg.dataset_root, cfg.split, cfg.height, cfg.width);
    std::vector<TrainingSample> data;
    for (const auto& d : drawings) data.push_back(to_training_sample(d));

    const NoiseSchedule sched = build_schedule(cfg.steps, cfg.offset);
    DenoiserModel model(cfg.denoiser(), cfg.seed);
    AdamState adam = make_adam_state(model.parameters(), cfg.adam);
    Rng rng(cfg.seed, 1);
    const DiffusionConfig dc = cfg.diffusion();

    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.cfg", cfg.to_text());
    std::ofstream csv(cfg.output_dir / "loss.csv", std::ios::binary);
    if (!csv) throw DataError("cannot write " + (cfg.output_dir / "loss.csv").string());
    csv << "epoch,mean_loss,min_loss,max_loss,steps\n";

    log << "train: " << data.size() << " drawings, " << model.parameters().total_elements()
        << " parameters, config " << format_hash(cfg.hash()) << "\n";
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const EpochStats st = train_epoch(model, data, dc, sched, adam, rng);
      csv << epoch << "," << fmt_double(st.mean_loss) << "," << fmt_double(st.min_loss) << ","
          << fmt_double(st.max_loss) << "," << st.steps << "\n";
      csv.flush();
      write_checkpoint(cfg.output_dir / checkpoint_name(epoch), make_checkpoint(cfg, model, &adam, epoch));
      log << "epoch " << epoch << "/" << cfg.epochs << " loss " << st.mean_loss << "\n";
    }
    return exit_code::kOk;
  });
}

int cmd_sample(const SampleOptions& opt, std::ostream& log) {
  return guarded(log, "sample", [&] {
    if (opt.n < 1) throw UsageError("n must be >= 1");
    LoadedModel lm = load_model(opt.checkpoint);
    RunConfig cfg = lm.config;
    if (opt.t_infer >= 0) cfg.t_infer = opt.t_infer;
    cfg.validate();
    if (!(opt.d > 0)) log << "sample: warning: d = " << opt.d << " is outside the trained range\n";

    const SemanticDrawing arch = load_sample_input(opt.input, cfg.height, cfg.width);
    const NoiseSchedule sched = build_schedule(cfg.steps, cfg.offset);
    const std::string file = arch.origin_id + ".png";
    for (int i = 0; i < opt.n; ++i) {
      Rng rng(opt.seed, static_cast<uint64_t>(i));
      const Generation g = generate(*lm.model, arch, opt.d, cfg.diffusion(), sched, rng);
      const fs::path dir = opt.output_dir / ("sample" + std::to_string(i));
      fs::create_directories(dir / "line");
      save_drawing(dir / file, g.structural);
      write_png(dir / "line" / file, canvas_to_rgb(g.line));
      log << "sample: wrote " << (dir / file).string() << "\n";
    }
    return exit_code::kOk;
  });
}

int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  return guarded(log, "eval", [&]() -> int {
    find_feature_extractor(opt.extractor);  // fail early on an unknown name
    const auto preds = list_files(opt.pred_dir, ".png");
    const auto labels = list_files(opt.label_dir, ".png");
    std::set<std::string> label_names;
    for (const auto& p : labels) label_names.insert(p.filename().string());

    std::vector<std::string> warnings;
    std::vector<std::string> matched;
    std::set<std::string> pred_names;
    for (const auto& p : preds) {
      const std::string n = p.filename().string();
      pred_names.insert(n);
      if (label_names.count(n))
        matched.push_back(n);
      else
        warnings.push_back("no label for prediction " + n);
    }
    for (const auto& n : label_names)
      if (!pred_names.count(n)) warnings.push_back("no prediction for label " + n);
    if (matched.empty()) {
      for (const auto& w : warnings) log << "eval: warning: " << w << "\n";
      log << "eval: no file names in common\n";
      return exit_code::kEmptyEval;
    }

    nlohmann::json pairs = nlohmann::json::array();
    std::vector<std::vector<double>> f_pred, f_label;
    double s_siou = 0, s_wiou = 0, s_eta = 0, s_score = 0;
    for (const auto& n : matched) {
      const SemanticDrawing pd = load_drawing_file(opt.pred_dir / n, RgbMode::Lenient);
      const SemanticDrawing lb = load_drawing_file(opt.label_dir / n, RgbMode::Lenient);
      if (pd.width != lb.width || pd.height != lb.height) {
        warnings.push_back("size mismatch for " + n);
        continue;
      }
      const IoUReport r = score_iou(pd, lb);
      pairs.push_back({{"name", n},
                       {"siou", r.siou},
                       {"wiou", r.wiou},
                       {"sw_ratio_pred", r.sw_ratio_pred},
                       {"sw_ratio_label", r.sw_ratio_label},
                       {"eta_sw", r.eta_sw},
                       {"score", r.score},
                       {"eta_undefined", r.eta_undefined}});
      s_siou += r.siou;
      s_wiou += r.wiou;
      s_eta += r.eta_sw;
      s_score += r.score;
      f_pred.push_back(extract_features(pd, opt.extractor));
      f_label.push_back(extract_features(lb, opt.extractor));
    }
    const double n = static_cast<double>(pairs.size());
    if (pairs.empty()) {
      for (const auto& w : warnings) log << "eval: warning: " << w << "\n";
      return exit_code::kEmptyEval;
    }
    nlohmann::json report;
    report["config_hash"] = format_hash(fnv1a64(opt.extractor));
    report["extractor"] = opt.extractor;
    report["pairs"] = pairs;
    report["mean"] = {{"siou", s_siou / n}, {"wiou", s_wiou / n}, {"eta_sw", s_eta / n}, {"score", s_score / n}};
    if (pairs.size() >= 2) {
      report["frechet"] = frechet_distance(fit_feature_cloud(f_label), fit_feature_cloud(f_pred));
    } else {
      report["frechet"] = nullptr;
      warnings.push_back("Frechet distance needs at least 2 pairs");
    }
    report["warnings"] = warnings;

    for (const auto& w : warnings) log << "eval: warning: " << w << "\n";
    log << "eval: " << pairs.size() << " pairs  mean score " << s_score / n << "  siou " << s_siou / n << "  wiou "
        << s_wiou / n << "  eta " << s_eta / n;
    if (report["frechet"].is_number()) log << "  frechet " << report["frechet"].get<double>();
    log << "\n";
    if (opt.json_out) write_text(*opt.json_out, report.dump(2) + "\n");
    return exit_code::kOk;
  });
}

ConvertOp parse_convert_op(const std::string& s) {
  if (s == "canvas") return ConvertOp::Canvas;
  if (s == "augment") return ConvertOp::Augment;
  if (s == "rasterize") return ConvertOp::Rasterize;
  throw UsageError("unknown convert op '" + s + "' (canvas, augment, rasterize)");
}

int cmd_convert(const ConvertOptions& opt, std::ostream& log) {
  return guarded(log, "convert", [&] {
    std::vector<fs::path> files;
    for (const auto& in : opt.inputs) {
      if (fs::is_directory(in)) {
        for (const auto& e : fs::directory_iterator(in))
          if (e.is_regular_file()) files.push_back(e.path());
      } else if (fs::is_regular_file(in)) {
        files.push_back(in);
      } else {
        throw DataError("no such input: " + in.string());
      }
    }
    std::sort(files.begin(), files.end());
    files.erase(std::remove_if(files.begin(), files.end(),
                               [](const fs::path& p) { return p.extension() != ".png" && p.extension() != ".csv"; }),
                files.end());
    if (files.empty()) throw DataError("no PNG or CSV inputs");
    const bool any_png = std::any_of(files.begin(), files.end(), [](auto& p) { return p.extension() == ".png"; });
    const bool any_csv = std::any_of(files.begin(), files.end(), [](auto& p) { return p.extension() == ".csv"; });
    if (any_png && any_csv) throw UsageError("inputs mix PNG drawings and segment CSVs");
    if (opt.op == ConvertOp::Rasterize && any_png) throw UsageError("rasterize takes segment CSVs");
    if (opt.op != ConvertOp::Rasterize && any_csv) throw UsageError("canvas and augment take PNG drawings");
    if (opt.op == ConvertOp::Rasterize && (opt.width < 1 || opt.height < 1))
      throw UsageError("rasterize needs a positive width and height");

    fs::create_directories(opt.output_dir);
    int64_t written = 0;
    for (const auto& f : files) {
      const std::string stem = f.stem().string();
      switch (opt.op) {
        case ConvertOp::Canvas: {
          const SemanticDrawing d = load_drawing_file(f, RgbMode::Lenient);
          write_png(opt.output_dir / (stem + "__canvas.png"), canvas_to_rgb(extract_canvas(d)));
          ++written;
          break;
        }
        case ConvertOp::Augment: {
          const SemanticDrawing d = load_drawing_file(f, RgbMode::Lenient);
          const auto variants = augment(d);
          for (size_t k = 0; k < variants.size(); ++k) {
            save_drawing(opt.output_dir / (stem + "__" + kAugmentOps[k] + ".png"), variants[k]);
            ++written;
          }
          break;
        }
        case ConvertOp::Rasterize: {
          const auto bytes = read_file_bytes(f);
          const double ew = opt.extent_width > 0 ? opt.extent_width : static_cast<double>(opt.width);
          const double eh = opt.extent_height > 0 ? opt.extent_height : static_cast<double>(opt.height);
          const auto table =
              parse_segment_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), ew, eh);
          save_drawing(opt.output_dir / (stem + "__rasterize.png"), rasterize_segments(table, opt.width, opt.height));
          ++written;
          break;
        }
      }
    }
    log << "convert: " << files.size() << " inputs -> " << written << " files in " << opt.output_dir.string() << "\n";
    return exit_code::kOk;
  });
}

// ---- verify ----

namespace {

VerificationReport check_schedule(const NoiseSchedule& s) {
  VerificationReport r;
  r.name = "schedule_invariants";
  const int T = s.steps();
  bool ok = s.alpha_bar(0) == 1.0;
  double worst = 0.0;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    ok = ok && s.beta(t) > 0 && s.beta(t) <= kMaxBeta && s.alpha_bar(t) < s.alpha_bar(t - 1);
    prod *= 1.0 - s.beta(t);
    worst = std::max(worst, std::abs(prod - s.alpha_bar(t)) / s.alpha_bar(t));
  }
  r.values = {{"alpha_bar_0", s.alpha_bar(0)},
              {"alpha_bar_mid", s.alpha_bar(T / 2)},
              {"alpha_bar_T", s.alpha_bar(T)},
              {"alpha_bar_T_unclipped", s.alpha_bar_unclipped(T)}};
  r.discrepancy = worst;
  r.tolerance = 1e-10;
  r.passed = ok && worst <= r.tolerance && s.alpha_bar_unclipped(T) <= 1e-12;
  r.note = "alpha_bar_0 == 1, betas in (0, 0.999], decreasing, product telescopes";
  return r;
}

VerificationReport check_posterior(const NoiseSchedule& s, int n, uint64_t seed) {
  VerificationReport r;
  r.name = "posterior_mean_identity";
  Rng rng(seed, 11);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
    const Tensor x0 = rng.normal_tensor({1, 4, 4});
    const Tensor eps = rng.normal_tensor({1, 4, 4});
    const Tensor xt = forward_sample(x0, t, eps, s);
    const Tensor a = posterior_params(xt, x0, t, s).mean;
    const Tensor b = posterior_mean_from_eps(xt, eps, t, s);
    for (int64_t k = 0; k < a.numel(); ++k)
      worst = std::max(worst, std::abs(a[k] - b[k]) / std::max({std::abs(a[k]), std::abs(b[k]), 1e-12}));
  }
  const Tensor x0 = rng.normal_tensor({1, 4, 4});
  const Tensor xt = forward_sample(x0, 1, rng.normal_tensor({1, 4, 4}), s);
  const PosteriorParams p1 = posterior_params(xt, x0, 1, s);
  const double t1 = max_abs_diff(p1.mean, x0);
  r.values = {{"t1_mean_error", t1}, {"t1_variance", p1.variance_scale}};
  r.samples = n;
  r.discrepancy = worst;
  r.tolerance = 1e-10;
  r.passed = worst <= r.tolerance && t1 == 0.0 && p1.variance_scale == 0.0;
  return r;
}

VerificationReport check_theorem2_batch(const NoiseSchedule& s, int n, double fault, uint64_t seed) {
  Rng rng(seed, 12);
  VerificationReport worst;
  worst.passed = true;
  bool all = true;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd a(16), b(16);
    for (int k = 0; k < 16; ++k) {
      a[k] = rng.normal();
      b[k] = rng.normal();
    }
    const int t = s.steps() >= 2 ? static_cast<int>(rng.uniform_int(2, s.steps())) : 1;
    const double bt = s.steps() >= 2 ? s.beta_tilde(t) : 0.5;
    VerificationReport r = check_theorem2(a, b, bt, fault);
    all = all && r.passed;
    if (i == 0 || r.discrepancy > worst.discrepancy) worst = r;
  }
  worst.passed = all;
  worst.samples = n;
  worst.note = "worst of " + std::to_string(n) + " random 16-dim instances";
  if (fault != 0.0) worst.note += ", fault " + fmt_double(fault);
  return worst;
}

VerificationReport check_kl_forms(uint64_t seed) {
  VerificationReport r;
  r.name = "kl_matrix_vs_isotropic";
  Rng rng(seed, 13);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Tensor mp = rng.normal_tensor({8});
    const Tensor mq = rng.normal_tensor({8});
    const double vp = 0.1 + rng.uniform();
    const double vq = 0.1 + rng.uniform();
    const Eigen::Map<const Eigen::VectorXd> ep(mp.ptr(), 8), eq(mq.ptr(), 8);
    const double a = kl_gaussian(GaussianSpec::isotropic(ep, vp), GaussianSpec::isotropic(eq, vq));
    const double b = kl_isotropic(mp, vp, mq, vq);
    worst = std::max(worst, std::abs(a - b) / std::max(std::abs(b), 1e-12));
  }
  r.samples = 20;
  r.discrepancy = worst;
  r.tolerance = 1e-9;
  r.passed = worst <= r.tolerance;
  return r;
}

VerificationReport check_prior(const NoiseSchedule& s, int64_t h, int64_t w) {
  VerificationReport r;
  r.name = "prior_matching_kl";
  Tensor x0({1, h, w});
  for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = i % 2 ? 1.0 : -1.0;
  const double kl = prior_matching_kl(x0, s);
  r.values = {{"kl", kl}, {"alpha_bar_T", s.alpha_bar(s.steps())}};
  r.discrepancy = kl;
  r.tolerance = 1e-4;
  r.passed = kl < r.tolerance;
  r.note = "worst case |x0| = 1 at " + std::to_string(h) + "x" + std::to_string(w);
  return r;
}

}  // namespace

VerificationReport check_denoiser_gradients(DenoiserModel& model, const NoiseSchedule& s, const DiffusionConfig& dc,
                                            int n, uint64_t seed) {
  VerificationReport r;
  r.name = "denoiser_gradient_fidelity";
  Rng rng(seed, 14);
  ParameterStore& ps = model.parameters();
  // a zero output layer blocks every gradient upstream of it
  Var& out_w = ps.get("out.conv.w");
  if (squared_norm(out_w.value()) == 0.0)
    for (double& v : out_w.mutable_value().data()) v = 0.05 * rng.normal();

  const auto [h, w] = model.resolution();
  const Tensor x0 = rng.normal_tensor({1, h, w});
  const Tensor y = rng.normal_tensor({1, h, w});
  const Tensor eps = rng.normal_tensor({1, h, w});
  const int t = std::max(1, s.steps() / 2);
  const double d = 1.5;
  ps.zero_grad();
  const Var loss = training_loss(model, x0, y, d, t, eps, dc, s);
  backward(loss);
  auto value = [&] {
    NoGradGuard g;
    return training_loss(model, x0, y, d, t, eps, dc, s).value().item();
  };
  // central differences lose about eps_mach * |L| / h in absolute terms, so only
  // entries with gradients well above that are compared
  const double floor = 1e-6 * std::abs(loss.value().item());
  const double hstep = 1e-3;
  double worst = 0.0;
  std::string worst_at;
  int checked = 0;
  for (int tries = 0; checked < n && tries < 200 * n; ++tries) {
    const size_t pi = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ps.size()) - 1));
    Var& p = ps.vars()[pi];
    const int64_t k = rng.uniform_int(0, p.value().numel() - 1);
    const double analytic = p.grad()[k];
    if (std::abs(analytic) < floor) continue;
    double& slot = p.mutable_value()[k];
    const double saved = slot;
    auto at = [&](double off) {
      slot = saved + off;
      return value();
    };
    const double numeric = (8.0 * (at(hstep) - at(-hstep)) - (at(2 * hstep) - at(-2 * hstep))) / (12.0 * hstep);
    slot = saved;
    const double e = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    ++checked;
    if (e >= worst) {
      worst = e;
      worst_at = ps.names()[pi] + "[" + std::to_string(k) + "]";
    }
  }
  ps.zero_grad();
  r.values = {{"loss", loss.value().item()}, {"gradient_floor", floor}};
  r.samples = checked;
  r.discrepancy = worst;
  r.tolerance = 1e-5;
  r.passed = checked == n && worst < r.tolerance;
  r.note = "fourth-order central differences, h = 1e-3; worst at " + worst_at;
  return r;
}

namespace {

VerificationReport check_elbo_terms(const DenoiserModel& model, const NoiseSchedule& s, const DiffusionConfig& dc,
                                    uint64_t seed) {
  VerificationReport r;
  r.name = "elbo_terms_finite";
  Rng rng(seed, 15);
  const auto [h, w] = model.resolution();
  const SemanticDrawing st = synth_layout(w, h, 1.5, seed);
  const TrainingSample ts = to_training_sample(st);
  std::vector<int> ts_list;
  for (int t : {2, s.steps() / 4, s.steps() / 2, s.steps()})
    if (t >= 2 && t <= s.steps()) ts_list.push_back(t);
  const auto kl = elbo_kl_terms(model, ts.x0, ts.y, ts.d, s, ts_list, dc, rng);
  bool ok = true;
  for (size_t i = 0; i < kl.size(); ++i) {
    r.values.emplace_back("kl_t" + std::to_string(ts_list[i]), kl[i]);
    ok = ok && std::isfinite(kl[i]) && kl[i] >= 0;
  }
  r.passed = ok;
  return r;
}

}  // namespace

int cmd_verify(const RunConfig& cfg, const VerifyOptions& opt, std::ostream& log) {
  return guarded(log, "verify", [&] {
    RunConfig run = cfg;
    std::unique_ptr<DenoiserModel> model;
    if (opt.checkpoint) {
      LoadedModel lm = load_model(*opt.checkpoint);
      run = lm.config;
      model = std::move(lm.model);
    } else {
      run.validate();
      model = std::make_unique<DenoiserModel>(run.denoiser(), run.seed);
    }
    const NoiseSchedule sched = build_schedule(run.steps, run.offset);
    const DiffusionConfig dc = run.diffusion();

    std::vector<VerificationReport> reports;
    reports.push_back(check_schedule(sched));
    reports.push_back(check_posterior(sched, 200, run.seed));
    reports.push_back(check_theorem2_batch(sched, 100, opt.fault, run.seed));
    reports.push_back(check_kl_forms(run.seed));
    for (int t : {1, 10, 100}) {
      if (t > sched.steps()) continue;
      reports.push_back(check_marginal_consistency(sched, t, 20000, run.seed + static_cast<uint64_t>(t)));
    }
    reports.push_back(check_prior(sched, run.height, run.width));
    reports.push_back(check_denoiser_gradients(*model, sched, dc, 20, run.seed));
    if (opt.checkpoint) reports.push_back(check_elbo_terms(*model, sched, dc, run.seed));

    bool all = true;
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& r : reports) {
      all = all && r.passed;
      checks.push_back(nlohmann::json::parse(r.to_json()));
      log << r.to_text() << "\n";
    }
    nlohmann::json report;
    report["config_hash"] = format_hash(run.hash());
    report["passed"] = all;
    report["checks"] = checks;
    if (opt.json_out) write_text(*opt.json_out, report.dump(2) + "\n");
    if (opt.json_to_log) log << report.dump(2) << "\n";
    log << "verify: " << (all ? "all checks passed" : "FAILED") << "\n";
    return all ? exit_code::kOk : exit_code::kVerifyFailed;
  });
}

// ---- synth ----

int cmd_synth(const SynthOptions& opt, std::ostream& log) {
  return guarded(log, "synth", [&] {
    if (opt.root.empty()) throw UsageError("synth needs an output root");
    std::vector<std::pair<std::string, double>> groups;
    for (const auto& [tag, count] : opt.per_group) {
      if (count < 0) throw UsageError("negative count for group " + tag);
      const auto d = parse_condition(tag);
      if (!d || group_tag(*d) != tag) throw UsageError("unknown group '" + tag + "'");
      groups.emplace_back(tag, *d);
    }
    const fs::path dir = opt.root / opt.split;
    fs::create_directories(dir);
    int idx = 0;
    for (const auto& [tag, d] : groups) {
      for (int i = 0; i < opt.per_group.at(tag); ++i, ++idx) {
        char name[32];
        std::snprintf(name, sizeof name, "layout%04d__", idx);
        const uint64_t s = opt.seed * 1000003ull + static_cast<uint64_t>(idx);
        save_drawing(dir / (std::string(name) + tag + ".png"), synth_layout(opt.width, opt.height, d, s));
      }
    }
    log << "synth: wrote " << idx << " layouts to " << dir.string() << "\n";
    return exit_code::kOk;
  });
}

}  // namespace pcdm
