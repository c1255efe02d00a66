// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metric_cases.hpp"
#include "pcdm/denoiser.hpp"
#include "pcdm/diffusion.hpp"
#include "pcdm/drawing.hpp"
#include "pcdm/image.hpp"
#include "pcdm/metrics.hpp"
#include "pcdm/pipeline.hpp"
#include "pcdm/schedule.hpp"
#include "pcdm/theory.hpp"

using namespace pcdm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

int g_failures = 0;

void run(const std::string& name, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs <= budget_s;
  const bool ok = o.passed && in_time;
  if (!ok) ++g_failures;
  char timing[64];
  std::snprintf(timing, sizeof timing, "%.2fs of %.0fs", secs, budget_s);
  std::cout << (ok ? "PASS " : "FAIL ") << name << "  [" << timing << (in_time ? "" : ", over budget") << "]  "
            << o.detail << std::endl;
}

std::string num(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double rel(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Cosine alpha_bar evaluated directly in extended precision, no table.
long double scalar_alpha_bar(int t, int T, long double s) {
  const long double pi = 3.141592653589793238462643383279502884L;
  auto g = [&](long double u) {
    const long double c = std::cos((u / T + s) / (1 + s) * pi / 2);
    return c * c;
  };
  return g(t) / g(0);
}

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / ("pcdm_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig toy_config() { return load_run_config(fs::path(PCDM_SOURCE_DIR) / "configs" / "toy.cfg"); }

std::vector<std::vector<double>> read_loss_csv(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    rows.push_back(r);
  }
  return rows;
}

bool shear_subset_of_infill(const SemanticDrawing& out, const SemanticDrawing& arch) {
  for (size_t i = 0; i < out.classes.size(); ++i)
    if (out.classes[i] == PixelClass::ShearWall && arch.classes[i] != PixelClass::InfillWall) return false;
  return true;
}

// ---- criteria ----

Outcome schedule_anchor() {
  const int T = 2000;
  const NoiseSchedule s = build_schedule(T, 0.008);
  const double frozen = 0.4938435904406377;  // 40-digit evaluation of the cosine formula
  const long double independent = scalar_alpha_bar(1000, T, 0.008L);
  double tele = 0.0;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    prod *= 1.0 - s.beta(t);
    tele = std::max(tele, rel(prod, s.alpha_bar(t)));
  }
  const bool ok = s.alpha_bar(0) == 1.0 && std::abs(s.alpha_bar(1000) - static_cast<double>(independent)) <= 1e-4 &&
                  std::abs(s.alpha_bar(1000) - frozen) <= 1e-12 && s.alpha_bar_unclipped(T) <= 1e-12 && tele <= 1e-10;
  return {ok, "alpha_bar[0]=" + num(s.alpha_bar(0)) + " alpha_bar[1000]=" + num(s.alpha_bar(1000), 10) +
                  " scalar=" + num(static_cast<double>(independent), 10) +
                  " (commonly quoted 0.49446 is not reproduced by the formula; offset " +
                  num(0.49446 - s.alpha_bar(1000), 3) + ") unclipped alpha_bar[T]=" + num(s.alpha_bar_unclipped(T), 3) +
                  " telescoping max rel err=" + num(tele, 3)};
}

Outcome posterior_identity() {
  const NoiseSchedule s = build_schedule(2000);
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
    const Tensor x0 = rng.normal_tensor({1, 4, 4});
    const Tensor eps = rng.normal_tensor({1, 4, 4});
    const Tensor xt = forward_sample(x0, t, eps, s);
    const Tensor a = posterior_params(xt, x0, t, s).mean;
    const Tensor b = posterior_mean_from_eps(xt, eps, t, s);
    for (int64_t k = 0; k < a.numel(); ++k) worst = std::max(worst, rel(a[k], b[k], 1e-12));
  }
  const Tensor x0 = rng.normal_tensor({1, 4, 4});
  const Tensor x1 = forward_sample(x0, 1, rng.normal_tensor({1, 4, 4}), s);
  const PosteriorParams p1 = posterior_params(x1, x0, 1, s);
  const bool exact = p1.mean == x0 && p1.variance_scale == 0.0 && s.beta_tilde(1) == 0.0;
  return {worst <= 1e-10 && exact, "1000 triples, max rel diff=" + num(worst, 3) + "; t=1 mean==x0 exactly: " +
                                       (p1.mean == x0 ? "yes" : "no") + ", beta_tilde_1=" + num(s.beta_tilde(1))};
}

Outcome marginal_monte_carlo() {
  const NoiseSchedule s = build_schedule(2000);
  bool ok = true;
  std::string detail;
  for (int t : {1, 10, 100}) {
    const VerificationReport r = check_marginal_consistency(s, t, 100000, 900 + static_cast<uint64_t>(t));
    ok = ok && r.passed;
    detail += "t=" + std::to_string(t) + ": " + num(r.discrepancy, 3) + " SE; ";
  }
  return {ok, detail + "10^5 draws each, bound 4 SE"};
}

Outcome theorem2_identity() {
  const NoiseSchedule s = build_schedule(2000);
  Rng rng(77);
  double worst = 0.0;
  bool ok = true;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd a(16), b(16);
    for (int k = 0; k < 16; ++k) {
      a[k] = rng.normal();
      b[k] = rng.normal();
    }
    const int t = static_cast<int>(rng.uniform_int(2, s.steps()));
    const VerificationReport r = check_theorem2(a, b, s.beta_tilde(t));
    ok = ok && r.passed;
    worst = std::max(worst, r.discrepancy);
  }
  // mutation: the check must notice a perturbed variance
  Eigen::VectorXd a = Eigen::VectorXd::Ones(16), b = Eigen::VectorXd::Zero(16);
  const bool caught = !check_theorem2(a, b, s.beta_tilde(1000), 1e-3).passed;

  auto prior = [&](int64_t h, int64_t w) {
    Tensor x0({1, h, w});
    for (int64_t i = 0; i < x0.numel(); ++i) x0[i] = i % 2 ? 1.0 : -1.0;
    return prior_matching_kl(x0, s);
  };
  const double kl_desk = prior(64, 128);
  const double kl_native = prior(512, 1024);
  ok = ok && caught && kl_desk < 1e-4;
  return {ok, "100 instances, max rel diff=" + num(worst, 3) + ", fault detected: " + (caught ? "yes" : "no") +
                  "; prior KL (|x0|=1, 64x128)=" + num(kl_desk, 3) + " [512x1024: " + num(kl_native, 3) +
                  ", dominated by the beta clip]"};
}

Outcome gradient_fidelity() {
  const RunConfig cfg = toy_config();
  DenoiserModel model(cfg.denoiser(), 31);
  const VerificationReport r =
      check_denoiser_gradients(model, build_schedule(cfg.steps, cfg.offset), cfg.diffusion(), 20, 5);
  return {r.passed, std::to_string(r.samples) + " entries, max rel err=" + num(r.discrepancy, 3) + " (" + r.note + ")"};
}

Outcome attention_laws() {
  const RunConfig cfg = toy_config();
  const DenoiserConfig dc = cfg.denoiser();
  const DenoiserModel m(dc, 41);
  Rng rng(42);
  const int64_t c = dc.channels_at(dc.depth - 1);
  const int64_t h = dc.height >> (dc.depth - 1), w = dc.width >> (dc.depth - 1);
  const Var o_s = Var::constant(rng.normal_tensor({c, h, w}));

  // rebuild the bottleneck self-attention weights from the stored parameters
  const auto& P = m.parameters();
  auto conv1 = [&](const std::string& id, const Var& x) {
    return ops::conv2d(x, P.get(id + ".w"), P.get(id + ".b"), 1, 0);
  };
  const Var hn = ops::group_norm(o_s, dc.groups_for(c), P.get("mid.sab.gn.gamma"), P.get("mid.sab.gn.beta"));
  const Var q = ops::reshape(conv1("mid.sab.q", hn), {c, h * w});
  const Var k = ops::reshape(conv1("mid.sab.k", hn), {c, h * w});
  const Tensor wts =
      ops::softmax(ops::scale(ops::matmul(ops::transpose(q), k), 1.0 / std::sqrt(double(c))), 1).value();
  double row_err = 0.0;
  for (int64_t r = 0; r < h * w; ++r) {
    double sum = 0.0;
    for (int64_t j = 0; j < h * w; ++j) sum += wts[r * h * w + j];
    row_err = std::max(row_err, std::abs(sum - 1.0));
  }
  // the rebuilt weights are the ones the block uses
  const Var v = ops::reshape(conv1("mid.sab.v", hn), {c, h * w});
  const Tensor rebuilt =
      ops::add(conv1("mid.sab.out", ops::reshape(ops::matmul(v, ops::transpose(Var::constant(wts))), {c, h, w})), o_s)
          .value();
  const double sab_diff = max_abs_diff(rebuilt, m.sab(o_s, "mid.sab").value());

  // stressed logits
  const Tensor big = ops::softmax(Var::constant(1e3 * rng.normal_tensor({64, 64})), 1).value();
  for (int64_t r = 0; r < 64; ++r) {
    double sum = 0.0;
    for (int64_t j = 0; j < 64; ++j) sum += big[r * 64 + j];
    row_err = std::max(row_err, std::abs(sum - 1.0));
  }

  bool constant = true;
  const ConditionEmbedding e = m.embed_conditions(57, 1.5);
  for (const auto& [id, ex] : {std::pair{"mid.cab_t", e.e_t}, std::pair{"mid.cab_d", e.e_d}}) {
    const Tensor att = m.cab_attention(o_s, ex, id).value();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 1; i < h * w; ++i) constant = constant && att[ch * h * w + i] == att[ch * h * w];
  }
  const bool ok = row_err <= 1e-6 && sab_diff <= 1e-12 && constant;
  return {ok, "max |row sum - 1|=" + num(row_err, 3) + " (" + std::to_string(h * w) +
                  " positions + stressed logits), rebuilt SAB diff=" + num(sab_diff, 3) +
                  ", CAB pre-projection map spatially constant: " + (constant ? "exact" : "no")};
}

Outcome metric_oracle() {
  using namespace pcdm::testing;
  bool ok = true;
  double worst = 0.0;
  for (const auto& mc : kMetricCases) {
    const SemanticDrawing pred = parse_grid(mc.pred), label = parse_grid(mc.label);
    ok = ok && confusion_matrix(pred, label) == mc.confusion;
    const IoUReport r = score_iou(pred, label);
    for (auto [got, want] : {std::pair{r.siou, frac(mc.siou)}, std::pair{r.wiou, frac(mc.wiou)},
                             std::pair{r.sw_ratio_pred, frac(mc.ratio_pred)},
                             std::pair{r.sw_ratio_label, frac(mc.ratio_label)}, std::pair{r.eta_sw, frac(mc.eta)},
                             std::pair{r.score, frac(mc.eta) * (0.5 * frac(mc.siou) + 0.5 * frac(mc.wiou))}})
      worst = std::max(worst, std::abs(got - want));
    ok = ok && r.eta_undefined == mc.eta_undefined;
  }
  ok = ok && worst <= 1e-15;
  const double eta = eta_sw_ratio(0.5, 0.4);
  ok = ok && std::abs(eta - 0.8) <= 1e-15;

  Rng rng(8);
  FeatureCloud a, b;
  a.n = b.n = 100;
  a.mean = Eigen::VectorXd::Zero(5);
  b.mean = Eigen::VectorXd::Zero(5);
  Eigen::VectorXd da(5), db(5);
  for (int i = 0; i < 5; ++i) {
    a.mean[i] = rng.normal();
    b.mean[i] = rng.normal();
    da[i] = 0.1 + rng.uniform();
    db[i] = 0.1 + rng.uniform();
  }
  a.cov = da.asDiagonal();
  b.cov = db.asDiagonal();
  double closed = (a.mean - b.mean).squaredNorm();
  for (int i = 0; i < 5; ++i) closed += std::pow(std::sqrt(da[i]) - std::sqrt(db[i]), 2);
  const double fd = frechet_distance(a, b);

  std::vector<std::vector<double>> feats;
  for (uint64_t s = 0; s < 12; ++s) feats.push_back(extract_features(synth_layout(64, 32, 1.0 + double(s % 3), s)));
  const FeatureCloud cloud = fit_feature_cloud(feats);
  const double self = frechet_distance(cloud, cloud);
  ok = ok && std::abs(fd - closed) <= 1e-6 && std::abs(self) <= 1e-10;
  return {ok, "5 pairs: confusion matrices exact, max value err=" + num(worst, 3) + "; eta(0.5, 0.4)=" + num(eta, 17) +
                  "; Frechet diag err=" + num(std::abs(fd - closed), 3) + ", identical clouds=" + num(self, 3)};
}

struct ToyRun {
  int exit_code = -1;
  fs::path dir;
  std::vector<std::vector<double>> loss;
};

ToyRun train_toy(const fs::path& data, const fs::path& out, Parameterization p) {
  RunConfig cfg = toy_config();
  cfg.dataset_root = data;
  cfg.output_dir = out;
  cfg.epochs = 70;
  cfg.parameterization = p;
  std::ostringstream log;
  ToyRun r;
  r.exit_code = cmd_train(cfg, log);
  r.dir = out;
  if (r.exit_code == 0) r.loss = read_loss_csv(out / "loss.csv");
  return r;
}

Outcome end_to_end(const fs::path& root) {
  SynthOptions so;
  so.root = root / "data";
  so.width = 64;
  so.height = 32;
  so.per_group = {{"7degree-H1", 6}, {"7degree-H2", 5}, {"8degree", 5}};
  so.seed = 3;
  std::ostringstream log;
  if (cmd_synth(so, log) != 0) return {false, "synth failed: " + log.str()};

  const ToyRun run = train_toy(so.root, root / "x0", Parameterization::PredictX0);
  if (run.exit_code != 0 || run.loss.size() != 70) return {false, "training failed"};
  const double first = run.loss.front()[1], last = run.loss.back()[1];
  const bool a = last < 0.25 * first;

  LoadedModel lm = load_model(run.dir / checkpoint_name(70));
  const RunConfig& cfg = lm.config;
  const NoiseSchedule sched = build_schedule(cfg.steps, cfg.offset);
  const auto labels = load_split(so.root, "train", cfg.height, cfg.width);

  const uint64_t seed_a = 1000, seed_b = 2000;
  bool b = true;
  double score = 0.0, baseline = 0.0;
  Rng base_rng(99);
  std::vector<Generation> gens;
  for (size_t i = 0; i < labels.size(); ++i) {
    const SemanticDrawing arch = architectural_of(labels[i]);
    Rng rng(seed_a, i);
    gens.push_back(generate(*lm.model, arch, *labels[i].condition, cfg.diffusion(), sched, rng));
    b = b && shear_subset_of_infill(gens.back().structural, arch);
    score += score_iou(gens.back().structural, labels[i]).score;
    for (int k = 0; k < 8; ++k) {
      SemanticDrawing guess = arch;
      for (auto& px : guess.classes)
        if (px == PixelClass::InfillWall && base_rng.uniform() < 0.5) px = PixelClass::ShearWall;
      baseline += score_iou(guess, labels[i]).score / 8.0;
    }
  }
  score /= double(labels.size());
  baseline /= double(labels.size());
  const bool c = score >= baseline + 0.15;

  int differing = 0;
  for (size_t i = 0; i < 4; ++i) {
    Rng rng(seed_b, i);
    const Generation g = generate(*lm.model, architectural_of(labels[i]), *labels[i].condition, cfg.diffusion(), sched, rng);
    differing += !g.structural.same_pixels(gens[i].structural);
  }
  Rng again(seed_a, 0);
  const Generation g0 = generate(*lm.model, architectural_of(labels[0]), *labels[0].condition, cfg.diffusion(), sched, again);
  const bool same_bytes =
      encode_png(drawing_to_rgb(g0.structural)) == encode_png(drawing_to_rgb(gens[0].structural)) && g0.line == gens[0].line;
  const bool d = differing > 0 && same_bytes;

  return {a && b && c && d,
          std::string("(a) loss ") + num(first, 5) + " -> " + num(last, 5) + " (" + num(100 * last / first, 3) +
              "% of epoch 1) " + (a ? "ok" : "FAIL") + "; (b) shear within infill on all pixels of " +
              std::to_string(labels.size()) + " samples: " + (b ? "ok" : "FAIL") + "; (c) mean Score_IoU " +
              num(score, 4) + " vs random baseline " + num(baseline, 4) + " (margin " + num(score - baseline, 3) +
              ") " + (c ? "ok" : "FAIL") + "; (d) second seed differs on " + std::to_string(differing) +
              "/4 drawings, same seed bit-identical: " + (same_bytes ? "yes" : "no")};
}

Outcome ablation(const fs::path& root) {
  const ToyRun run = train_toy(root / "data", root / "eps", Parameterization::PredictEps);
  if (run.exit_code != 0 || run.loss.size() != 70) return {false, "predict-eps training failed"};
  bool finite = true;
  for (const auto& r : run.loss) finite = finite && std::isfinite(r[1]);

  LoadedModel lm = load_model(run.dir / checkpoint_name(70));
  const RunConfig& cfg = lm.config;
  const NoiseSchedule sched = build_schedule(cfg.steps, cfg.offset);
  const auto labels = load_split(root / "data", "train", cfg.height, cfg.width);
  const TrainingSample ts = to_training_sample(labels[0]);

  Rng rng(5150);
  double worst = 0.0;
  int compared = 0;
  for (int t : {1, 2, 10, 50, 100, 150, 199, 200}) {
    const Tensor xt = forward_sample(ts.x0, t, rng.normal_tensor(ts.x0.shape()), sched);
    const Tensor eps_hat = lm.model->predict(xt, t, ts.y, ts.d);
    const Tensor x0_hat = x0_from_eps(xt, eps_hat, t, sched);
    for (bool clip : {false, true}) {
      const Tensor m_eps = reverse_mean(xt, t, eps_hat, Parameterization::PredictEps, clip, sched);
      const Tensor m_x0 = reverse_mean(xt, t, x0_hat, Parameterization::PredictX0, clip, sched);
      double scale = 0.0;
      for (double v : m_x0.data()) scale = std::max(scale, std::abs(v));
      worst = std::max(worst, max_abs_diff(m_eps, m_x0) / std::max(scale, 1e-300));
      ++compared;
    }
  }
  Rng srng(1, 0);
  const Generation g =
      generate(*lm.model, architectural_of(labels[0]), ts.d, cfg.diffusion(), sched, srng);
  const bool subset = shear_subset_of_infill(g.structural, architectural_of(labels[0]));
  const bool ok = finite && worst <= 1e-9 && subset;
  return {ok, "predict-eps run: 70 epochs, loss " + num(run.loss.front()[1], 5) + " -> " + num(run.loss.back()[1], 5) +
                  "; reverse means (eps vs equivalent x0, " + std::to_string(compared) +
                  " comparisons incl. clipping) max rel diff=" + num(worst, 3) + "; sample valid: " +
                  (subset ? "yes" : "no")};
}

Outcome augmentation_counts(const fs::path& root) {
  SynthOptions so;
  so.root = root / "stub";
  so.split = "basic";
  so.width = 16;
  so.height = 16;
  so.per_group = {{"7degree-H1", 63}, {"7degree-H2", 55}, {"8degree", 57}};
  std::ostringstream log;
  if (cmd_synth(so, log) != 0) return {false, log.str()};
  ConvertOptions co;
  co.op = ConvertOp::Augment;
  co.inputs = {so.root / "basic"};
  co.output_dir = root / "augmented";
  if (cmd_convert(co, log) != 0) return {false, log.str()};

  std::map<std::string, int> counts;
  int total = 0;
  bool histograms = true;
  for (const auto& e : fs::directory_iterator(co.output_dir)) {
    const SemanticDrawing d = load_drawing_file(e.path());
    ++counts[group_tag(*d.condition)];
    ++total;
    const std::string stem = e.path().stem().string();
    const SemanticDrawing src = load_drawing_file(so.root / "basic" / (stem.substr(0, stem.rfind("__")) + ".png"));
    histograms = histograms && d.histogram() == src.histogram();
  }
  const bool ok = counts["7degree-H1"] == 252 && counts["7degree-H2"] == 220 && counts["8degree"] == 228 &&
                  total == 700 && histograms;
  return {ok, "63/55/57 basics -> " + std::to_string(counts["7degree-H1"]) + "/" +
                  std::to_string(counts["7degree-H2"]) + "/" + std::to_string(counts["8degree"]) + ", total " +
                  std::to_string(total) + "; class counts preserved: " + (histograms ? "yes" : "no")};
}

}  // namespace

int main() {
  const fs::path root = scratch();
  std::cout << "acceptance run, scratch " << root.string() << std::endl;

  run("schedule-anchor", 1, schedule_anchor);
  run("posterior-identity", 10, posterior_identity);
  run("marginal-monte-carlo", 60, marginal_monte_carlo);
  run("kl-identity-and-prior", 5, theorem2_identity);
  run("gradient-fidelity", 120, gradient_fidelity);
  run("attention-laws", 5, attention_laws);
  run("metric-oracle", 5, metric_oracle);
  run("end-to-end-toy-training", 3600, [&] { return end_to_end(root); });
  run("predict-eps-ablation", 3600, [&] { return ablation(root); });
  run("augmentation-counts", 120, [&] { return augmentation_counts(root); });

  fs::remove_all(root);
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
