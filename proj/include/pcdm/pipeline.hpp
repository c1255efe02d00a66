#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcdm/adam.hpp"
#include "pcdm/checkpoint.hpp"
#include "pcdm/denoiser.hpp"
#include "pcdm/diffusion.hpp"
#include "pcdm/drawing.hpp"
#include "pcdm/schedule.hpp"
#include "pcdm/theory.hpp"

namespace pcdm {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kVerifyFailed = 1;
inline constexpr int kMissingData = 2;
inline constexpr int kConfigError = 3;
inline constexpr int kEmptyEval = 4;
}  // namespace exit_code

/// Everything a run depends on. Text form is one `key = value` per line, `#` comments.
struct RunConfig {
  std::filesystem::path dataset_root;
  std::string split = "train";
  int64_t height = 64;
  int64_t width = 128;
  int steps = 2000;
  double offset = kDefaultCosineOffset;
  int depth = 3;
  int64_t base_width = 32;
  int64_t time_encoding_dim = 32;
  int64_t cond_encoding_dim = 32;
  double period = 1e4;
  int64_t max_groups = 8;
  AdamConfig adam;
  int batch = 1;
  int epochs = 70;
  Parameterization parameterization = Parameterization::PredictX0;
  bool clip_x0 = true;
  int t_infer = 0;
  uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  DenoiserConfig denoiser() const;
  DiffusionConfig diffusion() const;
  /// ConfigError on out-of-range values.
  void validate() const;
  /// Canonical text: every key in a fixed order, doubles at full precision.
  std::string to_text() const;
  /// FNV-1a 64 over the canonical text, excluding dataset_root and output_dir.
  uint64_t hash() const;
};

std::vector<std::string> run_config_keys();
/// ConfigError for an unknown key or a malformed value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig parse_run_config(std::string_view text);
/// Reads `path` (DataError if unreadable) and applies `overrides` in order.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

std::string format_hash(uint64_t h);
uint64_t fnv1a64(std::string_view bytes);

/// Structural drawings under <root>/<split>/*.png, sorted by file name, reduced to
/// (height, width) by area majority when larger. DataError for a missing
/// directory, an unlabelled file or a size that does not divide evenly.
std::vector<SemanticDrawing> load_split(const std::filesystem::path& root, const std::string& split, int64_t height,
                                        int64_t width);
TrainingSample to_training_sample(const SemanticDrawing& structural);

Checkpoint make_checkpoint(const RunConfig& cfg, const DenoiserModel& model, const AdamState* adam, int epoch);
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<DenoiserModel> model;
  int epoch = 0;
};
/// Rebuilds the model from the config stored in the checkpoint metadata.
LoadedModel load_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

std::string checkpoint_name(int epoch);

/// Stage 1 + stage 2 for one architectural drawing.
struct Generation {
  Canvas line;
  SemanticDrawing structural;
};
Generation generate(const Denoiser& model, const SemanticDrawing& arch, double d, const DiffusionConfig& cfg,
                    const NoiseSchedule& sched, Rng& rng);

/// Architectural drawing from either a canvas PNG or an architectural PNG,
/// reduced to (height, width) when larger.
SemanticDrawing load_sample_input(const std::filesystem::path& path, int64_t height, int64_t width);

/// Autodiff against central differences on `n` random parameter entries of the
/// training loss. Entries whose gradient is below 1e-6 |loss| (the finite
/// difference noise level) are redrawn. A zero output layer is randomised first.
VerificationReport check_denoiser_gradients(DenoiserModel& model, const NoiseSchedule& sched,
                                            const DiffusionConfig& cfg, int n, uint64_t seed);

// Commands. Each returns an exit code and writes messages to `log`.

int cmd_train(const RunConfig& cfg, std::ostream& log);

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  double d = 1.0;
  int n = 1;
  uint64_t seed = 0;
  std::filesystem::path output_dir = ".";
  int t_infer = -1;  // < 0 keeps the checkpoint's value
};
/// Writes sample<i>/<stem>.png (structural) and sample<i>/line/<stem>.png (line drawing) per sample.
int cmd_sample(const SampleOptions& opt, std::ostream& log);

struct EvalOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path label_dir;
  std::string extractor = "moments";
  std::optional<std::filesystem::path> json_out;
};
int cmd_eval(const EvalOptions& opt, std::ostream& log);

enum class ConvertOp { Canvas, Augment, Rasterize };
ConvertOp parse_convert_op(const std::string& s);

struct ConvertOptions {
  ConvertOp op = ConvertOp::Augment;
  std::vector<std::filesystem::path> inputs;  // files or directories
  std::filesystem::path output_dir;
  int64_t width = 0;  // rasterize only
  int64_t height = 0;
  double extent_width = 0;  // 0 means same as width
  double extent_height = 0;
};
int cmd_convert(const ConvertOptions& opt, std::ostream& log);

struct VerifyOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> json_out;
  double fault = 0.0;  // added to beta_tilde in the closed-form side of the KL identity
  bool json_to_log = false;
};
int cmd_verify(const RunConfig& cfg, const VerifyOptions& opt, std::ostream& log);

struct SynthOptions {
  std::filesystem::path root;
  std::string split = "train";
  int64_t width = 64;
  int64_t height = 32;
  std::map<std::string, int> per_group{{"7degree-H1", 4}, {"7degree-H2", 4}, {"8degree", 4}};
  uint64_t seed = 0;
};
/// Procedural structural layouts named layout<i>__<group>.png.
int cmd_synth(const SynthOptions& opt, std::ostream& log);

}  // namespace pcdm
