#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcdm/errors.hpp"
#include "pcdm/pipeline.hpp"

using namespace pcdm;

namespace {

// "key=value" pairs from --set
std::vector<std::pair<std::string, std::string>> split_overrides(const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : raw) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  const auto ov = split_overrides(sets);
  if (path.empty()) {
    RunConfig cfg;
    for (const auto& [k, v] : ov) set_config_value(cfg, k, v);
    return cfg;
  }
  return load_run_config(path, ov);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcdm: condition-aware diffusion for structural drawings"};
  app.require_subcommand(1);

  std::string cfg_path;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "train a denoiser, one checkpoint per epoch");
  train->add_option("-c,--config", cfg_path, "config file")->required();
  train->add_option("--set", sets, "override a config key (key=value)");

  SampleOptions so;
  auto* sample = app.add_subcommand("sample", "generate structural drawings");
  sample->add_option("--checkpoint", so.checkpoint)->required();
  sample->add_option("--input", so.input, "architectural or canvas PNG")->required();
  sample->add_option("-d,--condition", so.d, "physical condition value");
  sample->add_option("-n", so.n, "number of samples");
  sample->add_option("--seed", so.seed);
  sample->add_option("-o,--out", so.output_dir);
  sample->add_option("--t-infer", so.t_infer, "reverse steps (0 = full chain)");

  EvalOptions eo;
  std::string eval_json;
  auto* eval = app.add_subcommand("eval", "score predictions against labels");
  eval->add_option("--pred", eo.pred_dir)->required();
  eval->add_option("--label", eo.label_dir)->required();
  eval->add_option("--extractor", eo.extractor, "feature extractor for the Frechet distance");
  eval->add_option("--json", eval_json, "write the JSON report here");

  ConvertOptions co;
  std::string op;
  auto* convert = app.add_subcommand("convert", "canvas extraction, augmentation, segment rasterization");
  convert->add_option("op", op, "canvas | augment | rasterize")->required();
  convert->add_option("inputs", co.inputs, "files or directories")->required();
  convert->add_option("-o,--out", co.output_dir)->required();
  convert->add_option("--width", co.width);
  convert->add_option("--height", co.height);
  convert->add_option("--extent-width", co.extent_width);
  convert->add_option("--extent-height", co.extent_height);

  VerifyOptions vo;
  std::string verify_ckpt, verify_json;
  bool verify_print_json = false;
  auto* verify = app.add_subcommand("verify", "run the analytic and numerical checks");
  verify->add_option("-c,--config", cfg_path, "config file (defaults if omitted)");
  verify->add_option("--set", sets, "override a config key (key=value)");
  verify->add_option("--checkpoint", verify_ckpt);
  verify->add_option("--json", verify_json, "write the JSON report here");
  verify->add_flag("--print-json", verify_print_json);
  verify->add_option("--fault", vo.fault, "perturb beta_tilde in the KL identity")->group("");

  SynthOptions sy;
  int n_h1 = 4, n_h2 = 4, n_8 = 4;
  auto* synth = app.add_subcommand("synth", "write procedural layouts");
  synth->add_option("-o,--out", sy.root)->required();
  synth->add_option("--split", sy.split);
  synth->add_option("--width", sy.width);
  synth->add_option("--height", sy.height);
  synth->add_option("--h1", n_h1, "count for 7degree-H1");
  synth->add_option("--h2", n_h2, "count for 7degree-H2");
  synth->add_option("--g8", n_8, "count for 8degree");
  synth->add_option("--seed", sy.seed);

  auto* show = app.add_subcommand("config", "print the resolved config and its hash");
  show->add_option("-c,--config", cfg_path);
  show->add_option("--set", sets);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(resolve_config(cfg_path, sets), std::cerr);
    if (*sample) return cmd_sample(so, std::cerr);
    if (*eval) {
      if (!eval_json.empty()) eo.json_out = eval_json;
      return cmd_eval(eo, std::cerr);
    }
    if (*convert) {
      co.op = parse_convert_op(op);
      return cmd_convert(co, std::cerr);
    }
    if (*verify) {
      if (!verify_ckpt.empty()) vo.checkpoint = verify_ckpt;
      if (!verify_json.empty()) vo.json_out = verify_json;
      vo.json_to_log = verify_print_json;
      return cmd_verify(resolve_config(cfg_path, sets), vo, std::cout);
    }
    if (*synth) {
      sy.per_group = {{"7degree-H1", n_h1}, {"7degree-H2", n_h2}, {"8degree", n_8}};
      return cmd_synth(sy, std::cerr);
    }
    if (*show) {
      const RunConfig cfg = resolve_config(cfg_path, sets);
      std::cout << cfg.to_text() << "# hash " << format_hash(cfg.hash()) << "\n";
      return exit_code::kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::kConfigError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return exit_code::kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_code::kMissingData;
  }
  return exit_code::kOk;
}
