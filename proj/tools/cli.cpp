#include "cli.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "uqrecon/harness.hpp"
#include "uqrecon/png_io.hpp"
#include "uqrecon/transforms_io.hpp"

namespace uqr {

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON experiment config (defaults when omitted)");
  cmd->add_option("--seed", flags.seed, "master seed (overrides the config)");
  cmd->add_option("--out", flags.out, "output directory (overrides the config)");
}

ExperimentConfig resolve(const CommonFlags& flags) {
  ExperimentConfig config = flags.config.empty() ? ExperimentConfig{} : load_experiment_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.out = flags.out;
  config.validate();
  return config;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty quantification for radiance fields and Gaussian splats", "uqrecon"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string protocol_name;
  std::string model_dir;
  std::string method_name;

  auto* generate = app.add_subcommand("generate", "render the configured scene into a transforms.json dataset");
  add_common(generate, flags);

  auto* train = app.add_subcommand("train", "train one method on the default split and save the model");
  add_common(train, flags);
  train->add_option("--method", method_name, "method (defaults to the first configured one)");

  auto* render = app.add_subcommand("render", "render the test views of a saved model");
  add_common(render, flags);
  render->add_option("--model", model_dir, "model directory written by train")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a saved model on the test views");
  add_common(eval, flags);
  eval->add_option("--model", model_dir, "model directory written by train")->required();

  auto* experiment = app.add_subcommand("experiment", "run an uncertainty protocol");
  add_common(experiment, flags);
  experiment->add_option("protocol", protocol_name, "aleatoric | views | clutter | pose")
      ->required()
      ->check(CLI::IsMember({"aleatoric", "views", "clutter", "pose"}));

  auto* report = app.add_subcommand("report", "summarize results.csv of an output directory");
  add_common(report, flags);

  // CLI11 parses in reverse order from a vector.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const ProgressSink log = [&err](const std::string& line) { err << line << '\n' << std::flush; };
  try {
    if (*report) {
      const std::filesystem::path dir = flags.out.empty() ? std::filesystem::path(".") : std::filesystem::path(flags.out);
      const ResultsTable table = ResultsTable::from_csv(read_file(dir / "results.csv"));
      const std::string summary = summarize_results(table);
      std::ofstream file(dir / "summary.md");
      if (!file) throw std::runtime_error("cannot write " + (dir / "summary.md").string());
      file << summary;
      out << summary;
      return 0;
    }

    const ExperimentConfig config = resolve(flags);
    if (*generate) {
      const ViewDataset ds = default_split(build_dataset(config.scene), config.seed);
      write_transforms_dataset(ds, config.out);
      std::ofstream echo(config.out / "config.json");
      echo << experiment_config_to_json(config);
      out << "wrote " << ds.views.size() << " views to " << config.out.string() << '\n';
    } else if (*train) {
      const Method method = method_name.empty() ? config.methods.front() : parse_method(method_name);
      if (config.representation == Representation::kCloud &&
          (method == Method::kMcDropout || method == Method::kLaplace)) {
        throw ConfigError(to_string(method) + " requires representation 'field'");
      }
      const ViewDataset ds = default_split(build_dataset(config.scene), config.seed);
      log("train " + to_string(method) + " on " + std::to_string(ds.indices(SplitTag::kTrain).size()) +
          " views");
      const TrainedMethod model = train_method(ds, config, method);
      save_model(model, config.out);
      std::ofstream echo(config.out / "config.json");
      echo << experiment_config_to_json(config);
      out << "saved " << to_string(method) << " model to " << config.out.string() << '\n';
    } else if (*render) {
      const TrainedMethod model = load_model(model_dir);
      ExperimentConfig c = config;
      c.eval.image_views = std::numeric_limits<int>::max();
      ProtocolResult result = evaluate_model(model, c);
      result.table.rows.clear();
      emit_report(result, c.out, &c);
      out << "wrote " << result.artifacts.size() << " images to " << c.out.string() << '\n';
    } else if (*eval) {
      const TrainedMethod model = load_model(model_dir);
      const ProtocolResult result = evaluate_model(model, config);
      emit_report(result, config.out, &config);
      out << result.table.to_csv();
    } else if (*experiment) {
      const ProtocolResult result = run_protocol(parse_protocol(protocol_name), config, log);
      emit_report(result, config.out, &config);
      out << result.table.to_csv();
    }
    return 0;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace uqr
