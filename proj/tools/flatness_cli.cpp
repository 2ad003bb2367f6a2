// flatness: train networks, measure rescaling-invariant sharpness and run the
// invariance, large/small-batch and line-plot protocols.
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flatness/checkpoint.hpp"
#include "flatness/experiments.hpp"

using namespace flatness;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

// Reads a plain JSON object as CLI11 config for the selected subcommand.
// Keys are long option names without dashes; arrays become repeated values,
// nested arrays are joined with commas so "lambda": [[5, 4, 0.05]] works like
// --lambda 5,4,0.05.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    for (const CLI::App* sub : root_->get_subcommands()) parents.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar_text(v));
      } else {
        item.inputs.push_back(scalar_text(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;

  static std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + scalar_text(v[i]);
      return s;
    }
    return v.dump();
  }
};

double parse_number(const std::string& text) {
  std::size_t used = 0;
  double value = 0.0;
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) {
      value = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } else {
      value = parse_number(text.substr(0, slash)) / parse_number(text.substr(slash + 1));
    }
  } catch (const std::logic_error&) {
    throw ValidationError("not a number: '" + text + "'");
  }
  return value;
}

/// "5,4,1/20" -> {5, 4, 0.05}
std::vector<double> parse_lambda(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_number(part));
  if (out.empty()) throw ValidationError("empty lambda list");
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

struct DataOptions {
  std::string dataset = "mnist";
  std::string data_dir = FLATNESS_DEFAULT_DATA_DIR;
  Index subset = 5000;
  std::uint64_t data_seed = 0;

  void bind(CLI::App* cmd, Index default_subset) {
    subset = default_subset;
    cmd->add_option("--dataset", dataset, "mnist or synthetic")->check(CLI::IsMember({"mnist", "synthetic"}));
    cmd->add_option("--data-dir", data_dir, "directory holding the MNIST IDX files");
    cmd->add_option("--subset", subset, "number of training samples used")->check(CLI::PositiveNumber);
    cmd->add_option("--data-seed", data_seed, "seed of the synthetic dataset");
  }

  Dataset load(const NetworkSpec& spec) const {
    if (dataset == "synthetic") {
      return gen_synthetic(subset, spec.input.height * spec.input.width * spec.input.channels, spec.classes,
                           data_seed);
    }
    const std::filesystem::path dir(data_dir);
    return load_mnist_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string(),
                          subset);
  }
};

struct PowerOptions {
  PowerConfig cfg;

  void bind(CLI::App* cmd) {
    cmd->add_option("--tol", cfg.tol, "power method tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--max-iter", cfg.max_iter, "power method iteration cap")->check(CLI::PositiveNumber);
    cmd->add_option("--power-seed", cfg.seed, "seed of the power method start vector");
    cmd->add_flag("--project-horizontal", cfg.project_horizontal, "project iterates onto the horizontal space");
  }
};

// ---- train ----------------------------------------------------------------

struct TrainCmd {
  std::string arch = "mnist-fc-small";
  bool no_bias = false;
  DataOptions data;
  TrainConfig train;
  std::string optimizer = "adam";
  std::optional<double> target_loss;
  std::string out;

  void bind(CLI::App* cmd) {
    cmd->add_option("--arch", arch, "F1, C1, mnist-fc, mnist-fc-small or lenet");
    cmd->add_flag("--no-bias", no_bias, "build the network without biases");
    data.bind(cmd, 5000);
    cmd->add_option("--batch", train.batch_size, "minibatch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", train.learning_rate, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", train.max_epochs, "maximum number of epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", train.seed, "initialization and shuffling seed");
    cmd->add_option("--optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
    cmd->add_option("--target-accuracy", train.target_train_accuracy, "stop at this training accuracy");
    cmd->add_option("--target-loss", target_loss, "also require this training loss before stopping");
    cmd->add_option("--out", out, "checkpoint header path (x.json; payload goes to x.bin)")->required();
  }

  json run() {
    const NetworkSpec spec = preset(arch, !no_bias);
    const NetworkGraph graph = build(spec);
    const Dataset d = data.load(spec);
    train.optimizer = optimizer_from_string(optimizer);
    train.target_loss = target_loss;
    const TrainResult r = flatness::train(graph, init(spec, train.seed), d, train);
    checkpoint_save(out, r.point, spec, train.seed);
    json history = json::array();
    for (const auto& e : r.history) history.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
    return {{"config",
             {{"arch", arch},
              {"with_bias", !no_bias},
              {"dataset", data.dataset},
              {"subset", data.subset},
              {"data_seed", data.data_seed},
              {"optimizer", optimizer},
              {"batch", train.batch_size},
              {"lr", train.learning_rate},
              {"epochs", train.max_epochs},
              {"seed", train.seed},
              {"target_accuracy", train.target_train_accuracy},
              {"target_loss", target_loss ? json(*target_loss) : json(nullptr)}}},
            {"checkpoint", out},
            {"reached_target", r.reached_target},
            {"history", history}};
  }
};

// ---- measure --------------------------------------------------------------

struct MeasureCmd {
  std::string checkpoint;
  DataOptions data;
  PowerOptions power;
  std::string mode = "default";
  double epsilon = 1e-3;
  bool no_euclidean = false;
  bool verify_projection = false;
  std::string out;

  void bind(CLI::App* cmd) {
    cmd->add_option("checkpoint", checkpoint, "checkpoint header written by 'train'")->required();
    data.bind(cmd, 5000);
    power.bind(cmd);
    cmd->add_option("--mode", mode, "default, weights, weights-biases or nodewise");
    cmd->add_option("--epsilon", epsilon, "epsilon of the epsilon-sharpness")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-euclidean", no_euclidean, "skip the Euclidean baseline");
    cmd->add_flag("--verify-projection", verify_projection, "also run with horizontal projection and compare");
    cmd->add_option("--out", out, "JSON output path (stdout when omitted)");
  }

  json run() {
    const Checkpoint ck = checkpoint_load(checkpoint);
    const NetworkGraph graph = build(ck.spec);
    const Dataset d = data.load(ck.spec);
    MeasureConfig cfg;
    if (mode != "default") cfg.mode = metric_mode_from_string(mode);
    cfg.power = power.cfg;
    cfg.epsilon = epsilon;
    cfg.euclidean = !no_euclidean;
    cfg.verify_projection = verify_projection;
    const MeasureReport rep = run_measure(graph, ck.point, d, cfg);
    json j = rep.to_json();
    j["config"] = {{"checkpoint", checkpoint},
                   {"dataset", data.dataset},
                   {"subset", data.subset},
                   {"data_seed", data.data_seed},
                   {"mode", mode},
                   {"tol", cfg.power.tol},
                   {"max_iter", cfg.power.max_iter},
                   {"power_seed", cfg.power.seed},
                   {"project_horizontal", cfg.power.project_horizontal}};
    return j;
  }
};

// ---- invariance -----------------------------------------------------------

struct InvarianceCmd {
  InvarianceConfig cfg;
  PowerOptions power;
  bool no_bias = false;
  std::vector<std::string> lambdas;
  std::optional<double> target_loss = InvarianceConfig::default_train().target_loss;
  std::string out;
  std::string csv;

  void bind(CLI::App* cmd) {
    cmd->add_option("--arch", cfg.arch, "F1 or C1")->check(CLI::IsMember({"F1", "C1"}));
    cmd->add_flag("--no-bias", no_bias, "use bias-free networks");
    cmd->add_option("--lambda", lambdas, "rescaling, e.g. 5,4,1/20 (repeatable)")->required();
    cmd->add_option("--seed", cfg.seed, "data, initialization and shuffling seed");
    cmd->add_option("--subset", cfg.samples, "number of synthetic samples")->check(CLI::PositiveNumber);
    cmd->add_option("--batch", cfg.train.batch_size, "minibatch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", cfg.train.learning_rate, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", cfg.train.max_epochs, "maximum number of epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--target-loss", target_loss, "training loss that counts as a minimum");
    power.bind(cmd);
    cmd->add_option("--out", out, "JSON output path (stdout when omitted)");
    cmd->add_option("--csv", csv, "CSV output path");
  }

  json run() {
    cfg.with_bias = !no_bias;
    cfg.power = power.cfg;
    cfg.train.target_loss = target_loss;
    for (const auto& l : lambdas) cfg.lambdas.push_back(parse_lambda(l));
    const InvarianceReport rep = run_invariance(cfg);
    if (!csv.empty()) emit(rep.to_csv(), csv);
    return rep.to_json();
  }
};

// ---- lbsb -----------------------------------------------------------------

struct LbsbCmd {
  LbsbConfig cfg;
  PowerOptions power;
  bool no_bias = false;
  bool no_euclidean = false;
  std::string optimizer = "adam";
  std::string out;
  std::string csv;

  void bind(CLI::App* cmd) {
    cfg.data_dir = FLATNESS_DEFAULT_DATA_DIR;
    cmd->add_option("--dataset", cfg.dataset, "mnist or synthetic")->check(CLI::IsMember({"mnist", "synthetic"}));
    cmd->add_option("--data-dir", cfg.data_dir, "directory holding the MNIST IDX files");
    cmd->add_option("--arch", cfg.arch, "network preset");
    cmd->add_flag("--no-bias", no_bias, "use bias-free networks");
    cmd->add_option("--subset", cfg.subset, "training samples")->check(CLI::PositiveNumber);
    cmd->add_option("--test-subset", cfg.test_subset, "test samples")->check(CLI::PositiveNumber);
    cmd->add_option("--measure-samples", cfg.measure_samples, "training samples used for the spectral measurement")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--sb-batch", cfg.sb_batch, "small batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lb-batch", cfg.lb_batch, "large batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--sb-lr", cfg.sb_lr, "small batch learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--lb-lr", cfg.lb_lr, "large batch learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--optimizer", optimizer, "sgd or adam")->check(CLI::IsMember({"sgd", "adam"}));
    cmd->add_option("--epochs", cfg.max_epochs, "maximum number of epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--target-accuracy", cfg.target_train_accuracy, "stop at this training accuracy");
    cmd->add_option("--seeds", cfg.seeds, "one run pair per seed")->delimiter(',');
    cmd->add_option("--checkpoint-dir", cfg.checkpoint_dir, "write trained checkpoints here");
    cmd->add_flag("--no-euclidean", no_euclidean, "skip the Euclidean baseline");
    power.bind(cmd);
    cmd->add_option("--out", out, "JSON output path (stdout when omitted)");
    cmd->add_option("--csv", csv, "CSV output path");
  }

  json run() {
    cfg.with_bias = !no_bias;
    cfg.euclidean = !no_euclidean;
    cfg.optimizer = optimizer_from_string(optimizer);
    cfg.power = power.cfg;
    if (cfg.seeds.empty()) throw ValidationError("at least one seed is required");
    const LbsbReport rep = run_lbsb(cfg);
    if (!csv.empty()) emit(rep.to_csv(), csv);
    return rep.to_json();
  }
};

// ---- lineplot -------------------------------------------------------------

struct LineplotCmd {
  std::string checkpoint_a;
  std::string checkpoint_b;
  DataOptions data;
  LineplotConfig cfg;
  std::string out;

  void bind(CLI::App* cmd) {
    cmd->add_option("checkpoint_a", checkpoint_a, "first checkpoint (loss_a)")->required();
    cmd->add_option("checkpoint_b", checkpoint_b, "second checkpoint (loss_b)")->required();
    data.bind(cmd, 5000);
    cmd->add_option("--directions", cfg.directions, "number of random directions")->check(CLI::PositiveNumber);
    cmd->add_option("--samples", cfg.samples, "points per direction on [-1, 1]")->check(CLI::Range(2, 100000));
    cmd->add_option("--seed", cfg.seed, "direction seed");
    cmd->add_option("--out", out, "CSV output path (stdout when omitted)");
  }

  void run() {
    const Checkpoint a = checkpoint_load(checkpoint_a);
    const Checkpoint b = checkpoint_load(checkpoint_b);
    if (spec_to_json(a.spec) != spec_to_json(b.spec)) {
      throw ValidationError("checkpoints do not share an architecture");
    }
    const NetworkGraph graph = build(a.spec);
    emit(lineplot_csv(run_lineplot(graph, a.point, b.point, data.load(a.spec), cfg)), out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rescaling-invariant sharpness of neural network minima"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  // Lets --config appear after the subcommand name.
  app.fallthrough();
  app.set_config("--config", "", "JSON file of option values for the subcommand; flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  auto add_command = [&](const char* name, const char* help) { return app.add_subcommand(name, help); };

  TrainCmd train_cmd;
  MeasureCmd measure_cmd;
  InvarianceCmd invariance_cmd;
  LbsbCmd lbsb_cmd;
  LineplotCmd lineplot_cmd;
  CLI::App* train_app = add_command("train", "train a network and write a checkpoint");
  CLI::App* measure_app = add_command("measure", "spectral norms and epsilon-sharpness of a checkpoint");
  CLI::App* invariance_app = add_command("invariance", "spectral norm under rescalings of a trained minimum");
  CLI::App* lbsb_app = add_command("lbsb", "large-batch vs small-batch comparison");
  CLI::App* lineplot_app = add_command("lineplot", "layer-normalized loss line plots of two checkpoints");
  train_cmd.bind(train_app);
  measure_cmd.bind(measure_app);
  invariance_cmd.bind(invariance_app);
  lbsb_cmd.bind(lbsb_app);
  lineplot_cmd.bind(lineplot_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (train_app->parsed()) {
      const json j = train_cmd.run();
      std::cout << j.dump(2) << '\n';
    } else if (measure_app->parsed()) {
      emit(measure_cmd.run().dump(2), measure_cmd.out);
    } else if (invariance_app->parsed()) {
      emit(invariance_cmd.run().dump(2), invariance_cmd.out);
    } else if (lbsb_app->parsed()) {
      emit(lbsb_cmd.run().dump(2), lbsb_cmd.out);
    } else if (lineplot_app->parsed()) {
      lineplot_cmd.run();
    }
  } catch (const DegenerateMetricError& e) {
    std::cerr << "error: degenerate metric at layer " << e.layer() << ": " << e.what() << '\n';
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return EXIT_SUCCESS;
}
