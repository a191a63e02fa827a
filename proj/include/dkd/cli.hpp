#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dkd {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitFormat = 4,
};

// Everything a command needs, gathered from flags and an optional JSON file
// of flat dotted keys ("train.epochs": 20). A flag given on the command line
// wins over the file.
struct RunConfig {
  std::string command;

  bool synth = false;
  std::string data_dir;
  std::size_t image_size = 32;
  std::size_t synth_classes = 3;
  std::size_t synth_size = 32;
  std::size_t synth_count = 300;
  double synth_noise = 0.1;
  std::uint64_t data_seed = 0;
  std::vector<double> split;  // empty: 2/3,1/6,1/6 for synthetic data, else 0.8,0.1,0.1
  std::string augment = "auto";

  std::optional<std::size_t> epochs;  // command default when unset
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::string precision = "f32";
  std::uint64_t seed = 0;

  std::string archetype = "residual";
  std::optional<std::size_t> teacher_width;
  std::optional<std::size_t> teacher_depth;
  std::string teacher_path;

  double alpha = 0.3;
  double temperature = 10.0;
  std::string variant = "kl";
  bool t_squared = false;

  std::size_t coarse = 8;
  std::size_t fine = 5;
  std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5};
  bool save_checkpoints = true;

  std::string checkpoint;
  std::string split_name = "test";
  std::string averaging = "macro";

  std::vector<std::string> inputs;
  std::size_t limit = 0;  // 0: every sample of the chosen split
  std::string layer = "final_conv";
  std::string target = "predicted";
  std::string cam_target = "logit";

  std::string out_dir;
  std::string config_path;
  bool quiet = false;
};

// Parses and runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace dkd
