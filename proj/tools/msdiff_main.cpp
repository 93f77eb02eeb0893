//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. One binary, one subcommand per pipeline stage,
// plus standalone fingerprint and edit-distance tools.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// divergence.
//

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msdiff/chem/smiles.hpp"
#include "msdiff/cli/pipeline.hpp"
#include "msdiff/mces/mces.hpp"

namespace {

using namespace msdiff;

constexpr const char *kUsage = R"(usage: msdiff <command> [--config PATH] [--seed N] [--workers N] [--out DIR] [args]

pipeline commands (need --config and --out):
  build-dataset     corpus minus exclusion set -> fingerprint/SMILES pairs
  pretrain-decoder  train the diffusion decoder on fingerprint conditioning
  pretrain-encoder  train the spectrum encoder against target fingerprints
  finetune          joint training of encoder and decoder on spectra
  sample            draw molecules per spectrum or per reference molecule
  evaluate          score a samples file against ground-truth structures

standalone tools:
  fingerprint S [S2]  print the fingerprint of SMILES S; with S2, their
                      Tanimoto similarity instead
  mces S1 S2          print the exact edit distance between two molecules

flags:
  --config PATH   run configuration (key = value lines)
  --seed N        override train.seed from the config
  --workers N     parallel workers for sample (default 1)
  --out DIR       output directory for pipeline commands
)";

struct CliArgs {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::string> seed;
  std::optional<std::string> out_dir;
  int workers = 1;
  std::vector<std::string> positional;
};

CliArgs parse_args(int argc, char **argv) {
  CliArgs args;
  auto next_value = [&](int &i, const std::string &flag) -> std::string {
    if (i + 1 >= argc)
      throw ConfigError("flag " + flag + " needs a value");
    return argv[++i];
  };
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config") {
      args.config_path = next_value(i, a);
    } else if (a == "--seed") {
      args.seed = next_value(i, a);
    } else if (a == "--out") {
      args.out_dir = next_value(i, a);
    } else if (a == "--workers") {
      try {
        args.workers = std::stoi(next_value(i, a));
      } catch (const std::exception &) {
        throw ConfigError("--workers: expected an integer");
      }
    } else if (a == "--help" || a == "-h") {
      args.command = "help";
      return args;
    } else if (!a.empty() && a[0] == '-') {
      throw ConfigError("unknown flag '" + a + "'");
    } else if (args.command.empty()) {
      args.command = a;
    } else {
      args.positional.push_back(a);
    }
  }
  return args;
}

RunConfig load_config(const CliArgs &args) {
  if (!args.config_path)
    throw ConfigError("command '" + args.command + "' needs --config");
  RunConfig cfg = RunConfig::load(*args.config_path);
  if (args.seed) cfg.set("train.seed", *args.seed);
  return cfg;
}

std::string out_dir(const CliArgs &args) {
  if (!args.out_dir)
    throw ConfigError("command '" + args.command + "' needs --out");
  return *args.out_dir;
}

int run_fingerprint_tool(const CliArgs &args) {
  int width = 2048, radius = 2;
  if (args.config_path) {
    RunConfig cfg = RunConfig::load(*args.config_path);
    width = cfg.fingerprint_width();
    radius = cfg.fingerprint_radius();
  }
  if (args.positional.size() == 1) {
    Fingerprint fp =
        morgan_fingerprint(parse_smiles(args.positional[0]), width, radius);
    std::cout << fp.to_hex() << "\n";
    return 0;
  }
  if (args.positional.size() == 2) {
    Fingerprint a =
        morgan_fingerprint(parse_smiles(args.positional[0]), width, radius);
    Fingerprint b =
        morgan_fingerprint(parse_smiles(args.positional[1]), width, radius);
    std::cout.precision(17);
    std::cout << tanimoto(a, b) << "\n";
    return 0;
  }
  throw ConfigError("fingerprint takes one or two SMILES arguments");
}

int run_mces_tool(const CliArgs &args) {
  if (args.positional.size() != 2)
    throw ConfigError("mces takes exactly two SMILES arguments");
  McesResult r = mces_distance(parse_smiles(args.positional[0]),
                               parse_smiles(args.positional[1]));
  std::cout.precision(17);
  std::cout << r.distance << "\n";
  return 0;
}

int dispatch(const CliArgs &args) {
  if (args.command.empty() || args.command == "help") {
    std::fputs(kUsage, args.command.empty() ? stderr : stdout);
    return args.command.empty() ? 2 : 0;
  }
  if (args.command == "build-dataset") {
    run_build_dataset(load_config(args), out_dir(args));
    return 0;
  }
  if (args.command == "pretrain-decoder") {
    run_pretrain_decoder(load_config(args), out_dir(args));
    return 0;
  }
  if (args.command == "pretrain-encoder") {
    run_pretrain_encoder(load_config(args), out_dir(args));
    return 0;
  }
  if (args.command == "finetune") {
    run_finetune(load_config(args), out_dir(args));
    return 0;
  }
  if (args.command == "sample") {
    run_sample(load_config(args), out_dir(args), args.workers);
    return 0;
  }
  if (args.command == "evaluate") {
    MetricsReport report = run_evaluate(load_config(args), out_dir(args));
    std::cout.precision(6);
    std::cout << "spectra " << report.spectra << ", top-1 accuracy "
              << report.top1_accuracy << ", top-10 accuracy "
              << report.top10_accuracy << ", validity " << report.validity
              << "\n";
    return 0;
  }
  if (args.command == "fingerprint") return run_fingerprint_tool(args);
  if (args.command == "mces") return run_mces_tool(args);
  throw ConfigError("unknown command '" + args.command + "'");
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return dispatch(parse_args(argc, argv));
  } catch (const msdiff::ConfigError &e) {
    std::fprintf(stderr, "msdiff: config error: %s\n", e.what());
    return 2;
  } catch (const msdiff::NonFiniteError &e) {
    std::fprintf(stderr, "msdiff: numerical divergence: %s\n", e.what());
    return 4;
  } catch (const msdiff::DegeneratePosteriorError &e) {
    std::fprintf(stderr, "msdiff: numerical divergence: %s\n", e.what());
    return 4;
  } catch (const msdiff::Error &e) {
    std::fprintf(stderr, "msdiff: data error: %s\n", e.what());
    return 3;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "msdiff: error: %s\n", e.what());
    return 3;
  }
}
