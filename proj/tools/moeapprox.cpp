// Command-line front end: one subcommand per experiment kind plus `show`.
// Exit codes: 0 all checks passed, 1 a check failed, 2 usage or config error.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moeapprox/errors.hpp"
#include "moeapprox/harness.hpp"
#include "moeapprox/version.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Overrides {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t grid = 0;
  std::string widths;
};

std::vector<std::size_t> parse_widths(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw moeapprox::ConfigError("--widths: '" + item + "' is not an integer");
    }
    if (used != item.size()) throw moeapprox::ConfigError("--widths: '" + item + "' is not an integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw moeapprox::ConfigError("--widths is empty");
  return out;
}

int run(moeapprox::ExperimentKind kind, const Overrides& o, const CLI::App& sub) {
  using namespace moeapprox;
  ExperimentConfig config;
  if (!o.config.empty()) {
    config = load_config(o.config);
    if (config.kind != kind)
      throw ConfigError("config kind '" + to_string(config.kind) + "' does not match subcommand '" +
                        to_string(kind) + "'");
  }
  config.kind = kind;
  if (sub.count("--out")) config.out = o.out;
  if (sub.count("--seed")) config.seed = o.seed;
  if (sub.count("--grid")) config.grid = o.grid;
  if (sub.count("--widths")) config.widths = parse_widths(o.widths);
  config.validate();

  const RunResult r = run_experiment(config);
  for (const auto& c : r.checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  std::cout << "index: " << r.index_path.string() << "\n";
  return r.passed() ? kExitPass : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explicit MoE approximation constructions and audits"};
  app.set_version_flag("--version", std::string(moeapprox::kVersion));
  app.require_subcommand(1);

  Overrides o;
  struct Verb {
    const char* name;
    const char* help;
    moeapprox::ExperimentKind kind;
  };
  const Verb verbs[] = {
      {"construct", "build a network for a target and audit it", moeapprox::ExperimentKind::construct},
      {"audit", "routing and error audits, serial cross-check", moeapprox::ExperimentKind::audit},
      {"rate", "error-vs-width sweep and log-log slope", moeapprox::ExperimentKind::rate_sweep},
      {"compare", "MoE vs dense baseline at matched active parameters",
       moeapprox::ExperimentKind::compare},
      {"gadgets", "indicator gadget exactness audit", moeapprox::ExperimentKind::verify_gadgets},
  };
  std::vector<std::pair<CLI::App*, moeapprox::ExperimentKind>> subs;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("--config", o.config, "TOML or JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "RNG seed");
    sub->add_option("--grid", o.grid, "grid points per dimension");
    sub->add_option("--widths", o.widths, "comma-separated widths, strictly increasing");
    subs.emplace_back(sub, v.kind);
  }
  std::string network;
  CLI::App* show = app.add_subcommand("show", "pretty-print a saved network");
  show->add_option("network", network, "network JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  try {
    if (*show) {
      std::cout << moeapprox::describe_network(moeapprox::load_network(network));
      return kExitPass;
    }
    for (const auto& [sub, kind] : subs)
      if (*sub) return run(kind, o, *sub);
  } catch (const moeapprox::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const moeapprox::ValidationError& e) {
    std::cerr << "invalid target: " << e.what() << "\n";
    return kExitUsage;
  } catch (const moeapprox::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitUsage;
}
