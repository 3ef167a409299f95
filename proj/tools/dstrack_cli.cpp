// Command-line front end: run, validate, sweep and example1.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dstrack/io.hpp"

namespace fs = std::filesystem;
using namespace dstrack;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct Common
{
  std::string scenario;
  std::string out;
  std::vector<std::string> overrides;
  bool force = false;
  std::optional<std::uint64_t> seed;
  int verbosity = 1;
};

void log(const Common & c, int level, const std::string & msg)
{
  if (c.verbosity >= level) { std::cerr << msg << '\n'; }
}

/// Seed override: reseeds the population generator and the noise, whichever are present.
void apply_seed(io::json & doc, const Common & c)
{
  if (!c.seed) { return; }
  bool used = false;
  if (doc.contains("population") && doc["population"].contains("generator")) {
    doc["population"]["generator"]["seed"] = *c.seed;
    used = true;
  }
  if (doc.contains("noise")) {
    doc["noise"]["seed"] = *c.seed;
    used = true;
  }
  if (!used) { log(c, 1, "note: --seed has no effect (no generator or noise in scenario)"); }
}

ScenarioConfig load(const Common & c, const std::vector<std::string> & extra = {})
{
  io::json doc = io::load_document(c.scenario);
  apply_seed(doc, c);
  for (const auto & o : c.overrides) { io::apply_override(doc, o); }
  for (const auto & o : extra) { io::apply_override(doc, o); }
  return io::parse_scenario(doc);
}

void summarize(const Common & c, const std::string & label, const ScenarioConfig & cfg, const TrajectoryLog & log_)
{
  const auto m = metrics(log_, cfg);
  std::ostringstream os;
  os << label << ": final tracking error " << io::fmt(m.final_tracking_error) << ", max constraint violation "
     << io::fmt(m.max_constraint_violation) << ", total cost " << io::fmt(m.total_cost);
  log(c, 1, os.str());
}

int cmd_validate(const Common & c)
{
  const auto cfg = load(c);
  std::cout << "ok: " << cfg.name << " (" << cfg.population.size() << " agents, horizon " << cfg.model.horizon()
            << ", " << to_string(cfg.controller.kind) << ")\n";
  return kOk;
}

int cmd_run(const Common & c)
{
  const auto cfg = load(c);
  const auto result = run(cfg);
  const auto files = io::write_run(c.out, cfg, result, c.force);
  summarize(c, cfg.name, cfg, result);
  for (const auto & f : files) { log(c, 2, "wrote " + f.string()); }
  return kOk;
}

int cmd_sweep(const Common & c, const std::string & key, const std::vector<std::string> & values)
{
  // validate every point before running any of them
  std::vector<ScenarioConfig> configs;
  for (const auto & v : values) { configs.push_back(load(c, {key + "=" + v})); }
  const fs::path root(c.out);
  const fs::path summary = root / "sweep.csv";
  if (!c.force && fs::exists(summary)) { throw io::OutputExistsError(summary.string() + " exists (use --force to overwrite)"); }
  std::ostringstream table;
  table << "index,value,final_tracking_error,max_constraint_violation,total_cost\n";
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const auto result = run(configs[k]);
    io::write_run(root / ("point_" + std::to_string(k)), configs[k], result, c.force);
    const auto m = metrics(result, configs[k]);
    table << k << ',' << values[k] << ',' << io::fmt(m.final_tracking_error) << ','
          << io::fmt(m.max_constraint_violation) << ',' << io::fmt(m.total_cost) << '\n';
    summarize(c, key + "=" + values[k], configs[k], result);
  }
  io::write_text(summary, table.str());
  return kOk;
}

int cmd_example1(const Common & c)
{
  Example1Parameters p;
  if (c.seed) { p.seed = *c.seed; }
  for (auto v : {Example1Variant::Unconstrained, Example1Variant::Constrained, Example1Variant::Attacked}) {
    io::json doc = io::resolved_json(example1_config(v, p));
    for (const auto & o : c.overrides) { io::apply_override(doc, o); }
    const auto cfg = io::parse_scenario(doc);
    const auto result = run(cfg);
    io::write_run(fs::path(c.out) / to_string(v), cfg, result, c.force);
    summarize(c, cfg.name, cfg, result);
  }
  return kOk;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Swarm tracking simulator: team LQR and distributed receding-horizon control"};
  app.require_subcommand(1);
  Common c;

  const auto add_common = [&c](CLI::App * sub, bool scenario, bool output) {
    if (scenario) { sub->add_option("--scenario", c.scenario, "Scenario file (JSON)")->required()->check(CLI::ExistingFile); }
    if (output) {
      sub->add_option("--out", c.out, "Output directory")->required();
      sub->add_flag("--force", c.force, "Overwrite existing output files");
    }
    sub->add_option("--set", c.overrides, "Override a field, e.g. --set controller.lambda=0.25")->allow_extra_args(false);
    sub->add_option("--seed", c.seed, "Seed for the population generator and noise");
    sub->add_flag("-v,--verbose", [&c](std::int64_t n) { c.verbosity = 1 + static_cast<int>(n); }, "More output");
    sub->add_flag("-q,--quiet", [&c](std::int64_t) { c.verbosity = 0; }, "Only report errors");
  };

  auto * run_cmd = app.add_subcommand("run", "Simulate one scenario and write trajectory.csv, metrics.json, config.resolved.json");
  add_common(run_cmd, true, true);
  auto * validate_cmd = app.add_subcommand("validate", "Check a scenario without writing anything");
  add_common(validate_cmd, true, false);
  auto * sweep_cmd = app.add_subcommand("sweep", "Run a scenario for several values of one field");
  add_common(sweep_cmd, true, true);
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  sweep_cmd->add_option("--param", sweep_key, "Dotted field path to vary")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")->required()->delimiter(',');
  auto * ex1_cmd = app.add_subcommand("example1", "Run the three built-in 100-robot scenarios");
  add_common(ex1_cmd, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*run_cmd) { return cmd_run(c); }
    if (*validate_cmd) { return cmd_validate(c); }
    if (*sweep_cmd) { return cmd_sweep(c, sweep_key, sweep_values); }
    if (*ex1_cmd) { return cmd_example1(c); }
  } catch (const io::ConfigError & e) {
    std::cerr << "invalid scenario:\n";
    for (const auto & d : e.diagnostics()) { std::cerr << "  " << d.str() << '\n'; }
    return kValidation;
  } catch (const InputError & e) {
    std::cerr << "invalid scenario: " << e.what() << '\n';
    return kValidation;
  } catch (const InfeasibleError & e) {
    std::cerr << "run failed at t=" << e.step() << ": " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
