// Command-line front end: data generation, bank training and evaluation,
// experiment runs and plots.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "atradiff/harness.hpp"
#include "atradiff/serialize.hpp"

using namespace atradiff;
namespace fs = std::filesystem;

namespace {

int fail(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

std::unique_ptr<Environment> env_with_goal(const std::string& name, const std::vector<double>& goal) {
  if (goal.empty()) return make_environment(name);
  if (name != "point_goal") throw ConfigError("--goal applies to point_goal only");
  if (goal.size() != 2) throw ConfigError("--goal takes two numbers");
  PointGoalConfig pc;
  pc.goals = {Eigen::Vector2d(goal[0], goal[1])};
  return std::make_unique<PointGoal>(pc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-diffusion replay augmentation for online RL"};
  app.require_subcommand(1);

  struct {
    std::string env = "point_goal", policy = "expert", out;
    std::vector<double> goal;
    int episodes = 200;
    std::uint64_t seed = 0;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Collect offline trajectories as JSONL");
  gen_cmd->add_option("--env", gen.env, "point_goal or chain")->capture_default_str();
  gen_cmd->add_option("--policy", gen.policy, "random, noisy_expert or expert")->capture_default_str();
  gen_cmd->add_option("--episodes", gen.episodes)->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--goal", gen.goal, "PointGoal goal x y")->expected(2);
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();

  struct {
    std::string dataset, env = "point_goal", out, config;
    std::vector<int> lengths;
    std::uint64_t seed = 0;
    int train_steps = -1, threads = 1;
  } train;
  auto* train_cmd = app.add_subcommand("train-diffuser", "Pretrain a multi-length diffuser bank");
  train_cmd->add_option("--dataset", train.dataset)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--env", train.env)->capture_default_str();
  train_cmd->add_option("--lengths", train.lengths, "preset window lengths")->delimiter(',');
  train_cmd->add_option("--config", train.config, "run config whose bank section is used")->check(CLI::ExistingFile);
  train_cmd->add_option("--train-steps", train.train_steps, "override per-model training steps");
  train_cmd->add_option("--threads", train.threads)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--out", train.out)->required();

  struct {
    std::string bank, env = "point_goal", dump;
    std::vector<double> goal;
    int samples = 500;
    std::uint64_t seed = 0;
  } evalc;
  auto* eval_cmd = app.add_subcommand("eval-diffuser", "Report generation-quality statistics as JSON");
  eval_cmd->add_option("--bank", evalc.bank)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--env", evalc.env)->capture_default_str();
  eval_cmd->add_option("--goal", evalc.goal)->expected(2);
  eval_cmd->add_option("--samples", evalc.samples)->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", evalc.seed)->capture_default_str();
  eval_cmd->add_option("--dump", evalc.dump, "write generated trajectories as JSONL");

  struct {
    std::string config, output_dir;
    int jobs = 0;
  } run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a JSON config");
  run_cmd->add_option("config", run.config)->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--output-dir", run.output_dir, "overrides output_dir");
  run_cmd->add_option("--jobs", run.jobs, "overrides jobs");

  struct {
    std::vector<std::string> csv, names;
    std::string out, metric = "success", title;
  } plot;
  auto* plot_cmd = app.add_subcommand("plot", "Learning curves from aggregate CSVs as SVG");
  plot_cmd->add_option("--csv", plot.csv, "aggregate CSV, repeat to overlay runs")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--name", plot.names, "legend name per CSV");
  plot_cmd->add_option("--metric", plot.metric)->capture_default_str()->check(CLI::IsMember({"success", "return"}));
  plot_cmd->add_option("--title", plot.title);
  plot_cmd->add_option("--out", plot.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen_cmd) {
      auto env = env_with_goal(gen.env, gen.goal);
      Rng rng(gen.seed);
      const auto data = collect_offline(*env, BehaviorPolicy{parse_policy_tier(gen.policy)}, gen.episodes, rng);
      write_dataset(gen.out, data);
      std::size_t steps = 0, reached = 0;
      for (const auto& t : data) {
        steps += static_cast<std::size_t>(t.length());
        reached += !t.dones.empty() && t.dones.back();
      }
      nlohmann::ordered_json j{{"out", gen.out}, {"episodes", data.size()}, {"transitions", steps}, {"successes", reached}};
      std::cout << j.dump() << '\n';
    } else if (*train_cmd) {
      BankConfig bc;
      if (!train.config.empty()) bc = load_run_config(train.config).bank;
      if (!train.lengths.empty()) bc.presets = train.lengths;
      if (train.train_steps >= 0) bc.diffusion.train_steps = train.train_steps;
      bc.threads = train.threads;
      const auto data = read_dataset(train.dataset);
      auto env = make_environment(train.env);
      Rng rng(train.seed);
      BankTrainingReport report;
      const DiffuserBank bank = train_bank(data, env->spec(), bc, rng, &report);
      write_file(train.out, bank.serialize());
      nlohmann::ordered_json j{{"out", train.out}, {"presets", bank.presets()}};
      nlohmann::ordered_json finals = nlohmann::ordered_json::array();
      for (const auto& l : report.model_losses) finals.push_back(l.empty() ? 0.0 : l.back());
      j["final_model_losses"] = finals;
      j["final_estimator_loss"] = report.estimator_losses.empty() ? 0.0 : report.estimator_losses.back();
      std::cout << j.dump() << '\n';
    } else if (*eval_cmd) {
      const DiffuserBank bank = DiffuserBank::deserialize(read_file(evalc.bank));
      auto env = env_with_goal(evalc.env, evalc.goal);
      Rng rng(evalc.seed);
      std::vector<GeneratedTrajectory> generated;
      const auto report = evaluate_generation(bank, *env, evalc.samples, rng, evalc.dump.empty() ? nullptr : &generated);
      if (!evalc.dump.empty()) {
        std::ofstream out(evalc.dump, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + evalc.dump);
        for (const auto& g : generated) {
          auto j = nlohmann::ordered_json::parse(trajectory_to_json_line(g.trajectory));
          j["window_length"] = g.window_length;
          j["pruned"] = g.pruned;
          j["from_original"] = g.from_original;
          out << j.dump() << '\n';
        }
      }
      std::cout << report.to_json().dump(2) << '\n';
    } else if (*run_cmd) {
      RunConfig c = load_run_config(run.config);
      if (!run.output_dir.empty()) c.output_dir = run.output_dir;
      if (run.jobs > 0) c.jobs = run.jobs;
      c.validate();
      const ExperimentResult r = run_experiment(c);
      std::size_t failed = 0;
      for (const auto& s : r.seeds) failed += !s.ok;
      nlohmann::ordered_json j{{"name", c.name},
                               {"seeds", r.seeds.size()},
                               {"failed_seeds", failed},
                               {"median_success_auc", median_success_auc(r.aggregate)},
                               {"output_dir", c.output_dir}};
      std::cout << j.dump() << '\n';
      if (failed) return fail("seed_failure", std::to_string(failed) + " seed(s) failed; see summary.json");
    } else if (*plot_cmd) {
      if (!plot.names.empty() && plot.names.size() != plot.csv.size())
        throw ConfigError("--name must be given once per --csv");
      std::vector<PlotSeries> series;
      for (std::size_t i = 0; i < plot.csv.size(); ++i)
        series.push_back({plot.names.empty() ? fs::path(plot.csv[i]).parent_path().filename().string() : plot.names[i],
                          read_aggregate_csv(plot.csv[i])});
      write_plot_svg(plot.out, series, plot.metric == "success" ? PlotMetric::kSuccess : PlotMetric::kReturn, plot.title);
      std::cout << nlohmann::ordered_json{{"out", plot.out}}.dump() << '\n';
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
