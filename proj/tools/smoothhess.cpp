#include "smoothhess/estimator.hpp"
#include "smoothhess/eval.hpp"
#include "smoothhess/experiments.hpp"
#include "smoothhess/model_io.hpp"
#include "smoothhess/oracles.hpp"
#include "smoothhess/parallel.hpp"
#include "smoothhess/sampling.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace sh = smoothhess;
using nlohmann::json;

namespace {

// Exit code 2: bad flags or values caught after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("not a number: '" + s + "'");
  }
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s)) out.push_back(parse_double(item));
  if (out.empty()) throw UsageError("empty list");
  return out;
}

sh::Vector parse_point(const std::string& s) {
  const auto v = parse_list(s);
  return Eigen::Map<const sh::Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json read_json_arg(const std::string& arg) {
  const auto first = arg.find_first_not_of(" \t\n");
  if (first != std::string::npos && (arg[first] == '{' || arg[first] == '[')) {
    try {
      return json::parse(arg);
    } catch (const json::parse_error& e) {
      throw UsageError(std::string("invalid JSON: ") + e.what());
    }
  }
  std::ifstream in(arg);
  if (!in) throw sh::ParseError("cannot open '" + arg + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw sh::ParseError("'" + arg + "': " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sh::Error("cannot write '" + path + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw sh::Error("write failed for '" + path + "'");
}

void write_metadata(const std::string& out_path, const json& config) {
  write_text(out_path + ".meta.json", sh::run_metadata(config).dump(1) + "\n");
}

sh::EstimatorConfig estimator_config(std::size_t n, std::size_t batch, bool antithetic, std::uint64_t seed) {
  if (batch == 0 || n == 0 || n % batch != 0) throw UsageError("--n must be a positive multiple of --batch");
  sh::EstimatorConfig cfg{batch, n / batch, antithetic, seed};
  if (antithetic && batch % 2 != 0) throw UsageError("--antithetic needs an even --batch");
  return cfg;
}

sh::Dataset make_dataset(const std::string& name, double spacing, std::uint64_t seed) {
  if (name == "four-quadrant") return sh::gen_four_quadrant(spacing);
  if (name == "nested") return sh::gen_nested_interactions(spacing);
  return sh::gen_blobs(200, 3, 1.5, 0.5, seed);
}

const std::vector<std::string> kDatasets{"four-quadrant", "nested", "blobs"};

struct Common {
  std::string model;
  std::string point;
  std::string cov;
  std::uint64_t seed = 0;
  std::size_t n = 10000;
  std::size_t batch = 1000;
  bool antithetic = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_point) {
  cmd->add_option("--model", c.model, "Model JSON file")->required()->check(CLI::ExistingFile);
  auto* p = cmd->add_option("--point", c.point, "Input point as a comma-separated list");
  if (needs_point) p->required();
  cmd->add_option("--cov", c.cov, "Covariance JSON (inline or file)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--n", c.n, "Total estimator samples");
  cmd->add_option("--batch", c.batch, "Estimator batch size");
  cmd->add_flag("--antithetic", c.antithetic, "Use antithetic pairs");
  cmd->add_option("--out", c.out, "Output path")->required();
}

sh::CovarianceModel covariance_arg(const std::string& arg, std::size_t d) {
  if (arg.empty()) throw UsageError("--cov is required");
  return sh::covariance_from_json(read_json_arg(arg), d);
}

void print_summary(bool as_json, const json& j, const std::string& human) {
  if (as_json)
    std::cout << j.dump() << '\n';
  else
    std::cout << human;
}

int cmd_oracle_check(std::uint64_t seed, bool as_json) {
  const auto results = sh::run_oracle_suites(seed);
  bool all = true;
  json j = json::array();
  std::ostringstream text;
  for (const auto& r : results) {
    all = all && r.passed;
    text << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    j.push_back({{"suite", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  print_summary(as_json, j, text.str());
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SmoothHess interaction estimation and reproduction runs"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  bool as_json = false;
  app.add_option("--threads", threads, "Worker threads (default: SMOOTHHESS_THREADS or 1)");
  app.add_flag("--json", as_json, "Print the summary as JSON");

  // gen-data
  std::string dataset;
  double spacing = 0.1;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("--dataset", dataset, "four-quadrant | nested | blobs")->required()->check(CLI::IsMember(kDatasets));
  gen->add_option("--spacing", spacing, "Grid spacing in (0, 1]");
  gen->add_option("--seed", gen_seed, "Seed (blobs only)");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // train
  std::string train_dataset = "four-quadrant";
  double train_spacing = 0.008;
  std::string widths = "128,128,128,128,128";
  sh::TrainConfig tcfg;
  std::string lr_decay = "5000,10000,20000";
  std::string optimizer = "rmsprop";
  std::string train_out;
  auto* trn = app.add_subcommand("train", "Train a ReLU MLP on a synthetic dataset");
  trn->add_option("--dataset", train_dataset, "four-quadrant | nested | blobs")->check(CLI::IsMember(kDatasets));
  trn->add_option("--spacing", train_spacing, "Grid spacing");
  trn->add_option("--widths", widths, "Hidden layer widths");
  trn->add_option("--optimizer", optimizer, "rmsprop | sgd")->check(CLI::IsMember({"rmsprop", "sgd"}));
  trn->add_option("--lr", tcfg.lr, "Initial learning rate");
  trn->add_option("--lr-decay-iters", lr_decay, "Iterations at which the rate is scaled");
  trn->add_option("--lr-decay-factor", tcfg.lr_decay_factor, "Decay factor");
  trn->add_option("--iters", tcfg.iters, "Iterations");
  trn->add_option("--batch", tcfg.batch, "Minibatch size");
  trn->add_option("--seed", tcfg.seed, "Seed for initialization and minibatches");
  trn->add_option("--out", train_out, "Output model JSON")->required();

  // estimate
  Common est;
  auto* estc = app.add_subcommand("estimate", "SmoothHess and SmoothGrad at a point");
  add_common(estc, est, true);

  // sweep
  std::string sweep_config;
  auto* swp = app.add_subcommand("sweep", "Sigma or beta sweep of Hessian entries from a JSON config");
  swp->add_option("--config", sweep_config, "Sweep config JSON (inline or file)")->required();

  // pmse
  Common pm;
  std::string pm_eps = "0.25,0.5,1";
  std::string pm_methods = "SH+SG,SG,SP(H+G),SPG,G";
  std::string pm_config;
  std::size_t pm_test = 20, pm_valid = 10, pm_samples = 2000;
  auto* pmc = app.add_subcommand("pmse", "P_MSE benchmark of local surrogates");
  add_common(pmc, pm, false);
  pmc->add_option("--epsilon", pm_eps, "Ball radii");
  pmc->add_option("--methods", pm_methods, "Methods");
  pmc->add_option("--test-points", pm_test, "Test points");
  pmc->add_option("--validation-points", pm_valid, "Validation points");
  pmc->add_option("--pmse-samples", pm_samples, "Ball samples per point");
  pmc->add_option("--config", pm_config, "Benchmark config JSON; flags are ignored when given");

  // attack
  Common at;
  std::string at_eps = "0.5";
  double threshold = 0.98;
  std::string at_methods = "SH+SG,SG,random";
  auto* atc = app.add_subcommand("attack", "Trust-region attack on the predicted-class probability");
  add_common(atc, at, true);
  atc->add_option("--epsilon", at_eps, "Attack radius (or list)");
  atc->add_option("--threshold", threshold, "Eigenvalue mass threshold in (0, 1]");
  atc->add_option("--methods", at_methods, "Methods");

  // oracle-check
  std::uint64_t oracle_seed = 0;
  auto* orc = app.add_subcommand("oracle-check", "Run the oracle cross-validation suites");
  orc->add_option("--seed", oracle_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto used = app.get_subcommands();
    std::cerr << (used.empty() ? app.help() : used.front()->help());
    return 2;
  }

  try {
    if (threads > 0)
      sh::set_thread_count(threads);
    else if (const char* env = std::getenv("SMOOTHHESS_THREADS"); env == nullptr)
      sh::set_thread_count(1);

    if (*gen) {
      const sh::Dataset data = make_dataset(dataset, spacing, gen_seed);
      std::ostringstream csv;
      sh::write_dataset_csv(csv, data);
      write_text(gen_out, csv.str());
      print_summary(as_json, {{"dataset", dataset}, {"rows", data.size()}, {"out", gen_out}},
                    "wrote " + std::to_string(data.size()) + " rows to " + gen_out + "\n");
      return 0;
    }

    if (*trn) {
      std::vector<std::size_t> hidden;
      for (const auto& w : split(widths)) hidden.push_back(static_cast<std::size_t>(parse_double(w)));
      tcfg.lr_decay_iters.clear();
      for (double it : parse_list(lr_decay)) tcfg.lr_decay_iters.push_back(static_cast<std::int64_t>(it));
      tcfg.optimizer = optimizer == "sgd" ? sh::Optimizer::sgd : sh::Optimizer::rmsprop;
      const bool classify = train_dataset == "blobs";
      tcfg.loss = classify ? sh::Loss::cross_entropy : sh::Loss::mse;
      const sh::Dataset data = make_dataset(train_dataset, train_spacing, tcfg.seed);
      const sh::Network init = sh::make_mlp(2, hidden, classify ? 3 : 1, tcfg.seed);
      const sh::TrainResult r = sh::train(init, data, tcfg);
      sh::save_network(r.net, train_out);
      json config{{"dataset", train_dataset}, {"spacing", train_spacing}, {"widths", hidden},
                  {"optimizer", optimizer},   {"lr", tcfg.lr},           {"lr_decay_iters", tcfg.lr_decay_iters},
                  {"lr_decay_factor", tcfg.lr_decay_factor}, {"iters", tcfg.iters}, {"batch", tcfg.batch},
                  {"seed", tcfg.seed},        {"final_loss", r.final_loss}};
      if (classify) config["final_accuracy"] = r.final_accuracy;
      write_metadata(train_out, config);
      print_summary(as_json, config,
                    "final " + std::string(classify ? "cross-entropy " : "mse ") + sh::format_double(r.final_loss) +
                        "\n");
      return 0;
    }

    if (*estc) {
      const sh::Network net = sh::load_network(est.model);
      const sh::Vector x0 = parse_point(est.point);
      const auto cov = covariance_arg(est.cov, net.input_dim());
      const auto cfg = estimator_config(est.n, est.batch, est.antithetic, est.seed);
      const sh::InteractionEstimate e = sh::estimate(net, x0, cov, cfg);
      const json j = sh::estimate_to_json(e);
      write_text(est.out, j.dump(1) + "\n");
      std::ostringstream text;
      text << "n " << e.n_samples << ", max hessian stderr " << sh::format_double(e.stderr_hessian_max()) << '\n';
      print_summary(as_json, j, text.str());
      return 0;
    }

    if (*swp) {
      const json cfg = read_json_arg(sweep_config);
      const sh::Network net = sh::load_network(cfg.at("model_path").get<std::string>());
      const sh::Vector x0 = sh::json_vector(cfg.at("point"), "point");
      const std::string kind = cfg.value("kind", "sigma");
      const json& grid_spec = cfg.at("grid");
      const std::vector<double> grid =
          grid_spec.is_array() ? grid_spec.get<std::vector<double>>()
                               : sh::log_grid(grid_spec.at("lo_exp").get<double>(), grid_spec.at("hi_exp").get<double>(),
                                              grid_spec.at("count").get<std::size_t>());
      std::vector<sh::Entry> entries;
      for (const auto& e : cfg.at("entries")) entries.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
      const std::string out_path = cfg.at("output_path").get<std::string>();
      std::ostringstream csv;
      if (kind == "sigma") {
        const json ej = cfg.value("estimator", json::object());
        const auto ecfg = estimator_config(ej.value("n", std::size_t{200000}), ej.value("batch_size", std::size_t{1000}),
                                           ej.value("antithetic", false), cfg.value("seed", std::uint64_t{0}));
        sh::write_sigma_sweep_csv(csv, sh::sweep_sigma(net, x0, grid, ecfg, entries));
      } else if (kind == "beta") {
        sh::write_beta_sweep_csv(csv, sh::sweep_beta(net, x0, grid, entries));
      } else {
        throw sh::ParseError("sweep kind must be sigma or beta");
      }
      write_text(out_path, csv.str());
      write_metadata(out_path, cfg);
      print_summary(as_json, {{"out", out_path}, {"grid_points", grid.size()}},
                    "wrote " + std::to_string(grid.size()) + " grid points to " + out_path + "\n");
      return 0;
    }

    if (*pmc) {
      const sh::Network net = sh::load_network(pm.model);
      sh::PmseBenchmarkConfig cfg;
      if (!pm_config.empty()) {
        cfg = sh::PmseBenchmarkConfig::from_json(read_json_arg(pm_config));
      } else {
        cfg.epsilons = parse_list(pm_eps);
        cfg.methods = split(pm_methods);
        cfg.test_points = pm_test;
        cfg.validation_points = pm_valid;
        cfg.pmse_samples = pm_samples;
        cfg.estimator = estimator_config(pm.n, pm.batch, pm.antithetic, pm.seed);
        cfg.seed = pm.seed;
      }
      const auto r = sh::run_pmse_benchmark(net, cfg);
      std::ostringstream summary, points;
      sh::write_pmse_summary_csv(summary, r.summary);
      sh::write_report_csv(points, r.points);
      write_text(pm.out, summary.str());
      write_text(pm.out + ".points.csv", points.str());
      write_metadata(pm.out, cfg.to_json());
      json j = json::array();
      for (const auto& s : r.summary)
        j.push_back({{"method", s.method}, {"epsilon", s.epsilon}, {"parameter", s.parameter}, {"mean", s.mean},
                     {"stderr", s.stderr_}});
      print_summary(as_json, j, summary.str());
      return 0;
    }

    if (*atc) {
      const sh::Network net = sh::load_network(at.model);
      const sh::Vector x0 = parse_point(at.point);
      if (static_cast<std::size_t>(x0.size()) != net.input_dim()) throw UsageError("--point has the wrong length");
      sh::AttackBenchmarkConfig cfg;
      cfg.epsilons = parse_list(at_eps);
      cfg.methods = split(at_methods);
      cfg.threshold = threshold;
      cfg.estimator = estimator_config(at.n, at.batch, at.antithetic, at.seed);
      cfg.seed = at.seed;
      if (!at.cov.empty()) {
        const json c = read_json_arg(at.cov);
        if (c.value("kind", "") != "isotropic") throw UsageError("attack --cov must be isotropic");
        cfg.sigma2_grid = {sh::json_finite(c.at("sigma2"), "sigma2")};
      } else {
        cfg.sigma2_grid = {std::pow(sh::sigma_for_radius(cfg.epsilons.front(), net.input_dim()), 2)};
      }
      const auto r = sh::run_attack_benchmark(net, {x0}, {}, cfg);
      std::ostringstream csv;
      sh::write_report_csv(csv, r.points);
      write_text(at.out, csv.str());
      json j = json::array();
      for (const auto& p : r.points)
        j.push_back({{"method", p.method}, {"epsilon", p.epsilon}, {"objective", p.value}, {"k_used", p.k_used},
                     {"flipped", p.flipped}});
      print_summary(as_json, j, csv.str());
      return 0;
    }

    if (*orc) return cmd_oracle_check(oracle_seed, as_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
