#include "detrame/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "detrame/config.hpp"
#include "detrame/data.hpp"
#include "detrame/gradcheck.hpp"
#include "detrame/qprox.hpp"
#include "detrame/sdl.hpp"
#include "detrame/serialize.hpp"

namespace detrame::cli {

namespace {

namespace fs = std::filesystem;
using config::Config;
using config::ConfigError;

struct DataBundle {
  data::Dataset train;
  data::Dataset test;
};

DataBundle load_datasets(const Config& cfg, std::uint64_t seed) {
  DataBundle out;
  const std::string kind = cfg.get_str("data.dataset", "two-moons");
  if (kind == "two-moons") {
    const int n = cfg.get_int("data.moons_n_per_class", 250);
    const double noise = cfg.get_double("data.moons_noise", 0.1);
    out.train = data::gen_two_moons(n, noise, seed);
    out.test = data::gen_two_moons(n, noise, seed + 1);
  } else if (kind == "idx") {
    const int classes = cfg.get_int("data.class_count", 10);
    out.train = data::load_idx(cfg.get_str("data.idx_train_images"),
                               cfg.get_str("data.idx_train_labels"), classes);
    out.test = data::load_idx(cfg.get_str("data.idx_test_images"),
                              cfg.get_str("data.idx_test_labels"), classes);
  } else {
    throw ConfigError("config: unknown dataset kind: " + kind);
  }
  out.train.split = "train";
  out.test.split = "test";
  return out;
}

train::TrainConfig read_train_config(const Config& cfg, long long seed_override) {
  train::TrainConfig tc;
  tc.lr.initial = cfg.get_double("train.lr", 0.1);
  tc.lr.decay_factor = cfg.get_double("train.lr_decay", 0.1);
  tc.lr.decay_epochs = cfg.get_int_list("train.lr_decay_epochs", {});
  tc.epochs = cfg.get_int("train.epochs", 50);
  tc.batch_size = cfg.get_int("train.batch_size", 32);
  tc.seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                               : static_cast<std::uint64_t>(cfg.get_int64("train.seed", 1));
  tc.tt_max = cfg.get_int("train.tt_max", 3);
  tc.lambda = cfg.get_double("train.lambda", 0.05);
  tc.beta = cfg.get_double("train.beta", 0.01);
  tc.alpha = cfg.get_double("train.alpha", 0.1);
  tc.momentum = cfg.get_double("train.momentum", 0.0);
  return tc;
}

net::Model build_model(const Config& cfg, Index in_dim, Index classes,
                       const train::TrainConfig& tc) {
  const auto hidden_int = cfg.get_int_list("model.hidden", {16, 16});
  std::vector<Index> hidden(hidden_int.begin(), hidden_int.end());
  const std::string act = cfg.get_str("model.activation", "qmetric");
  const std::string init = cfg.get_str("model.init", "default");
  if (act != "qmetric" && act != "relu") {
    throw ConfigError("config: model.activation must be qmetric or relu");
  }
  std::mt19937_64 rng(tc.seed + 2);
  if (init == "dictionary") {
    if (act != "qmetric") {
      throw ConfigError("config: model.init = dictionary requires model.activation = qmetric");
    }
    return net::make_mlp_from_dictionaries(in_dim, hidden, classes, tc.alpha,
                                           Regularizer(tc.lambda, tc.beta), tc.tt_max, rng);
  }
  if (init != "default") throw ConfigError("config: model.init must be default or dictionary");
  return net::make_mlp(in_dim, hidden, classes, act == "qmetric", tc.tt_max, rng);
}

int cmd_train(const std::string& config_path, long long seed_override, const std::string& out_dir) {
  Config cfg = Config::parse_file(config_path);
  train::TrainConfig tc = read_train_config(cfg, seed_override);
  DataBundle ds = load_datasets(cfg, tc.seed);
  tc.train_dataset = ds.train.provenance;
  tc.test_dataset = ds.test.provenance;

  net::Model model =
      build_model(cfg, ds.train.features.features_per_sample(), ds.train.class_count, tc);

  const bool normalize = cfg.get_bool("data.normalize", true);
  data::Standardizer norm;
  if (normalize) {
    norm = data::Standardizer::fit(ds.train.features);
    norm.apply(ds.train.features);
    norm.apply(ds.test.features);
  }

  train::History hist = train::train_loop(model, ds.train.features, ds.train.labels,
                                          ds.test.features, ds.test.labels, tc);

  fs::create_directories(out_dir);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  const std::string model_path = (fs::path(out_dir) / "model.bin").string();
  write_metrics_csv(metrics_path, hist);
  serialize::save_model(model_path, model, normalize ? &norm : nullptr);

  const auto& last = hist.epochs.back();
  std::printf("train: %d epochs, train_acc %.4f, test_acc %.4f\n", tc.epochs, last.train_acc,
              last.test_acc);
  std::printf("train: wrote %s and %s\n", metrics_path.c_str(), model_path.c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& model_path,
             long long seed_override) {
  Config cfg = Config::parse_file(config_path);
  train::TrainConfig tc = read_train_config(cfg, seed_override);
  DataBundle ds = load_datasets(cfg, tc.seed);
  serialize::ModelBundle bundle = serialize::load_model(model_path);
  if (bundle.norm) bundle.norm->apply(ds.test.features);
  const Matrix logits = net::forward(bundle.model, ds.test.features);
  const double acc = train::accuracy(logits, ds.test.labels);
  std::printf("accuracy %.6f\n", acc);
  return 0;
}

int cmd_equiv_check(const std::string& config_path, long long seed_override) {
  Config cfg = config_path.empty() ? Config() : Config::parse_file(config_path);
  const int instances = cfg.get_int("equiv.instances", 20);
  const Index m = cfg.get_int("equiv.m", 8);
  const Index k = cfg.get_int("equiv.k", 12);
  const Index n = cfg.get_int("equiv.n", 4);
  const double alpha = cfg.get_double("equiv.alpha", 0.1);
  const double lambda = cfg.get_double("equiv.lambda", 0.05);
  const double beta = cfg.get_double("equiv.beta", 0.01);
  const double tol = cfg.get_double("equiv.tol", 1e-6);
  const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                : static_cast<std::uint64_t>(
                                                      cfg.get_int64("equiv.seed", 7));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    Matrix D(m, k);
    for (Index i = 0; i < D.size(); ++i) D.data()[i] = gauss(rng);
    for (Index j = 0; j < k; ++j) D.col(j) /= D.col(j).norm();
    Matrix X(m, n);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = gauss(rng);
    Dictionary dict(std::move(D), alpha);
    Regularizer reg(lambda, beta);
    const auto rep = sdl::check_equivalence(dict, reg, X, tol);
    worst = std::max(worst, rep.max_abs_diff);
  }
  std::printf("equiv-check: max discrepancy %.3e over %d instances (tol %.1e)\n", worst,
              instances, tol);
  return worst <= tol ? 0 : 1;
}

int cmd_gradcheck(long long seed_override) {
  const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : 42;
  const auto cases = gradcheck::gradcheck_suite(seed);
  bool ok = true;
  for (const auto& c : cases) {
    std::printf("gradcheck: %-22s max_rel_err %.3e (threshold %.1e) %s\n", c.name.c_str(),
                c.max_rel_err, c.threshold, c.pass ? "PASS" : "FAIL");
    ok = ok && c.pass && c.max_rel_err <= 1e-4;
  }
  return ok ? 0 : 1;
}

Matrix random_diag_dominant(Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> margin(0.1, 1.0);
  Matrix Q(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < i; ++j) {
      const double v = gauss(rng) / static_cast<double>(k);
      Q(i, j) = v;
      Q(j, i) = v;
    }
    Q(i, i) = 0.0;
  }
  for (Index i = 0; i < k; ++i) {
    Q(i, i) = 1.1 * Q.row(i).cwiseAbs().sum() + margin(rng);
  }
  return Q;
}

int cmd_prox_bench(const std::string& config_path, long long seed_override,
                   const std::string& out_dir) {
  Config cfg = config_path.empty() ? Config() : Config::parse_file(config_path);
  const Index k = cfg.get_int("prox_bench.k", 32);
  const Index n = cfg.get_int("prox_bench.n", 64);
  const int instances = cfg.get_int("prox_bench.instances", 5);
  const double lambda = cfg.get_double("prox_bench.lambda", 0.05);
  const double beta = cfg.get_double("prox_bench.beta", 0.01);
  const double tol = cfg.get_double("prox_bench.tol", 1e-10);
  const int max_iter = cfg.get_int("prox_bench.max_iter", 200000);
  std::vector<int> tts = cfg.get_int_list("prox_bench.tt_sweep", {1, 2, 3, 5, 10, 20, 50, 100,
                                                                  200, 500});
  const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                : static_cast<std::uint64_t>(
                                                      cfg.get_int64("prox_bench.seed", 3));

  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "prox_bench.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("prox-bench: cannot open " + csv_path);
  csv << "tt_max,instance,k,n,max_abs_err,rnn_wall_s,oracle_wall_s\n";

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Regularizer reg(lambda, beta);
  using clock = std::chrono::steady_clock;

  for (int inst = 0; inst < instances; ++inst) {
    QMetric Q(random_diag_dominant(k, rng));
    Matrix Z(k, n);
    for (Index i = 0; i < Z.size(); ++i) Z.data()[i] = gauss(rng);
    qprox::ProxProblem prob(std::move(Z), Q, reg);

    const auto o0 = clock::now();
    const auto oracle = qprox::qprox_oracle(prob, tol, max_iter);
    const double oracle_s = std::chrono::duration<double>(clock::now() - o0).count();

    for (int tt : tts) {
      RnnCell cell = qprox::reparameterize(Q, reg, tt);
      const auto r0 = clock::now();
      const Matrix U = qprox::qprox_rnn(prob, cell);
      const double rnn_s = std::chrono::duration<double>(clock::now() - r0).count();
      const double err = (U - oracle.U).cwiseAbs().maxCoeff();
      char row[256];
      std::snprintf(row, sizeof(row), "%d,%d,%lld,%lld,%.17g,%.17g,%.17g\n", tt, inst,
                    static_cast<long long>(k), static_cast<long long>(n), err, rnn_s, oracle_s);
      csv << row;
    }
  }
  csv.close();
  std::printf("prox-bench: wrote %s\n", csv_path.c_str());
  return 0;
}

}  // namespace

void write_metrics_csv(const std::string& path, const train::History& hist) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot open " + path);
  out << "epoch,train_loss,train_acc,test_acc,wall_s\n";
  for (const auto& r : hist.epochs) {
    char row[256];
    std::snprintf(row, sizeof(row), "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.train_acc, r.test_acc, r.wall_s);
    out << row;
  }
  if (!out) throw std::runtime_error("metrics: write failed for " + path);
}

std::vector<train::EpochRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,train_acc,test_acc,wall_s") {
    throw std::runtime_error("metrics: bad header in " + path);
  }
  std::vector<train::EpochRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    train::EpochRecord r{};
    std::getline(ls, field, ',');
    r.epoch = std::stoi(field);
    std::getline(ls, field, ',');
    r.train_loss = std::stod(field);
    std::getline(ls, field, ',');
    r.train_acc = std::stod(field);
    std::getline(ls, field, ',');
    r.test_acc = std::stod(field);
    std::getline(ls, field, ',');
    r.wall_s = std::stod(field);
    if (!ls && ls.eof() == false) throw std::runtime_error("metrics: bad row in " + path);
    records.push_back(r);
  }
  return records;
}

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"deep transform and metric learning toolkit"};
  app.name("detrame");
  app.require_subcommand(1);

  std::string config_path;
  std::string model_path;
  std::string out_dir = ".";
  long long seed = -1;

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "configuration file")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");
  train_cmd->add_option("--out", out_dir, "output directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model on the test split");
  eval_cmd->add_option("--config", config_path, "configuration file")->required();
  eval_cmd->add_option("--model", model_path, "model container path")->required();
  eval_cmd->add_option("--seed", seed, "override the config seed");

  auto* equiv_cmd = app.add_subcommand(
      "equiv-check", "verify direct sparse coding against the metric-prox route");
  equiv_cmd->add_option("--config", config_path, "configuration file");
  equiv_cmd->add_option("--seed", seed, "override the instance seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad_cmd->add_option("--seed", seed, "suite seed");

  auto* bench_cmd =
      app.add_subcommand("prox-bench", "compare unrolled prox against the solver oracle");
  bench_cmd->add_option("--config", config_path, "configuration file");
  bench_cmd->add_option("--seed", seed, "override the instance seed");
  bench_cmd->add_option("--out", out_dir, "output directory");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("detrame");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, seed, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(config_path, model_path, seed);
    if (equiv_cmd->parsed()) return cmd_equiv_check(config_path, seed);
    if (grad_cmd->parsed()) return cmd_gradcheck(seed);
    if (bench_cmd->parsed()) return cmd_prox_bench(config_path, seed, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace detrame::cli
