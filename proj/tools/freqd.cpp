// freqd: command-line driver for preparing data, training teachers and
// students, distilling, checking the spectral identities and evaluating.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "freqd/config.hpp"
#include "freqd/data.hpp"
#include "freqd/distill.hpp"
#include "freqd/evalkit.hpp"
#include "freqd/graph.hpp"
#include "freqd/recmodels.hpp"
#include "freqd/spectral.hpp"

#ifndef FREQD_VERSION
#define FREQD_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace freqd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

/// Output directory handling shared by every command.
fs::path prepare_out(const RunConfig& cfg, const std::map<std::string, std::string>& extra = {}) {
  fs::path out = cfg.get("out");
  fs::create_directories(out);
  std::ofstream f(out / "config.txt");
  cfg.write(f, FREQD_VERSION);
  for (const auto& [k, v] : extra) f << "# " << k << '=' << v << '\n';
  return out;
}

void write_metrics(const fs::path& out, const MetricTable& m) {
  std::ofstream f(out / "metrics.csv");
  m.write_csv(f);
  std::cout << "test metrics\n";
  m.write_summary(std::cout);
}

DistillConfig training_config(const RunConfig& cfg) {
  DistillConfig dc;
  dc.lr = cfg.get_double("lr");
  dc.weight_decay = cfg.get_double("weight_decay");
  dc.batch_size = cfg.get_size("batch_size");
  dc.max_epochs = cfg.get_size("max_epochs");
  dc.patience = cfg.get_size("patience");
  dc.negatives = cfg.get_size("negatives");
  return dc;
}

void check_model_matches(const EmbeddingModel& m, const SplitDataset& split, const std::string& what) {
  if (static_cast<index_t>(m.user_emb.rows()) != split.num_users() ||
      static_cast<index_t>(m.item_emb.rows()) != split.num_items())
    throw dimension_mismatch(what + " covers " + std::to_string(m.user_emb.rows()) + " users / " +
                             std::to_string(m.item_emb.rows()) + " items but the split has " +
                             std::to_string(split.num_users()) + " / " + std::to_string(split.num_items()));
}

void report_run(const TrainResult& r) {
  std::cout << "epochs run: " << r.epochs_run << ", best epoch: " << r.best_epoch
            << ", best validation NDCG@20: " << r.best_val_ndcg20 << '\n';
}

int cmd_prepare(const RunConfig& cfg) {
  auto raw = ingest(cfg.get("input"));
  auto filtered = filter_min_interactions(raw, cfg.get_size("threshold"));
  auto split = chronological_split(filtered);
  fs::path out = prepare_out(cfg);
  write_split(split, out);
  std::cout << "users         " << filtered.num_users() << '\n'
            << "items         " << filtered.num_items() << '\n'
            << "interactions  " << filtered.size() << '\n'
            << "sparsity      " << filtered.sparsity() << '\n'
            << "train/val/test " << split.train.size() << '/' << split.validation.size() << '/'
            << split.test.size() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const auto seed = cfg.get_size("seed");
  const auto backbone = parse_backbone(cfg.get("backbone"));
  const auto dc = training_config(cfg);
  auto split = read_split(cfg.get("data"));
  auto model = init_student(split.num_users(), split.num_items(), cfg.get_size("dim"), seed, backbone,
                            cfg.get_size("layers"));
  fs::path out = prepare_out(cfg, {{"eval_excludes_validation", "yes"}});
  std::ofstream log(out / "log.csv");
  auto result = train_model(std::move(model), split, dc, seed, &log);
  save_checkpoint(out / "model.ckpt", result.model);
  report_run(result);
  write_metrics(out, evaluate(result.model, split));
  return kExitOk;
}

int cmd_distill(const RunConfig& cfg) {
  DistillConfig dc = training_config(cfg);
  dc.beta = cfg.get_double("beta");
  dc.filter = parse_filter(cfg.get("filter"));
  auto graph = parse_graph(cfg.get("graph"));
  dc.graph_source = graph.source;
  dc.knn_k = graph.k;
  dc.dropout_rate = cfg.get_double("dropout");
  dc.loss_scope = parse_loss_scope(cfg.get("loss_scope"));
  const auto& method = cfg.get("method");
  if (method != "freqd" && method != "fitnet") throw config_error("method must be freqd or fitnet, got '" + method + "'");
  dc.method = method == "fitnet" ? DistillMethod::FitNet : DistillMethod::FreqD;
  if (cfg.get("scheme") != "none") {
    if (method == "fitnet") throw config_error("scheme applies to method=freqd only");
    dc.method = DistillMethod::SpectralWeights;
    dc.scheme = parse_scheme(cfg.get("scheme"));
  }

  const auto seed = cfg.get_size("seed");
  const auto backbone = parse_backbone(cfg.get("backbone"));

  auto split = read_split(cfg.get("data"));
  auto teacher = load_checkpoint(fs::path(cfg.get("teacher")));
  check_model_matches(teacher, split, "teacher checkpoint");
  auto student = init_student(split.num_users(), split.num_items(), cfg.get_size("dim"), seed, backbone,
                              cfg.get_size("layers"));
  fs::path out = prepare_out(cfg, {{"eval_excludes_validation", "yes"}, {"filter_response", dc.filter.describe()}});
  std::ofstream log(out / "log.csv");
  auto result = distill_train(&teacher, std::move(student), split, dc, seed, &log);
  save_checkpoint(out / "model.ckpt", result.model);
  report_run(result);
  write_metrics(out, evaluate(result.model, split));
  return kExitOk;
}

int cmd_verify(const RunConfig& cfg) {
  const index_t n = cfg.get_size("n");
  const std::size_t trials = cfg.get_size("trials");
  const double tol = cfg.get_double("tol");
  if (n > kDefaultSpectralCap) throw too_large(n, kDefaultSpectralCap);
  if (n < 2) throw config_error("n must be at least 2");
  if (cfg.get("out") != "-") prepare_out(cfg);

  if (trials == 0) {
    std::cerr << "warning: trials=0, nothing was checked\n";
    std::cout << "trials=0\nstatus=pass\n";
    return kExitOk;
  }
  const bool pairwise = n <= kPairwiseSpectralCap;
  if (!pairwise)
    std::cerr << "warning: n=" << n << " exceeds " << kPairwiseSpectralCap << "; skipping the pairwise identity\n";

  std::mt19937_64 rng(cfg.get_size("seed"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_matrix = [&](index_t r, index_t c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  const std::vector<GraphFilter> filters = {GraphFilter::linear(0.1), GraphFilter::linear(0.3),
                                            GraphFilter::linear(0.5), GraphFilter::quadratic(0.1, -0.5)};
  double worst1 = 0, worst2 = 0, worst3 = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto g = erdos_renyi(n, 0.3, rng);
    auto lap = normalized_laplacian(g);
    auto dec = eigendecompose(lap);
    Matrix s_proj = random_matrix(n, 8), teacher = random_matrix(n, 8);
    worst1 = std::max(worst1, verify_frequency_sum(dec, s_proj, teacher).rel_err);
    for (const auto& f : filters)
      worst2 = std::max(worst2, verify_filtered_sum(lap, f, s_proj, teacher).rel_err);
    if (pairwise) worst3 = std::max(worst3, verify_pairwise_sum(dec, random_matrix(n, 4), random_matrix(n, 4)).rel_err);
  }
  const bool ok = worst1 <= tol && worst2 <= tol && (!pairwise || worst3 <= tol);
  std::cout << "n=" << n << "\ntrials=" << trials << "\ntol=" << tol << '\n';
  std::cout.precision(3);
  std::cout << std::scientific << "frequency_sum_max_rel_err=" << worst1 << "\nfiltered_sum_max_rel_err=" << worst2 << '\n';
  if (pairwise) std::cout << "pairwise_sum_max_rel_err=" << worst3 << '\n';
  std::cout << "max_rel_err=" << std::max({worst1, worst2, worst3}) << std::defaultfloat << '\n';
  std::cout << "status=" << (ok ? "pass" : "fail") << '\n';
  return ok ? kExitOk : kExitFailure;
}

int cmd_spectrum(const RunConfig& cfg) {
  auto split = read_split(cfg.get("data"));
  auto student = load_checkpoint(fs::path(cfg.get("student")));
  auto teacher = load_checkpoint(fs::path(cfg.get("teacher")));
  check_model_matches(student, split, "student checkpoint");
  check_model_matches(teacher, split, "teacher checkpoint");
  student.attach_interactions(split.train);
  teacher.attach_interactions(split.train);
  auto s = forward(student);
  auto t = forward(teacher);
  auto spec = parse_graph(cfg.get("graph"));
  auto graphs = build_distill_graphs(t, split.train, spec.source, spec.k);
  for (const auto& g : graphs.graphs)
    if (g.node_count() > kDefaultSpectralCap) throw too_large(g.node_count(), kDefaultSpectralCap);

  // Best linear map from student to teacher space per entity type.
  Matrix su = project(Projector::fit(s.users, t.users), s.users);
  Matrix si = project(Projector::fit(s.items, t.items), s.items);
  fs::path out = prepare_out(cfg);
  std::ofstream csv(out / "spectrum.csv");
  csv << "graph,group,loss\n";
  csv.precision(10);
  const char* names[] = {"users", "items"};
  for (std::size_t g = 0; g < graphs.graphs.size(); ++g) {
    const auto& ent = graphs.entities[g];
    std::string name = ent.size() == 2 ? "bipartite" : names[ent[0]];
    Matrix sp = detail::stack_entities(ent, su, si);
    Matrix tt = detail::stack_entities(ent, t.users, t.items);
    auto gs = group_spectrum(sp, tt, graphs.graphs[g]);
    std::cout << name << ':';
    for (int k = 0; k < 4; ++k) {
      csv << name << ",S" << k + 1 << ',' << gs.groups[static_cast<std::size_t>(k)] << '\n';
      std::cout << "  L_S" << k + 1 << '=' << gs.groups[static_cast<std::size_t>(k)];
    }
    csv << name << ",total," << gs.total << '\n';
    std::cout << "  total=" << gs.total << '\n';
  }
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
  auto split = read_split(cfg.get("data"));
  auto model = load_checkpoint(fs::path(cfg.get("model")));
  check_model_matches(model, split, "checkpoint");
  fs::path out = prepare_out(cfg, {{"eval_excludes_validation", "yes"}});
  write_metrics(out, evaluate(model, split));
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg) {
  SyntheticConfig sc;
  sc.num_users = cfg.get_size("users");
  sc.num_items = cfg.get_size("items");
  sc.clusters = cfg.get_size("clusters");
  sc.latent_dim = cfg.get_size("latent_dim");
  sc.user_noise = sc.item_noise = cfg.get_double("noise");
  sc.temperature = cfg.get_double("temperature");
  sc.min_per_user = cfg.get_size("min_per_user");
  sc.max_per_user = cfg.get_size("max_per_user");
  auto data = make_synthetic(sc, cfg.get_size("seed"));
  fs::path out = cfg.get("out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw error("cannot write " + out.string());
  for (const auto& r : data.rows()) f << r.user << '\t' << r.item << '\t' << detail::format_double(r.ts) << '\n';
  std::cout << "wrote " << data.size() << " interactions to " << out.string() << '\n';
  return kExitOk;
}

struct Subcommand {
  std::string name;
  std::string description;
  int (*run)(const RunConfig&);
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;
};

void apply_thread_env() {
  if (const char* env = std::getenv("FREQD_THREADS")) {
    double v = 0;
    if (!detail::parse_double(env, v) || v < 1 || v != std::floor(v))
      throw config_error("FREQD_THREADS must be a positive integer");
    max_threads() = static_cast<std::size_t>(v);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-reweighted feature distillation for recommenders"};
  app.set_version_flag("--version", std::string(FREQD_VERSION));
  app.require_subcommand(1);

  std::vector<Subcommand> commands = {
      {"prepare", "ingest, filter and split a raw interaction file", cmd_prepare},
      {"train-teacher", "train a teacher backbone", cmd_train},
      {"train-student", "train a student backbone without distillation", cmd_train},
      {"distill", "train a student with feature distillation from a teacher", cmd_distill},
      {"verify", "check the spectral loss identities on random graphs", cmd_verify},
      {"spectrum", "per-group distillation loss of a student against a teacher", cmd_spectrum},
      {"evaluate", "full-ranking Recall@N / NDCG@N of a checkpoint", cmd_evaluate},
      {"synth", "write a synthetic interaction file", cmd_synth},
  };
  for (auto& c : commands) {
    c.app = app.add_subcommand(c.name, c.description);
    c.app->add_option("--config", c.config_file, "key=value file; flags override it");
    auto defaults = config_for(c.name);
    if (c.name == "train-teacher") defaults.set("dim", "64");
    for (const auto& key : defaults.keys()) {
      std::string help = key.help;
      if (defaults.has(key.name)) help += " [" + defaults.get(key.name) + "]";
      c.app->add_option(flag_name(key.name), c.values[key.name], help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      apply_thread_env();
      RunConfig cfg = config_for(c.name);
      if (c.name == "train-teacher") cfg.set("dim", "64");
      if (!c.config_file.empty()) cfg.load_file(c.config_file);
      for (const auto& key : cfg.keys())
        if (c.app->count(flag_name(key.name)) > 0) cfg.set(key.name, c.values[key.name]);
      cfg.validate();
      return c.run(cfg);
    } catch (const config_error& e) {
      std::cerr << "usage error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const too_large& e) {
      std::cerr << "TooLarge: " << e.what() << '\n';
      return kExitFailure;
    } catch (const empty_file& e) {
      std::cerr << "EmptyFile: " << e.what() << '\n';
      return kExitFailure;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitFailure;
    }
  }
  return kExitUsage;
}
