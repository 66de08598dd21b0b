#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "freqd/common.hpp"
#include "freqd/data.hpp"
#include "freqd/distill.hpp"
#include "freqd/graph.hpp"

namespace freqd {

/// Bad configuration: unknown key, malformed value, missing required key.
class config_error : public error {
 public:
  using error::error;
};

struct ConfigKey {
  std::string name;
  std::string default_value;  // empty = required
  std::string help;
};

/// Command-scoped key=value settings.
///
/// Only keys declared for the command are accepted; later sources override
/// earlier ones (defaults, then a config file, then command-line flags).
class RunConfig {
 public:
  RunConfig(std::string command, std::vector<ConfigKey> keys) : command_(std::move(command)), keys_(std::move(keys)) {
    for (const auto& k : keys_)
      if (!k.default_value.empty()) values_[k.name] = k.default_value;
  }

  const std::string& command() const noexcept { return command_; }
  const std::vector<ConfigKey>& keys() const noexcept { return keys_; }

  bool known(const std::string& key) const {
    return std::any_of(keys_.begin(), keys_.end(), [&](const ConfigKey& k) { return k.name == key; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw config_error("unknown key '" + key + "' for command " + command_);
    values_[key] = value;
  }

  void load(std::istream& in, const std::string& name = "<config>") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto view = detail::trim(line);
      if (view.empty() || view.front() == '#') continue;
      auto eq = view.find('=');
      if (eq == std::string_view::npos)
        throw config_error(name + ":" + std::to_string(lineno) + ": expected key=value");
      set(std::string(detail::trim(view.substr(0, eq))), std::string(detail::trim(view.substr(eq + 1))));
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config " + path.string());
    load(in, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const {
    double v = 0;
    if (!detail::parse_double(get(key), v)) throw config_error("key '" + key + "' is not a number: " + get(key));
    return v;
  }

  std::size_t get_size(const std::string& key) const {
    double v = get_double(key);
    if (v < 0 || v != std::floor(v)) throw config_error("key '" + key + "' must be a nonnegative integer");
    return static_cast<std::size_t>(v);
  }

  /// Every required key is present.
  void validate() const {
    for (const auto& k : keys_)
      if (!has(k.name)) throw config_error("missing required key '" + k.name + "' for command " + command_);
  }

  void write(std::ostream& out, const std::string& version) const {
    out << "# command=" << command_ << "\n# version=" << version << '\n';
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  }

 private:
  std::string command_;
  std::vector<ConfigKey> keys_;
  std::map<std::string, std::string> values_;
};

namespace detail {

inline std::vector<double> parse_number_list(std::string_view s, const std::string& what) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(',', start);
    auto tok = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    double v = 0;
    if (!parse_double(tok, v)) throw config_error("bad number '" + std::string(tok) + "' in " + what);
    out.push_back(v);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// identity | linear:ALPHA | quadratic:A,B | custom:T0,T1,...
inline GraphFilter parse_filter(const std::string& spec) {
  auto colon = spec.find(':');
  std::string family = spec.substr(0, colon);
  std::string args = colon == std::string::npos ? "" : spec.substr(colon + 1);
  try {
    if (family == "identity" && args.empty()) return GraphFilter::identity();
    if (family == "linear") {
      auto v = detail::parse_number_list(args, "linear filter");
      if (v.size() == 1) return GraphFilter::linear(v[0]);
    }
    if (family == "quadratic") {
      auto v = detail::parse_number_list(args, "quadratic filter");
      if (v.size() == 2) return GraphFilter::quadratic(v[0], v[1]);
    }
    if (family == "custom") return GraphFilter::custom(detail::parse_number_list(args, "custom filter"));
  } catch (const invalid_argument& e) {
    throw config_error(std::string("invalid filter: ") + e.what());
  }
  throw config_error("filter must be identity | linear:ALPHA | quadratic:A,B | custom:T0,T1,..., got '" + spec + "'");
}

struct GraphSpec {
  GraphSource source = GraphSource::TeacherKNN;
  std::size_t k = 10;
};

/// knn:K | bipartite
inline GraphSpec parse_graph(const std::string& spec) {
  if (spec == "bipartite") return {GraphSource::Bipartite, 0};
  if (spec.rfind("knn:", 0) == 0) {
    double k = 0;
    if (detail::parse_double(spec.substr(4), k) && k >= 1 && k == std::floor(k))
      return {GraphSource::TeacherKNN, static_cast<std::size_t>(k)};
  }
  throw config_error("graph must be knn:K or bipartite, got '" + spec + "'");
}

inline LossScope parse_loss_scope(const std::string& s) {
  if (s == "batch") return LossScope::Batch;
  if (s == "full") return LossScope::Full;
  throw config_error("loss-scope must be batch or full, got '" + s + "'");
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "bprmf") return Backbone::BPRMF;
  if (s == "lightgcn") return Backbone::LightGCN;
  throw config_error("backbone must be bprmf or lightgcn, got '" + s + "'");
}

/// Four comma-separated group weights, or one of the preset names
/// original | low | high.
inline WeightScheme parse_scheme(const std::string& s) {
  if (s == "original") return WeightScheme::original();
  if (s == "low") return WeightScheme::low_frequency_enhanced();
  if (s == "high") return WeightScheme::high_frequency_enhanced();
  auto v = detail::parse_number_list(s, "weight scheme");
  if (v.size() != 4 || std::any_of(v.begin(), v.end(), [](double w) { return w < 0; }))
    throw config_error("weight scheme needs four nonnegative weights");
  return {{v[0], v[1], v[2], v[3]}};
}

inline std::vector<ConfigKey> training_keys() {
  return {
      {"data", "", "directory with train.tsv/val.tsv/test.tsv/mapping.tsv"},
      {"out", "", "output directory"},
      {"seed", "1", "run seed"},
      {"backbone", "bprmf", "bprmf | lightgcn"},
      {"layers", "3", "LightGCN propagation layers"},
      {"dim", "20", "embedding dimensionality"},
      {"lr", "0.001", "Adam learning rate"},
      {"weight_decay", "0", "decoupled weight decay"},
      {"batch_size", "1024", "training triples per step"},
      {"max_epochs", "1000", "epoch limit"},
      {"patience", "30", "early-stopping patience on validation NDCG@20"},
      {"negatives", "1", "negative samples per positive"},
  };
}

/// Declared keys of each CLI command.
inline RunConfig config_for(const std::string& command) {
  if (command == "prepare")
    return RunConfig(command, {{"input", "", "raw interaction file"},
                               {"out", "", "output directory"},
                               {"threshold", "10", "minimum interactions per user and item"},
                               {"seed", "1", "unused; accepted for uniformity"}});
  if (command == "train-teacher" || command == "train-student") return RunConfig(command, training_keys());
  if (command == "distill") {
    auto keys = training_keys();
    keys.push_back({"teacher", "", "teacher checkpoint"});
    keys.push_back({"method", "freqd", "freqd | fitnet"});
    keys.push_back({"beta", "0.1", "distillation loss weight"});
    keys.push_back({"filter", "linear:0.45", "identity | linear:ALPHA | quadratic:A,B | custom:..."});
    keys.push_back({"graph", "knn:10", "knn:K | bipartite"});
    keys.push_back({"dropout", "0.1", "edge dropout rate per epoch"});
    keys.push_back({"loss_scope", "batch", "batch | full"});
    keys.push_back({"scheme", "none", "none, or group weights for the explicit spectral path"});
    return RunConfig(command, std::move(keys));
  }
  if (command == "verify")
    return RunConfig(command, {{"n", "16", "nodes per random graph"},
                               {"trials", "50", "random instances"},
                               {"seed", "1", "run seed"},
                               {"tol", "1e-8", "relative error tolerance"},
                               {"out", "-", "output directory, '-' for none"}});
  if (command == "spectrum")
    return RunConfig(command, {{"data", "", "prepared split directory"},
                               {"student", "", "student checkpoint"},
                               {"teacher", "", "teacher checkpoint"},
                               {"graph", "knn:10", "knn:K | bipartite"},
                               {"out", "", "output directory"},
                               {"seed", "1", "unused; accepted for uniformity"}});
  if (command == "evaluate")
    return RunConfig(command, {{"data", "", "prepared split directory"},
                               {"model", "", "checkpoint"},
                               {"out", "", "output directory"},
                               {"seed", "1", "unused; accepted for uniformity"}});
  if (command == "synth")
    return RunConfig(command, {{"out", "", "output interaction file"},
                               {"seed", "1", "generator seed"},
                               {"users", "600", "users"},
                               {"items", "1000", "items"},
                               {"clusters", "600", "latent cluster count"},
                               {"latent_dim", "32", "latent dimensionality"},
                               {"noise", "0.3", "spread around cluster centres"},
                               {"temperature", "2", "preference sharpness"},
                               {"min_per_user", "20", "minimum interactions per user"},
                               {"max_per_user", "60", "maximum interactions per user"}});
  throw config_error("unknown command " + command);
}

}  // namespace freqd
