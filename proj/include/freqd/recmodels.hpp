#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "freqd/common.hpp"
#include "freqd/data.hpp"
#include "freqd/graph.hpp"

namespace freqd {

enum class Backbone : std::uint32_t { BPRMF = 0, LightGCN = 1 };

inline const char* backbone_name(Backbone b) { return b == Backbone::BPRMF ? "bprmf" : "lightgcn"; }

/// D^{-1/2} A D^{-1/2} of the user-item bipartite graph (users first).
/// Nodes without interactions get an all-zero row rather than an error.
inline SparseMatrix lightgcn_adjacency(const InteractionSet& train) {
  const index_t nu = train.num_users(), ni = train.num_items();
  std::vector<double> deg(nu + ni, 0.0);
  for (const auto& r : train.rows()) {
    deg[r.user] += 1.0;
    deg[nu + r.item] += 1.0;
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * train.size());
  for (const auto& r : train.rows()) {
    double w = 1.0 / std::sqrt(deg[r.user] * deg[nu + r.item]);
    trips.emplace_back(static_cast<int>(r.user), static_cast<int>(nu + r.item), w);
    trips.emplace_back(static_cast<int>(nu + r.item), static_cast<int>(r.user), w);
  }
  const auto n = static_cast<Eigen::Index>(nu + ni);
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

/// User and item embedding tables plus the backbone that turns them into
/// scoring representations.
///
/// BPRMF scores with the raw tables. LightGCN averages layers 0..L of
/// propagation over the normalized bipartite adjacency, which must be
/// attached (from the training interactions) before use.
struct EmbeddingModel {
  Matrix user_emb;
  Matrix item_emb;
  Backbone backbone = Backbone::BPRMF;
  std::size_t layers = 0;
  SparseMatrix propagation;

  index_t num_users() const noexcept { return static_cast<index_t>(user_emb.rows()); }
  index_t num_items() const noexcept { return static_cast<index_t>(item_emb.rows()); }
  index_t dim() const noexcept { return static_cast<index_t>(user_emb.cols()); }

  static EmbeddingModel random(index_t num_users, index_t num_items, index_t dim, std::mt19937_64& rng,
                               Backbone backbone = Backbone::BPRMF, std::size_t layers = 0, double stddev = 0.01) {
    if (dim < 1) throw invalid_argument("embedding dimension must be >= 1");
    std::normal_distribution<double> normal(0.0, stddev);
    EmbeddingModel m;
    m.user_emb.resize(static_cast<Eigen::Index>(num_users), static_cast<Eigen::Index>(dim));
    m.item_emb.resize(static_cast<Eigen::Index>(num_items), static_cast<Eigen::Index>(dim));
    for (Eigen::Index k = 0; k < m.user_emb.size(); ++k) m.user_emb.data()[k] = normal(rng);
    for (Eigen::Index k = 0; k < m.item_emb.size(); ++k) m.item_emb.data()[k] = normal(rng);
    m.backbone = backbone;
    m.layers = layers;
    return m;
  }

  void attach_interactions(const InteractionSet& train) {
    require_dims(train.num_users() == num_users() && train.num_items() == num_items(),
                 "interaction index space does not match model tables");
    if (backbone == Backbone::LightGCN) propagation = lightgcn_adjacency(train);
  }
};

/// Scoring representations of every user and item.
struct Representations {
  Matrix users;
  Matrix items;
};

inline Representations forward(const EmbeddingModel& model) {
  if (model.backbone == Backbone::BPRMF || model.layers == 0) return {model.user_emb, model.item_emb};
  const auto nu = static_cast<Eigen::Index>(model.num_users());
  const auto n = nu + static_cast<Eigen::Index>(model.num_items());
  if (model.propagation.rows() != n) throw error("LightGCN model has no propagation graph attached");
  Matrix layer(n, model.user_emb.cols());
  layer.topRows(nu) = model.user_emb;
  layer.bottomRows(n - nu) = model.item_emb;
  Matrix acc = layer;
  for (std::size_t l = 0; l < model.layers; ++l) {
    layer = model.propagation * layer;
    acc += layer;
  }
  acc /= static_cast<double>(model.layers + 1);
  return {acc.topRows(nu), acc.bottomRows(n - nu)};
}

/// Pulls a gradient on the representations back to the embedding tables.
inline Representations backward(const EmbeddingModel& model, const Representations& grad) {
  if (model.backbone == Backbone::BPRMF || model.layers == 0) return grad;
  const auto nu = static_cast<Eigen::Index>(model.num_users());
  const auto n = nu + static_cast<Eigen::Index>(model.num_items());
  Matrix layer(n, grad.users.cols());
  layer.topRows(nu) = grad.users;
  layer.bottomRows(n - nu) = grad.items;
  Matrix acc = layer;
  // The propagation matrix is symmetric, so its transpose is itself.
  for (std::size_t l = 0; l < model.layers; ++l) {
    layer = model.propagation * layer;
    acc += layer;
  }
  acc /= static_cast<double>(model.layers + 1);
  return {acc.topRows(nu), acc.bottomRows(n - nu)};
}

inline double score(const Representations& reps, index_t user, index_t item) {
  if (user >= static_cast<index_t>(reps.users.rows()) || item >= static_cast<index_t>(reps.items.rows()))
    throw index_out_of_range("score(" + std::to_string(user) + ", " + std::to_string(item) + ")");
  return reps.users.row(static_cast<Eigen::Index>(user)).dot(reps.items.row(static_cast<Eigen::Index>(item)));
}

inline double score(const EmbeddingModel& model, index_t user, index_t item) {
  return score(forward(model), user, item);
}

struct TrainTriple {
  index_t user = 0;
  index_t pos_item = 0;
  index_t neg_item = 0;
};

inline constexpr double kScoreClamp = 40.0;

/// -ln sigma(x) with x clamped to +-40.
inline double bpr_objective(double diff) {
  double x = std::clamp(diff, -kScoreClamp, kScoreClamp);
  return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

/// d/dx of bpr_objective, i.e. -sigma(-x).
inline double bpr_slope(double diff) {
  double x = std::clamp(diff, -kScoreClamp, kScoreClamp);
  return -1.0 / (1.0 + std::exp(x));
}

inline double bpr_loss(const Representations& reps, const TrainTriple& t) {
  return bpr_objective(score(reps, t.user, t.pos_item) - score(reps, t.user, t.neg_item));
}

inline double bpr_loss(const EmbeddingModel& model, const TrainTriple& t) { return bpr_loss(forward(model), t); }

/// Mean BPR loss over the batch; the mean gradient w.r.t. the representations
/// is added into `grad` (which must already be shaped like `reps`).
inline double bpr_batch_gradient(const Representations& reps, std::span<const TrainTriple> batch,
                                 Representations& grad) {
  if (batch.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& t : batch) {
    const auto u = static_cast<Eigen::Index>(t.user);
    const auto p = static_cast<Eigen::Index>(t.pos_item);
    const auto q = static_cast<Eigen::Index>(t.neg_item);
    double diff = reps.users.row(u).dot(reps.items.row(p)) - reps.users.row(u).dot(reps.items.row(q));
    loss += bpr_objective(diff);
    double c = bpr_slope(diff) * inv;
    grad.users.row(u) += c * (reps.items.row(p) - reps.items.row(q));
    grad.items.row(p) += c * reps.users.row(u);
    grad.items.row(q) -= c * reps.users.row(u);
  }
  return loss * inv;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment buffers for one parameter matrix.
struct AdamSlot {
  Matrix m;
  Matrix v;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Advances the shared step counter; call once per optimisation step.
  void tick() { ++step_; }
  long step() const noexcept { return step_; }

  void update(Matrix& param, AdamSlot& slot, const Matrix& grad, double lr, double weight_decay) const {
    require_dims(param.rows() == grad.rows() && param.cols() == grad.cols(), "gradient shape != parameter shape");
    if (slot.m.size() == 0) {
      slot.m = Matrix::Zero(param.rows(), param.cols());
      slot.v = Matrix::Zero(param.rows(), param.cols());
    }
    const long t = std::max(step_, 1L);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * grad;
    slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    if (weight_decay != 0.0) param *= (1.0 - lr * weight_decay);
    param.array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + cfg_.eps);
  }

 private:
  AdamConfig cfg_;
  long step_ = 0;
};

/// Optimiser state for a model's two embedding tables.
struct ModelOptimizer {
  Adam adam;
  AdamSlot users;
  AdamSlot items;
};

/// Applies one Adam step to the embedding tables from a gradient on the
/// representations.
inline void apply_gradient(EmbeddingModel& model, ModelOptimizer& opt, const Representations& rep_grad, double lr,
                           double weight_decay) {
  Representations g = backward(model, rep_grad);
  opt.adam.update(model.user_emb, opt.users, g.users, lr, weight_decay);
  opt.adam.update(model.item_emb, opt.items, g.items, lr, weight_decay);
}

inline Representations zero_like(const Representations& reps) {
  return {Matrix::Zero(reps.users.rows(), reps.users.cols()), Matrix::Zero(reps.items.rows(), reps.items.cols())};
}

/// One optimisation step on the mean BPR loss of `batch`; returns that loss.
inline double train_step(EmbeddingModel& model, ModelOptimizer& opt, std::span<const TrainTriple> batch, double lr,
                         double weight_decay) {
  if (!(lr >= 0.0)) throw invalid_argument("learning rate must be nonnegative");
  Representations reps = forward(model);
  Representations grad = zero_like(reps);
  double loss = bpr_batch_gradient(reps, batch, grad);
  opt.adam.tick();
  apply_gradient(model, opt, grad, lr, weight_decay);
  return loss;
}

class no_negative_available : public error {
 public:
  explicit no_negative_available(index_t user)
      : error("user " + std::to_string(user) + " has interacted with every item") {}
};

/// Uniform draws over the items `user` has not interacted with.
inline std::vector<index_t> sample_negatives(const InteractionSet& interactions, index_t user, std::size_t count,
                                             std::mt19937_64& rng) {
  const auto& pos = interactions.items_of(user);
  const index_t ni = interactions.num_items();
  if (pos.size() >= ni) throw no_negative_available(user);
  std::vector<index_t> out;
  out.reserve(count);
  if (2 * pos.size() < ni) {
    std::uniform_int_distribution<index_t> pick(0, ni - 1);
    while (out.size() < count) {
      index_t i = pick(rng);
      if (!std::binary_search(pos.begin(), pos.end(), i)) out.push_back(i);
    }
  } else {
    std::vector<index_t> pool;
    pool.reserve(ni - pos.size());
    for (index_t i = 0, p = 0; i < ni; ++i) {
      if (p < pos.size() && pos[p] == i) ++p;
      else pool.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t c = 0; c < count; ++c) out.push_back(pool[pick(rng)]);
  }
  return out;
}

inline std::vector<index_t> sample_negatives(const InteractionSet& interactions, index_t user, std::size_t count,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_negatives(interactions, user, count, rng);
}

/// One (user, positive, negative) triple per training interaction, shuffled.
inline std::vector<TrainTriple> sample_epoch_triples(const InteractionSet& train, std::mt19937_64& rng,
                                                     std::size_t negatives_per_positive = 1) {
  std::vector<TrainTriple> out;
  out.reserve(train.size() * negatives_per_positive);
  for (const auto& r : train.rows())
    for (index_t neg : sample_negatives(train, r.user, negatives_per_positive, rng))
      out.push_back({r.user, r.item, neg});
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// Checkpoint: "FRQD", u32 version, u64 |U|, u64 |I|, u64 d, u32 backbone,
// u32 layers, then little-endian f64 user rows followed by item rows.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw error("truncated checkpoint");
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const EmbeddingModel& model) {
  out.write("FRQD", 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, model.num_users());
  detail::put_le<std::uint64_t>(out, model.num_items());
  detail::put_le<std::uint64_t>(out, model.dim());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.backbone));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers));
  out.write(reinterpret_cast<const char*>(model.user_emb.data()),
            static_cast<std::streamsize>(model.user_emb.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(model.item_emb.data()),
            static_cast<std::streamsize>(model.item_emb.size() * sizeof(double)));
}

inline EmbeddingModel load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FRQD", 4) != 0) throw error("not a checkpoint (bad magic)");
  auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw error("unsupported checkpoint version " + std::to_string(version));
  auto nu = detail::get_le<std::uint64_t>(in);
  auto ni = detail::get_le<std::uint64_t>(in);
  auto d = detail::get_le<std::uint64_t>(in);
  auto tag = detail::get_le<std::uint32_t>(in);
  auto layers = detail::get_le<std::uint32_t>(in);
  if (tag > 1) throw error("unknown backbone tag " + std::to_string(tag));
  EmbeddingModel m;
  m.backbone = static_cast<Backbone>(tag);
  m.layers = layers;
  m.user_emb.resize(static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(d));
  m.item_emb.resize(static_cast<Eigen::Index>(ni), static_cast<Eigen::Index>(d));
  in.read(reinterpret_cast<char*>(m.user_emb.data()), static_cast<std::streamsize>(m.user_emb.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(m.item_emb.data()), static_cast<std::streamsize>(m.item_emb.size() * sizeof(double)));
  if (!in) throw error("truncated checkpoint");
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path.string());
  save_checkpoint(out, model);
}

inline EmbeddingModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace freqd
