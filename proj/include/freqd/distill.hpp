#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "freqd/common.hpp"
#include "freqd/data.hpp"
#include "freqd/evalkit.hpp"
#include "freqd/graph.hpp"
#include "freqd/recmodels.hpp"
#include "freqd/spectral.hpp"

namespace freqd {

/// Linear map from student to teacher dimensionality (no bias).
struct Projector {
  Matrix weight;  // d_student x d_teacher

  static Projector random(index_t d_student, index_t d_teacher, std::mt19937_64& rng, double stddev = 0.01) {
    std::normal_distribution<double> normal(0.0, stddev);
    Projector p{Matrix(static_cast<Eigen::Index>(d_student), static_cast<Eigen::Index>(d_teacher))};
    for (Eigen::Index k = 0; k < p.weight.size(); ++k) p.weight.data()[k] = normal(rng);
    return p;
  }

  static Projector identity(index_t d) {
    return {Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
  }

  /// Least-squares fit of s * W ~= t.
  static Projector fit(const Matrix& s, const Matrix& t) {
    require_dims(s.rows() == t.rows(), "student and teacher row counts differ");
    return {s.colPivHouseholderQr().solve(t)};
  }
};

inline Matrix project(const Projector& proj, const Matrix& s) {
  require_dims(s.cols() == proj.weight.rows(), "student dim " + std::to_string(s.cols()) + " != projector input " +
                                                    std::to_string(proj.weight.rows()));
  return s * proj.weight;
}

/// Row subset a distillation loss is restricted to; `all` covers every row.
struct RowSet {
  bool all = true;
  std::vector<index_t> rows;

  static RowSet everything() { return {}; }
  static RowSet of(std::vector<index_t> r) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    return {false, std::move(r)};
  }
};

namespace detail {

/// Zeroes every row of `d` outside `rows`.
inline Matrix restrict_rows(const Matrix& d, const RowSet& rows) {
  if (rows.all) return d;
  Matrix out = Matrix::Zero(d.rows(), d.cols());
  for (index_t r : rows.rows) {
    if (r >= static_cast<index_t>(d.rows())) throw index_out_of_range("row " + std::to_string(r));
    out.row(static_cast<Eigen::Index>(r)) = d.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

}  // namespace detail

/// ||(Proj(S) - T)[rows]||_F^2.
inline double fitnet_loss(const Matrix& s, const Matrix& t, const Projector& proj, const RowSet& rows = {}) {
  Matrix p = project(proj, s);
  require_dims(p.rows() == t.rows() && p.cols() == t.cols(), "projected student shape != teacher shape");
  return detail::restrict_rows(p - t, rows).squaredNorm();
}

/// ||(H Proj(S) - H T)[rows]||_F^2 with H applied to the full matrices.
inline double freqd_loss(const Matrix& s, const Matrix& t, const Projector& proj, const GraphFilter& filter,
                         const Laplacian& lap, const RowSet& rows = {}) {
  Matrix p = project(proj, s);
  require_dims(p.rows() == t.rows() && p.cols() == t.cols(), "projected student shape != teacher shape");
  return detail::restrict_rows(apply_filter(filter, lap, p) - apply_filter(filter, lap, t), rows).squaredNorm();
}

struct FeatureGradient {
  double loss = 0.0;
  Matrix student;    // same shape as S
  Matrix projector;  // same shape as the projector weight
};

/// A symmetric linear operator on node features: nothing (plain feature
/// matching), a sparse polynomial filter, or a dense spectral operator.
class FeatureOperator {
 public:
  static FeatureOperator none() { return FeatureOperator(); }

  static FeatureOperator polynomial(GraphFilter filter, Laplacian lap) {
    FeatureOperator op;
    op.kind_ = Kind::Polynomial;
    op.filter_ = std::move(filter);
    op.lap_ = std::move(lap);
    return op;
  }

  static FeatureOperator dense(Matrix op_matrix) {
    FeatureOperator f;
    f.kind_ = Kind::Dense;
    f.dense_ = std::move(op_matrix);
    return f;
  }

  Matrix apply(const Matrix& x) const {
    switch (kind_) {
      case Kind::None: return x;
      case Kind::Polynomial: return apply_filter(*filter_, lap_, x);
      case Kind::Dense:
        require_dims(dense_.cols() == x.rows(), "dense operator shape mismatch");
        return dense_ * x;
    }
    return x;
  }

  bool is_dense() const noexcept { return kind_ == Kind::Dense; }
  const Matrix& dense_matrix() const noexcept { return dense_; }

 private:
  enum class Kind { None, Polynomial, Dense };
  Kind kind_ = Kind::None;
  std::optional<GraphFilter> filter_;
  Laplacian lap_;
  Matrix dense_;
};

namespace detail {

// Dense operator with a row subset: only the selected rows of M are needed,
// and M^T = M turns the backward product into M[:, rows].
inline FeatureGradient dense_rows_gradient(const Matrix& s, const Matrix& p, const Matrix& filtered_teacher,
                                           const Projector& proj, const FeatureOperator& op, const RowSet& rows) {
  const Matrix& m = op.dense_matrix();
  require_dims(m.cols() == p.rows(), "dense operator shape mismatch");
  const auto r = static_cast<Eigen::Index>(rows.rows.size());
  Matrix m_rows(r, m.cols()), t_rows(r, filtered_teacher.cols());
  for (Eigen::Index k = 0; k < r; ++k) {
    auto idx = static_cast<Eigen::Index>(rows.rows[static_cast<std::size_t>(k)]);
    if (idx >= m.rows()) throw index_out_of_range("row " + std::to_string(idx));
    m_rows.row(k) = m.row(idx);
    t_rows.row(k) = filtered_teacher.row(idx);
  }
  Matrix residual = m_rows * p - t_rows;
  FeatureGradient g;
  g.loss = residual.squaredNorm();
  Matrix dp = m_rows.transpose() * (2.0 * residual);
  g.student = dp * proj.weight.transpose();
  g.projector = s.transpose() * dp;
  return g;
}

}  // namespace detail

/// Loss and gradients of ||(H Proj(S) - H_T)[rows]||^2 where H_T = H T is
/// precomputed. H is symmetric, so dL/dP = 2 H R with R the row-restricted
/// residual; dL/dS = (dL/dP) W^T and dL/dW = S^T (dL/dP).
inline FeatureGradient feature_gradient(const Matrix& s, const Matrix& filtered_teacher, const Projector& proj,
                                        const FeatureOperator& op, const RowSet& rows) {
  Matrix p = project(proj, s);
  require_dims(p.rows() == filtered_teacher.rows() && p.cols() == filtered_teacher.cols(),
               "projected student shape != teacher shape");
  if (op.is_dense() && !rows.all) return detail::dense_rows_gradient(s, p, filtered_teacher, proj, op, rows);
  Matrix residual = detail::restrict_rows(op.apply(p) - filtered_teacher, rows);
  FeatureGradient g;
  g.loss = residual.squaredNorm();
  Matrix dp = op.apply(2.0 * residual);
  g.student = dp * proj.weight.transpose();
  g.projector = s.transpose() * dp;
  return g;
}

/// Analytic gradient of freqd_loss w.r.t. S and the projector weight.
inline FeatureGradient freqd_gradient(const Matrix& s, const Matrix& t, const Projector& proj,
                                      const GraphFilter& filter, const Laplacian& lap, const RowSet& rows = {}) {
  auto op = FeatureOperator::polynomial(filter, lap);
  return feature_gradient(s, op.apply(t), proj, op, rows);
}

inline FeatureGradient fitnet_gradient(const Matrix& s, const Matrix& t, const Projector& proj,
                                       const RowSet& rows = {}) {
  return feature_gradient(s, t, proj, FeatureOperator::none(), rows);
}

/// Per-group weights for the four knowledge groups (low to high frequency).
struct WeightScheme {
  std::array<double, 4> group_weights{1.0, 1.0, 1.0, 1.0};

  static WeightScheme original() { return {{1.0, 1.0, 1.0, 1.0}}; }
  static WeightScheme low_frequency_enhanced() { return {{1.0, 0.75, 0.5, 0.25}}; }
  static WeightScheme high_frequency_enhanced() { return {{0.25, 0.5, 0.75, 1.0}}; }
  /// Original weights with group `g` (0-based) removed.
  static WeightScheme without_group(int g) {
    WeightScheme w = original();
    w.group_weights.at(static_cast<std::size_t>(g)) = 0.0;
    return w;
  }
};

enum class DistillMethod {
  None,             // plain BPR training
  FitNet,           // unfiltered feature matching
  FreqD,            // polynomial graph filter on both feature sets
  SpectralWeights,  // explicit per-group weights through the eigenbasis
};

enum class GraphSource { TeacherKNN, Bipartite };
enum class LossScope { Batch, Full };

struct DistillConfig {
  DistillMethod method = DistillMethod::FreqD;
  double beta = 0.1;
  GraphFilter filter = GraphFilter::linear(0.45);
  WeightScheme scheme = WeightScheme::original();
  GraphSource graph_source = GraphSource::TeacherKNN;
  std::size_t knn_k = 10;
  double dropout_rate = 0.1;
  LossScope loss_scope = LossScope::Batch;
  /// Scale the feature term by 1/|B| so that it sits on the same per-triple
  /// footing as the mean BPR loss; set false for raw sums.
  bool per_triple_scale = true;
  std::size_t batch_size = 1024;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  std::size_t negatives = 1;
  index_t spectral_cap = kDefaultSpectralCap;
};

struct EpochLog {
  std::size_t epoch = 0;
  double base_loss = 0.0;
  double feature_loss = 0.0;
  double val_recall20 = 0.0;
  double val_ndcg20 = 0.0;
};

inline void write_log_header(std::ostream& out) { out << "epoch,base_loss,freqd_loss,val_recall@20,val_ndcg@20\n"; }

inline void write_log_row(std::ostream& out, const EpochLog& e) {
  out.precision(10);
  out << e.epoch << ',' << e.base_loss << ',' << e.feature_loss << ',' << e.val_recall20 << ',' << e.val_ndcg20
      << '\n';
  out.flush();
}

struct TrainResult {
  EmbeddingModel model;                 // best-validation student
  std::vector<Projector> projectors;    // [user, item] at the best epoch (distillation only)
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_ndcg20 = 0.0;
  std::size_t epochs_run = 0;
};

/// Graphs the distillation loss is defined on: one per entity type for
/// TeacherKNN, or a single user+item graph for Bipartite.
struct DistillGraphs {
  std::vector<SparseGraph> graphs;
  std::vector<std::vector<int>> entities;  // entity 0 = users, 1 = items
};

inline DistillGraphs build_distill_graphs(const Representations& teacher, const InteractionSet& train,
                                          GraphSource source, std::size_t k) {
  DistillGraphs g;
  if (source == GraphSource::TeacherKNN) {
    g.graphs.push_back(build_knn_graph(teacher.users, k, GraphKind::UserKNN));
    g.graphs.push_back(build_knn_graph(teacher.items, k, GraphKind::ItemKNN));
    g.entities = {{0}, {1}};
  } else {
    g.graphs.push_back(build_bipartite_graph(train));
    g.entities = {{0, 1}};
  }
  return g;
}

namespace detail {

inline Matrix stack_entities(const std::vector<int>& entities, const Matrix& users, const Matrix& items) {
  if (entities.size() == 1) return entities[0] == 0 ? users : items;
  Matrix out(users.rows() + items.rows(), users.cols());
  out.topRows(users.rows()) = users;
  out.bottomRows(items.rows()) = items;
  return out;
}

/// One feature-distillation term: the operator, the filtered teacher and the
/// entity blocks it covers.
struct FeatureTerm {
  std::vector<int> entities;
  FeatureOperator op;
  Matrix filtered_teacher;
};

inline FeatureOperator make_operator(const DistillConfig& cfg, const SparseGraph& graph, std::uint64_t dropout_seed,
                                     const std::optional<SpectralDecomposition>& dec) {
  switch (cfg.method) {
    case DistillMethod::FitNet: return FeatureOperator::none();
    case DistillMethod::FreqD: {
      SparseGraph g = cfg.dropout_rate > 0 ? edge_dropout(graph, cfg.dropout_rate, dropout_seed) : graph;
      return FeatureOperator::polynomial(cfg.filter, normalized_laplacian(g));
    }
    case DistillMethod::SpectralWeights: {
      auto w = broadcast_group_weights(cfg.scheme.group_weights, dec->size());
      for (double& v : w) v = std::sqrt(v);
      return FeatureOperator::dense(spectral_operator(*dec, w));
    }
    case DistillMethod::None: break;
  }
  return FeatureOperator::none();
}

}  // namespace detail

/// Child seeds drawn in a fixed order from one generator seeded per run.
struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t sampling = 0;
  std::uint64_t dropout = 0;
  std::uint64_t projector = 0;

  static RunSeeds derive(std::uint64_t seed) {
    std::mt19937_64 root(seed);
    RunSeeds s;
    s.init = root();
    s.sampling = root();
    s.dropout = root();
    s.projector = root();
    return s;
  }
};

/// BPR training with optional feature distillation from a frozen teacher.
///
/// Per epoch: rebuild the feature operator (fresh edge dropout for FreqD),
/// filter the teacher features once, sample one negative per training
/// interaction, then take one Adam step per batch on
///   mean BPR loss + beta * sum over graphs of ||(H Proj(S) - H T)[rows]||^2
/// where rows are the batch's users and items (or all rows for LossScope::Full).
/// Stops when validation NDCG@20 has not improved for `patience` epochs and
/// returns the best-validation student.
///
/// All randomness derives from `seed` in a fixed order (initialisation,
/// sampling, dropout, projector), so runs that differ only in the
/// distillation term share the same student initialisation and sample stream.
inline TrainResult distill_train(const EmbeddingModel* teacher, EmbeddingModel student, const SplitDataset& split,
                                 const DistillConfig& cfg, std::uint64_t seed, std::ostream* log_out = nullptr) {
  if (!(cfg.lr > 0)) throw invalid_argument("learning rate must be positive");
  if (cfg.batch_size < 1) throw invalid_argument("batch size must be >= 1");
  if (cfg.patience < 1) throw invalid_argument("patience must be >= 1");
  if (!(cfg.beta >= 0)) throw invalid_argument("beta must be nonnegative");
  const bool distill = cfg.method != DistillMethod::None;
  if (distill && teacher == nullptr) throw invalid_argument("distillation needs a teacher");

  const auto seeds = RunSeeds::derive(seed);
  std::mt19937_64 sample_rng(seeds.sampling), dropout_rng(seeds.dropout), projector_rng(seeds.projector);

  student.attach_interactions(split.train);
  ModelOptimizer opt;

  Representations teacher_reps;
  DistillGraphs graphs;
  std::vector<std::optional<SpectralDecomposition>> spectra;
  std::vector<Projector> projectors;
  std::vector<AdamSlot> projector_slots(2);
  if (distill) {
    EmbeddingModel t = *teacher;
    t.attach_interactions(split.train);
    teacher_reps = forward(t);
    require_dims(teacher_reps.users.rows() == student.user_emb.rows() &&
                     teacher_reps.items.rows() == student.item_emb.rows(),
                 "teacher and student cover different users/items");
    projectors.push_back(Projector::random(student.dim(), t.dim(), projector_rng));
    projectors.push_back(Projector::random(student.dim(), t.dim(), projector_rng));
    if (cfg.method != DistillMethod::FitNet) {
      graphs = build_distill_graphs(teacher_reps, split.train, cfg.graph_source, cfg.knn_k);
    } else {
      graphs.graphs.resize(2);
      graphs.entities = {{0}, {1}};
    }
    for (const auto& g : graphs.graphs) {
      if (cfg.method == DistillMethod::SpectralWeights)
        spectra.emplace_back(eigendecompose(normalized_laplacian(g), cfg.spectral_cap));
      else
        spectra.emplace_back(std::nullopt);
    }
  }

  TrainResult result;
  result.model = student;
  result.projectors = projectors;
  EarlyStopper stopper(cfg.patience);
  if (log_out) write_log_header(*log_out);

  const auto nu = student.user_emb.rows();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<detail::FeatureTerm> terms;
    if (distill) {
      for (std::size_t g = 0; g < graphs.graphs.size(); ++g) {
        detail::FeatureTerm term;
        term.entities = graphs.entities[g];
        term.op = detail::make_operator(cfg, graphs.graphs[g], dropout_rng(), spectra[g]);
        term.filtered_teacher =
            term.op.apply(detail::stack_entities(term.entities, teacher_reps.users, teacher_reps.items));
        terms.push_back(std::move(term));
      }
    }

    auto triples = sample_epoch_triples(split.train, sample_rng, cfg.negatives);
    double base_sum = 0.0, feat_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < triples.size(); start += cfg.batch_size) {
      std::span<const TrainTriple> batch(triples.data() + start, std::min(cfg.batch_size, triples.size() - start));
      Representations reps = forward(student);
      Representations grad = zero_like(reps);
      double base = bpr_batch_gradient(reps, batch, grad);
      double feat = 0.0;
      std::vector<Matrix> proj_grads(projectors.size());
      const double weight =
          cfg.per_triple_scale ? cfg.beta / static_cast<double>(batch.size()) : cfg.beta;

      if (distill) {
        std::vector<index_t> batch_users, batch_items;
        for (const auto& t : batch) {
          batch_users.push_back(t.user);
          batch_items.push_back(t.pos_item);
          batch_items.push_back(t.neg_item);
        }
        for (auto& term : terms) {
          // Student features for the covered entities, each projected by its own projector.
          RowSet rows;
          FeatureGradient fg;
          if (term.entities.size() == 1) {
            const int e = term.entities[0];
            if (cfg.loss_scope == LossScope::Batch) rows = RowSet::of(e == 0 ? batch_users : batch_items);
            fg = feature_gradient(e == 0 ? reps.users : reps.items, term.filtered_teacher,
                                  projectors[static_cast<std::size_t>(e)], term.op, rows);
            feat += fg.loss;
            if (cfg.beta != 0.0) {
              (e == 0 ? grad.users : grad.items) += weight * fg.student;
              proj_grads[static_cast<std::size_t>(e)] = weight * fg.projector;
            }
          } else {
            // Bipartite: both blocks share one operator, each keeps its projector.
            Matrix proj_all(reps.users.rows() + reps.items.rows(), projectors[0].weight.cols());
            proj_all.topRows(nu) = project(projectors[0], reps.users);
            proj_all.bottomRows(reps.items.rows()) = project(projectors[1], reps.items);
            if (cfg.loss_scope == LossScope::Batch) {
              std::vector<index_t> r = batch_users;
              for (index_t i : batch_items) r.push_back(static_cast<index_t>(nu) + i);
              rows = RowSet::of(std::move(r));
            }
            Matrix residual = detail::restrict_rows(term.op.apply(proj_all) - term.filtered_teacher, rows);
            feat += residual.squaredNorm();
            if (cfg.beta != 0.0) {
              Matrix dp = term.op.apply(2.0 * residual);
              grad.users += weight * dp.topRows(nu) * projectors[0].weight.transpose();
              grad.items += weight * dp.bottomRows(reps.items.rows()) * projectors[1].weight.transpose();
              proj_grads[0] = weight * reps.users.transpose() * dp.topRows(nu);
              proj_grads[1] = weight * reps.items.transpose() * dp.bottomRows(reps.items.rows());
            }
          }
        }
      }

      if (!std::isfinite(base) || !std::isfinite(feat))
        throw non_finite_loss("non-finite loss at epoch " + std::to_string(epoch) + " (base=" +
                              std::to_string(base) + ", feature=" + std::to_string(feat) + ")");
      opt.adam.tick();
      apply_gradient(student, opt, grad, cfg.lr, cfg.weight_decay);
      for (std::size_t e = 0; e < projectors.size(); ++e)
        if (proj_grads[e].size() != 0)
          opt.adam.update(projectors[e].weight, projector_slots[e], proj_grads[e], cfg.lr, cfg.weight_decay);
      base_sum += base;
      feat_sum += feat;
      ++batches;
    }

    auto metrics = evaluate(student, split, {20}, EvalTarget::Validation);
    EpochLog row{epoch, batches ? base_sum / static_cast<double>(batches) : 0.0,
                 batches ? feat_sum / static_cast<double>(batches) : 0.0, metrics.recall.at(20), metrics.ndcg.at(20)};
    result.log.push_back(row);
    if (log_out) write_log_row(*log_out, row);
    result.epochs_run = epoch;
    if (stopper.update(row.val_ndcg20, epoch)) {
      result.model = student;
      result.projectors = projectors;
      result.best_epoch = epoch;
      result.best_val_ndcg20 = row.val_ndcg20;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

/// Plain BPR training (no teacher); identical to distill_train with
/// DistillMethod::None.
inline TrainResult train_model(EmbeddingModel model, const SplitDataset& split, DistillConfig cfg, std::uint64_t seed,
                               std::ostream* log_out = nullptr) {
  cfg.method = DistillMethod::None;
  return distill_train(nullptr, std::move(model), split, cfg, seed, log_out);
}

/// Fresh model initialised from the run's `init` seed.
inline EmbeddingModel init_student(index_t num_users, index_t num_items, index_t dim, std::uint64_t seed,
                                   Backbone backbone = Backbone::BPRMF, std::size_t layers = 0) {
  std::mt19937_64 rng(RunSeeds::derive(seed).init);
  return EmbeddingModel::random(num_users, num_items, dim, rng, backbone, layers);
}

/// Group ablation: explicit per-group weights through the eigenbasis of the
/// distillation graphs (desk-scale only; throws too_large beyond the cap).
inline TrainResult group_ablation_train(const EmbeddingModel& teacher, EmbeddingModel student,
                                        const SplitDataset& split, DistillConfig cfg, const WeightScheme& scheme,
                                        std::uint64_t seed, std::ostream* log_out = nullptr) {
  cfg.method = DistillMethod::SpectralWeights;
  cfg.scheme = scheme;
  return distill_train(&teacher, std::move(student), split, cfg, seed, log_out);
}

/// Per-group distillation losses L_S1..L_S4 of one entity graph.
struct GroupSpectrum {
  std::array<double, 4> groups{};
  double total = 0.0;
};

inline GroupSpectrum group_spectrum(const Matrix& s_proj, const Matrix& t, const SparseGraph& graph,
                                    index_t cap = kDefaultSpectralCap) {
  auto dec = eigendecompose(normalized_laplacian(graph), cap);
  auto per_k = per_frequency_losses(s_proj, t, dec);
  GroupSpectrum out;
  out.groups = group_losses(per_k, KnowledgeGroups::for_size(dec.size()));
  out.total = (s_proj - t).squaredNorm();
  return out;
}

}  // namespace freqd
