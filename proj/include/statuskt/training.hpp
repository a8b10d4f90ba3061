#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <vector>

#include "statuskt/autodiff.hpp"
#include "statuskt/dataset.hpp"
#include "statuskt/models.hpp"
#include "statuskt/util/parallel.hpp"

namespace statuskt {

// ---------------------------------------------------------------------------
// Composite loss
// ---------------------------------------------------------------------------

template <typename T>
struct CompositeLoss {
  ad::Tensor<T> total;
  ad::MaskedLoss<T> correctness;
  std::array<ad::MaskedLoss<T>, kNumDimensions> proficiency;  // unset when alpha == 0 or no mp_pred
};

/// L = BCE(r_gt, r_pred) + alpha * sum over CU, SC, PF, AR of masked MSE.
/// BCE covers valid positions; each strand's MSE covers positions where both
/// valid_mask and that strand's mp_mask are set. With alpha == 0 (or no MP
/// predictions) the result is the BCE tensor itself.
///
/// Shapes: r_* and valid_mask [B, L]; mp_* and mp_mask [B, L, 4]. Targets and
/// masks are constants.
template <typename T>
CompositeLoss<T> composite_loss(const ad::Tensor<T>& r_gt, const ad::Tensor<T>& r_pred, const ad::Tensor<T>& mp_gt,
                                const ad::Tensor<T>& mp_pred, const ad::Tensor<T>& mp_mask,
                                const ad::Tensor<T>& valid_mask, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  CompositeLoss<T> out;
  out.correctness = ad::bce(r_gt, r_pred, valid_mask);
  out.total = out.correctness.value;
  if (alpha == 0.0 || !mp_pred.defined()) return out;

  if (mp_pred.shape() != mp_gt.shape() || mp_mask.shape() != mp_gt.shape())
    ad::detail::shape_mismatch("composite_loss", mp_pred.shape(), mp_gt.shape());
  const std::size_t rows = valid_mask.size();
  if (mp_gt.size() != rows * kNumDimensions)
    ad::detail::shape_mismatch("composite_loss", mp_gt.shape(), valid_mask.shape());

  ad::Shape column = valid_mask.shape();
  column.push_back(1);
  std::optional<ad::Tensor<T>> mse_sum;
  for (std::size_t d = 0; d < kNumDimensions; ++d) {
    std::vector<T> target(rows), mask(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      target[r] = mp_gt[r * kNumDimensions + d];
      mask[r] = (valid_mask[r] != T(0) && mp_mask[r * kNumDimensions + d] != T(0)) ? T(1) : T(0);
    }
    out.proficiency[d] = ad::masked_mse(ad::Tensor<T>::from(column, std::move(target)), ad::slice(mp_pred, d, d + 1),
                                        ad::Tensor<T>::from(column, std::move(mask)));
    mse_sum = mse_sum ? add(*mse_sum, out.proficiency[d].value) : out.proficiency[d].value;
  }
  out.total = add(out.total, ad::scale(*mse_sum, T(alpha)));
  return out;
}

/// composite_loss with targets and masks taken from a batch.
template <typename T>
CompositeLoss<T> batch_loss(const Predictions<T>& pred, const Batch& batch, double alpha) {
  const ad::Shape bl{batch.num_sequences, batch.max_len};
  const ad::Shape blm{batch.num_sequences, batch.max_len, kNumDimensions};
  auto to_t = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };
  return composite_loss(ad::Tensor<T>::from(bl, to_t(batch.targets_correct)), pred.r_pred,
                        ad::Tensor<T>::from(blm, to_t(batch.targets_mp)), pred.mp_pred,
                        ad::Tensor<T>::from(blm, to_t(batch.target_mp_mask)),
                        ad::Tensor<T>::from(bl, to_t(batch.valid_mask)), alpha);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Area under the ROC curve as the Mann-Whitney statistic with mid-ranks for
/// ties: P(score_pos > score_neg) + P(tie) / 2. Empty when only one class occurs.
inline std::optional<double> auc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw ShapeError("auc: labels and scores differ in length");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share the mid-rank.
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        positive_rank_sum += mid;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

/// Fraction of positions where (score >= threshold) equals the label.
inline double acc(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5) {
  if (labels.size() != scores.size()) throw ShapeError("acc: labels and scores differ in length");
  if (labels.empty()) throw ShapeError("acc: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += ((scores[i] >= threshold ? 1 : 0) == labels[i]);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct Metrics {
  double auc = 0.5;  // 0.5 when undefined
  bool auc_defined = false;
  double acc = 0.0;
  std::size_t n_predictions = 0;
  std::optional<std::array<double, kNumDimensions>> mp_mse;
};

/// Scores every supervised position of `batches` in eval mode.
template <typename T>
Metrics evaluate(KTModel<T>& model, const std::vector<Batch>& batches) {
  std::vector<int> labels;
  std::vector<double> scores;
  std::array<double, kNumDimensions> se{}, cnt{};
  bool has_mp = false;
  for (const auto& b : batches) {
    auto pred = model.forward(b);
    for (std::size_t i = 0; i < b.positions(); ++i) {
      if (b.valid_mask[i] == 0.0) continue;
      labels.push_back(b.targets_correct[i] != 0.0 ? 1 : 0);
      scores.push_back(static_cast<double>(pred.r_pred[i]));
      if (!pred.mp_pred.defined()) continue;
      has_mp = true;
      for (std::size_t d = 0; d < kNumDimensions; ++d) {
        if (b.target_mp_mask[i * kNumDimensions + d] == 0.0) continue;
        const double r = b.targets_mp[i * kNumDimensions + d] - static_cast<double>(pred.mp_pred[i * kNumDimensions + d]);
        se[d] += r * r;
        cnt[d] += 1.0;
      }
    }
  }
  Metrics m;
  m.n_predictions = labels.size();
  if (labels.empty()) return m;
  if (auto a = auc(labels, scores)) {
    m.auc = *a;
    m.auc_defined = true;
  }
  m.acc = acc(labels, scores);
  if (has_mp) {
    std::array<double, kNumDimensions> mse{};
    for (std::size_t d = 0; d < kNumDimensions; ++d) mse[d] = cnt[d] > 0 ? se[d] / cnt[d] : 0.0;
    m.mp_mse = mse;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double alpha = 0.5;
  double lr = 1e-3;
  std::vector<double> lr_grid{5e-3, 1e-3, 5e-4, 1e-4};
  std::vector<double> dropout_grid{0.5, 0.3, 0.1, 0.05};
  std::vector<double> alpha_grid{};  // empty: alpha is fixed
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t max_len = 200;
  std::uint64_t seed = 42;
  std::size_t grid_workers = 1;

  void validate() const {
    if (lr_grid.empty() || dropout_grid.empty()) throw ConfigError("hyperparameter grids must be non-empty");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (batch_size < 1 || max_epochs < 1) throw ConfigError("batch_size and max_epochs must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  }
};

/// Stops once the monitored metric has not improved (strictly) for `patience`
/// consecutive epochs after the best one.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records the metric of `epoch` (1-based); returns true when it is a new best.
  bool update(std::size_t epoch, double metric) {
    if (best_epoch_ == 0 || metric > best_) {
      best_ = metric;
      best_epoch_ = epoch;
      return true;
    }
    return false;
  }

  bool should_stop(std::size_t epoch) const { return best_epoch_ > 0 && epoch >= best_epoch_ + patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.5;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Metrics best_val;
  std::size_t epochs_trained = 0;
};

namespace detail {

inline std::string describe_batch(const Batch& b, double loss) {
  std::ostringstream os;
  os << "non-finite loss " << loss << " on batch of " << b.num_sequences << " sequences x " << b.max_len
     << " steps (" << b.supervised() << " supervised); question ids of first row:";
  for (std::size_t t = 0; t < b.max_len && t < 20; ++t) os << ' ' << b.question_ids[t];
  return os.str();
}

}  // namespace detail

/// Adam on the composite loss with per-epoch shuffling, validation AUC after
/// every epoch and early stopping. On return the model holds the parameters of
/// the best validation epoch. Test data is not an argument.
template <typename T>
TrainResult train(KTModel<T>& model, const std::vector<Window>& train_windows, const std::vector<Batch>& val_batches,
                  const TrainConfig& config) {
  config.validate();
  const std::size_t max_len = model.config().max_len;
  Rng shuffle_rng(sub_seed(config.seed, "shuffle"));
  Rng dropout_rng(sub_seed(config.seed, "dropout"));
  auto& params = model.parameters();
  ad::Adam<T> adam(params.tensors(), {.lr = config.lr});
  EarlyStopping stopper(config.patience);
  TrainResult result;
  auto best = params.snapshot();
  std::vector<Window> windows = train_windows;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(windows);
    const auto batches = batches_from_windows(windows, max_len, config.batch_size);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (const auto& b : batches) {
      if (b.supervised() == 0) continue;
      auto pred = model.forward(b, ForwardContext::train(dropout_rng));
      auto loss = batch_loss(pred, b, config.alpha);
      const double value = static_cast<double>(loss.total.item());
      if (!std::isfinite(value)) throw TrainingError(detail::describe_batch(b, value));
      loss.total.backward();
      adam.step();
      adam.zero_grad();
      loss_sum += value;
      ++loss_batches;
    }
    const Metrics val = evaluate(model, val_batches);
    result.history.push_back({epoch, loss_batches ? loss_sum / double(loss_batches) : 0.0, val.auc, val.acc});
    result.epochs_trained = epoch;
    if (stopper.update(epoch, val.auc)) {
      best = params.snapshot();
      result.best_val = val;
    }
    if (stopper.should_stop(epoch)) break;
  }
  result.best_epoch = stopper.best_epoch();
  params.restore(best);
  return result;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridCell {
  double lr = 0.0;
  double dropout = 0.0;
  double alpha = 0.0;
  double val_auc = 0.5;
  double val_acc = 0.0;
  std::size_t epochs_trained = 0;
  std::size_t best_epoch = 0;
};

template <typename T>
struct GridResult {
  std::vector<GridCell> cells;  // lr-major enumeration order
  std::size_t best_index = 0;
  std::unique_ptr<KTModel<T>> best_model;  // holds its best-epoch parameters
  TrainResult best_run;
};

/// Builds a fresh model for a given dropout rate.
template <typename T>
using ModelFactory = std::function<std::unique_ptr<KTModel<T>>(double dropout)>;

/// Trains one model per (lr, dropout[, alpha]) cell and keeps the one with the
/// highest validation AUC; ties go to the earlier cell. Cells are independent
/// and run on up to `grid_workers` threads.
template <typename T>
GridResult<T> grid_search(const ModelFactory<T>& factory, const std::vector<Window>& train_windows,
                          const std::vector<Batch>& val_batches, const TrainConfig& config) {
  config.validate();
  const std::vector<double> alphas = config.alpha_grid.empty() ? std::vector<double>{config.alpha} : config.alpha_grid;
  GridResult<T> out;
  for (double lr : config.lr_grid)
    for (double dropout : config.dropout_grid)
      for (double alpha : alphas) out.cells.push_back({lr, dropout, alpha});

  std::vector<std::unique_ptr<KTModel<T>>> models(out.cells.size());
  std::vector<TrainResult> runs(out.cells.size());
  std::vector<std::exception_ptr> errors(out.cells.size());
  std::mutex keep_mutex;
  std::size_t best = 0;
  double best_auc = -1.0;

  auto run_cell = [&](std::size_t i) {
    try {
      auto cell_config = config;
      cell_config.lr = out.cells[i].lr;
      cell_config.alpha = out.cells[i].alpha;
      auto model = factory(out.cells[i].dropout);
      auto run = train(*model, train_windows, val_batches, cell_config);
      auto& cell = out.cells[i];
      cell.val_auc = run.best_val.auc;
      cell.val_acc = run.best_val.acc;
      cell.epochs_trained = run.epochs_trained;
      cell.best_epoch = run.best_epoch;
      std::lock_guard lock(keep_mutex);
      // Keep only the current leader's model alive.
      if (cell.val_auc > best_auc || (cell.val_auc == best_auc && i < best)) {
        if (best_auc >= 0.0) models[best].reset();
        best = i;
        best_auc = cell.val_auc;
        models[i] = std::move(model);
        runs[i] = std::move(run);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  parallel_for(out.cells.size(), config.grid_workers, run_cell);
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  out.best_index = best;
  out.best_model = std::move(models[best]);
  out.best_run = std::move(runs[best]);
  return out;
}

}  // namespace statuskt
