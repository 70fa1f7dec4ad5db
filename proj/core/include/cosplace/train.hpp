#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosplace/embed.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/loss.hpp"
#include "cosplace/partition.hpp"

namespace cosplace {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;  // number of updates applied so far

  AdamMoments() = default;
  explicit AdamMoments(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

/// One bias-corrected Adam update at step t (t >= 1). Throws kNonFinite naming
/// `name` when a gradient entry is not finite, kDimension on size mismatch.
void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
               std::int64_t t, const AdamConfig& cfg, std::string_view name = "param");

struct TrainConfig {
  int groups_used = 8;
  int iterations_per_epoch = 10000;
  int total_epochs = 50;
  int batch_size = 32;
  AdamConfig adam;
  LossConfig loss;
  std::uint64_t seed = 0;
  double val_threshold_m = 25.0;
  int threads = 1;
  bool deterministic = true;

  void validate() const;
};

struct BatchItem {
  std::string image_id;
  int label = 0;  // class index inside the group

  friend bool operator==(const BatchItem&, const BatchItem&) = default;
};

/// Class-uniform sampling with replacement, then one member image uniformly.
/// Throws kEmptyGroup when the group has fewer than 2 classes.
std::vector<BatchItem> sample_batch(const Partition& partition, const GroupId& group,
                                    int batch_size, std::mt19937_64& rng);

/// Groups the trainer cycles over: the first G in enumeration order. Throws
/// kInvalidConfig when G exceeds N*N*L and kEmptyGroup when one of them has
/// fewer than two classes.
std::vector<GroupId> select_training_groups(const Partition& partition, int groups_used);

struct EpochRecord {
  int epoch = 0;
  GroupId group;
  double mean_loss = 0.0;
  double val_recall1 = 0.0;
  double val_recall5 = 0.0;
  double val_recall10 = 0.0;
  double val_recall20 = 0.0;
  std::vector<double> iteration_losses;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Counts descriptors alive in the optimization path.
class ResidentDescriptorTracker {
 public:
  class Lease {
   public:
    Lease(ResidentDescriptorTracker& t, std::size_t n) : tracker_(t), n_(n) { tracker_.acquire(n_); }
    ~Lease() { tracker_.release(n_); }
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;

   private:
    ResidentDescriptorTracker& tracker_;
    std::size_t n_;
  };

  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  void reset_peak(std::size_t peak) { peak_ = peak; }

 private:
  void acquire(std::size_t n) {
    live_ += n;
    peak_ = std::max(peak_, live_);
  }
  void release(std::size_t n) { live_ -= n; }

  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

struct TrainState {
  EmbeddingModel model;
  std::vector<GroupId> groups;         // used groups, in training order
  std::vector<ClassifierHead> heads;   // aligned with groups
  AdamMoments projection_moments;
  AdamMoments bias_moments;
  AdamMoments p_moments;
  std::vector<AdamMoments> head_moments;
  int epochs_completed = 0;
  double best_val_recall1 = -1.0;  // -1 until the first validation pass
  int best_epoch = -1;
  std::optional<EmbeddingModel> best_model;
  std::vector<EpochRecord> history;
  std::size_t peak_resident_descriptors = 0;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct TrainingData {
  const FeatureStore* features = nullptr;
  const Partition* partition = nullptr;
  std::span<const ImageRecord> train_records;  // resolves partition ids to feature keys
  std::span<const ImageRecord> val_database;
  std::span<const ImageRecord> val_queries;
};

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// Sequential training: epoch e uses the (e mod G)-th selected group and its
/// head; each iteration samples a batch, embeds it, applies the margin loss
/// and takes one Adam step on the shared model and the active head only.
/// After every epoch the model is validated by recall@N and the best one is
/// kept. Pass `resume` to continue a saved state. Throws kDivergence on a
/// non-finite loss.
TrainState train_cosplace(const TrainingData& data, const TrainConfig& cfg,
                          const EmbedConfig& embed_cfg,
                          std::optional<TrainState> resume = std::nullopt,
                          const EpochCallback& on_epoch = {});

/// The best validated model, without any classifier head. Throws kState
/// before the first validation pass.
EmbeddingModel export_inference_model(const TrainState& state);

/// Embeds records with their feature maps (parallel, order preserved).
std::vector<Descriptor> embed_records(const EmbeddingModel& model, const FeatureStore& features,
                                      std::span<const ImageRecord> records, int threads = 1);

std::string save_training_state(const TrainState& state, std::string_view metadata = {});
TrainState load_training_state(std::string_view bytes);

/// `epoch,group,mean_loss,val_recall@1,val_recall@5,val_recall@10,val_recall@20`
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history,
                       std::string_view comment = {});

}  // namespace cosplace
