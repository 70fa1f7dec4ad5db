#include "cosplace/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cosplace/binary_io.hpp"
#include "cosplace/error.hpp"
#include "cosplace/parallel.hpp"
#include "cosplace/retrieval.hpp"

namespace cosplace {

void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
               std::int64_t t, const AdamConfig& cfg, std::string_view name) {
  if (params.size() != grads.size() || moments.m.size() != params.size() ||
      moments.v.size() != params.size()) {
    throw Error(ErrorCode::kDimension, "adam: shape mismatch for '" + std::string(name) + "'");
  }
  if (t < 1) throw Error(ErrorCode::kDomain, "adam: step must be >= 1");
  for (double g : grads) {
    if (!std::isfinite(g)) {
      throw Error(ErrorCode::kNonFinite, "adam: non-finite gradient for '" + std::string(name) + "'");
    }
  }
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * grads[i];
    moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = moments.m[i] / bias1;
    const double v_hat = moments.v[i] / bias2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
  moments.step = t;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, "train config: " + what);
  };
  if (groups_used < 1) fail("groups_used must be >= 1");
  if (iterations_per_epoch < 1) fail("iterations_per_epoch must be >= 1");
  if (total_epochs < 1) fail("total_epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(adam.learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    fail("adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) fail("adam eps must be > 0");
  if (!(loss.scale > 0.0) || !(loss.margin >= 0.0)) fail("loss needs scale > 0, margin >= 0");
  if (!(val_threshold_m >= 0.0)) fail("validation threshold must be >= 0");
}

std::vector<BatchItem> sample_batch(const Partition& partition, const GroupId& group,
                                    int batch_size, std::mt19937_64& rng) {
  const auto& classes = partition.classes_in(group);
  if (classes.size() < 2) {
    throw Error(ErrorCode::kEmptyGroup, to_string(group) + " has " +
                                            std::to_string(classes.size()) +
                                            " classes; at least 2 are needed to train");
  }
  std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
  std::vector<BatchItem> batch;
  batch.reserve(static_cast<std::size_t>(std::max(batch_size, 0)));
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t label = pick_class(rng);
    const auto& members = partition.class_members.at(classes[label]);
    std::uniform_int_distribution<std::size_t> pick_member(0, members.size() - 1);
    batch.push_back({members[pick_member(rng)], static_cast<int>(label)});
  }
  return batch;
}

std::vector<GroupId> select_training_groups(const Partition& partition, int groups_used) {
  const auto all = enumerate_groups(partition.config);
  if (groups_used < 1 || static_cast<std::size_t>(groups_used) > all.size()) {
    throw Error(ErrorCode::kInvalidConfig,
                "groups_used=" + std::to_string(groups_used) + " but the partition has " +
                    std::to_string(all.size()) + " groups");
  }
  std::vector<GroupId> used(all.begin(), all.begin() + groups_used);
  for (const GroupId& g : used) {
    if (partition.classes_in(g).size() < 2) {
      throw Error(ErrorCode::kEmptyGroup,
                  to_string(g) + " is among the first " + std::to_string(groups_used) +
                      " groups but has " + std::to_string(partition.classes_in(g).size()) +
                      " classes (need >= 2)");
    }
  }
  return used;
}

std::vector<Descriptor> embed_records(const EmbeddingModel& model, const FeatureStore& features,
                                      std::span<const ImageRecord> records, int threads) {
  std::vector<Descriptor> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    out[i] = forward(model, features.at(records[i].feature_key()));
  });
  return out;
}

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return head_seed(seed ^ 0x5eed5eed5eedULL, GroupId{epoch, 0x7fff, 0x3ff});
}

EvalReport validate_model(const EmbeddingModel& model, const TrainingData& data,
                          const TrainConfig& cfg) {
  const auto db = embed_records(model, *data.features, data.val_database, cfg.threads);
  std::vector<std::string> ids;
  std::vector<GeoPose> poses;
  for (const ImageRecord& r : data.val_database) {
    ids.push_back(r.id);
    poses.push_back(r.pose);
  }
  const DescriptorIndex index = build_index(db, ids, poses, data.val_database.front().zone);
  const auto qd = embed_records(model, *data.features, data.val_queries, cfg.threads);
  std::vector<Query> queries;
  queries.reserve(qd.size());
  for (std::size_t i = 0; i < qd.size(); ++i) {
    queries.push_back({qd[i], data.val_queries[i].pose, data.val_queries[i].zone});
  }
  return recall_at_n(index, queries, kDefaultRecallKs, cfg.val_threshold_m, cfg.threads);
}

TrainState initial_state(const TrainingData& data, const TrainConfig& cfg,
                         const EmbedConfig& embed_cfg, std::vector<GroupId> groups) {
  const FeatureMap& sample = data.features->at(data.train_records.front().feature_key());
  TrainState s;
  s.model = new_embedding_model(sample.channels, embed_cfg, cfg.seed);
  s.groups = std::move(groups);
  for (const GroupId& g : s.groups) {
    s.heads.push_back(new_head(g, static_cast<int>(data.partition->classes_in(g).size()),
                               s.model.output_dim(), head_seed(cfg.seed, g)));
    s.head_moments.emplace_back(static_cast<std::size_t>(s.heads.back().weights.size()));
  }
  s.projection_moments = AdamMoments(static_cast<std::size_t>(s.model.projection.size()));
  s.bias_moments = AdamMoments(static_cast<std::size_t>(s.model.bias.size()));
  s.p_moments = AdamMoments(1);
  return s;
}

// Eigen matrices are column-major; Adam is elementwise, so raw storage order is fine.
std::span<double> flat(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> flat(Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> flat(const Eigen::MatrixXd& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

TrainState train_cosplace(const TrainingData& data, const TrainConfig& cfg,
                          const EmbedConfig& embed_cfg, std::optional<TrainState> resume,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  if (!data.features || !data.partition) {
    throw Error(ErrorCode::kState, "training data needs a feature store and a partition");
  }
  if (data.train_records.empty() || data.val_database.empty() || data.val_queries.empty()) {
    throw Error(ErrorCode::kState, "training needs train, validation-database and query records");
  }
  const Partition& partition = *data.partition;
  auto groups = select_training_groups(partition, cfg.groups_used);

  std::unordered_map<std::string, std::string> feature_key;
  feature_key.reserve(data.train_records.size());
  for (const ImageRecord& r : data.train_records) feature_key.emplace(r.id, r.feature_key());

  TrainState state = resume ? std::move(*resume) : initial_state(data, cfg, embed_cfg, groups);
  if (state.groups != groups || state.heads.size() != groups.size()) {
    throw Error(ErrorCode::kState, "resumed state was trained on different groups");
  }
  EmbeddingModel& model = state.model;

  ResidentDescriptorTracker tracker;
  tracker.reset_peak(state.peak_resident_descriptors);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = state.epochs_completed; epoch < cfg.total_epochs; ++epoch) {
    const std::size_t head_index = static_cast<std::size_t>(epoch) % groups.size();
    const GroupId group = groups[head_index];
    ClassifierHead& head = state.heads[head_index];
    std::mt19937_64 rng(epoch_seed(cfg.seed, epoch));

    EpochRecord record;
    record.epoch = epoch;
    record.group = group;
    record.iteration_losses.reserve(static_cast<std::size_t>(cfg.iterations_per_epoch));

    for (int iter = 0; iter < cfg.iterations_per_epoch; ++iter) {
      const auto items = sample_batch(partition, group, cfg.batch_size, rng);

      ResidentDescriptorTracker::Lease lease(tracker, batch);
      std::vector<ForwardCache> caches(batch);
      parallel_for(batch, cfg.threads, [&](std::size_t i) {
        const auto it = feature_key.find(items[i].image_id);
        if (it == feature_key.end()) {
          throw Error(ErrorCode::kNotFound,
                      "partition member '" + items[i].image_id + "' is not a training record");
        }
        caches[i] = forward_with_cache(model, data.features->at(it->second));
      });
      std::vector<Descriptor> descriptors(batch);
      std::vector<int> labels(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        descriptors[i] = caches[i].descriptor;
        labels[i] = items[i].label;
      }

      const LossGradients lg = lmcl_backward(descriptors, labels, head, cfg.loss);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorCode::kDivergence, "non-finite loss at epoch " + std::to_string(epoch) +
                                                ", iteration " + std::to_string(iter));
      }
      record.iteration_losses.push_back(lg.loss);

      std::vector<ModelGradients> per_item(batch);
      parallel_for(batch, cfg.threads, [&](std::size_t i) {
        per_item[i] = backward(model, caches[i], lg.descriptors[i]);
      });
      // Fixed reduction order keeps results independent of the thread count.
      ModelGradients grads = ModelGradients::zeros_like(model);
      for (const auto& g : per_item) grads += g;

      adam_step(flat(model.projection), flat(grads.projection), state.projection_moments,
                state.projection_moments.step + 1, cfg.adam, "projection");
      if (model.has_bias) {
        adam_step(flat(model.bias), flat(grads.bias), state.bias_moments,
                  state.bias_moments.step + 1, cfg.adam, "bias");
      }
      if (model.learn_p && model.pooling.kind == PoolingKind::kGem) {
        std::array<double, 1> p{model.pooling.p};
        const std::array<double, 1> gp{grads.p};
        adam_step(p, gp, state.p_moments, state.p_moments.step + 1, cfg.adam, "gem_p");
        model.pooling.p = std::max(1.0, p[0]);
      }
      AdamMoments& hm = state.head_moments[head_index];
      adam_step(flat(head.weights), flat(lg.weights), hm, hm.step + 1, cfg.adam,
                "head " + to_string(group));
      head.row_normalized = false;
    }

    double sum = 0.0;
    for (double l : record.iteration_losses) sum += l;
    record.mean_loss = sum / static_cast<double>(record.iteration_losses.size());

    const EvalReport val = validate_model(model, data, cfg);
    record.val_recall1 = val.recall_at(1);
    record.val_recall5 = val.recall_at(5);
    record.val_recall10 = val.recall_at(10);
    record.val_recall20 = val.recall_at(20);
    if (record.val_recall1 > state.best_val_recall1) {
      state.best_val_recall1 = record.val_recall1;
      state.best_epoch = epoch;
      state.best_model = model;
    }
    state.epochs_completed = epoch + 1;
    state.peak_resident_descriptors = tracker.peak();
    state.history.push_back(record);
    if (on_epoch) on_epoch(state.history.back(), state);
  }
  return state;
}

EmbeddingModel export_inference_model(const TrainState& state) {
  if (!state.best_model) {
    throw Error(ErrorCode::kState, "no validated checkpoint yet; run at least one epoch");
  }
  return *state.best_model;
}

namespace {

std::string encode_moments(const AdamMoments& m) {
  io::Writer w;
  w.put(static_cast<std::uint64_t>(m.m.size()));
  w.put(m.step);
  w.put_span(std::span<const double>(m.m));
  w.put_span(std::span<const double>(m.v));
  return std::string(w.view());
}

AdamMoments decode_moments(io::Reader& r) {
  const auto n = static_cast<std::size_t>(r.get<std::uint64_t>());
  AdamMoments m(n);
  m.step = r.get<std::int64_t>();
  r.get_span(std::span<double>(m.m));
  r.get_span(std::span<double>(m.v));
  return m;
}

nlohmann::json history_json(const std::vector<EpochRecord>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : history) {
    out.push_back({{"epoch", h.epoch},
                   {"group", {h.group.u, h.group.v, h.group.w}},
                   {"mean_loss", h.mean_loss},
                   {"val_recall", {h.val_recall1, h.val_recall5, h.val_recall10, h.val_recall20}},
                   {"iteration_losses", h.iteration_losses}});
  }
  return out;
}

}  // namespace

std::string save_training_state(const TrainState& state, std::string_view metadata) {
  io::Container c;
  c.magic = std::string(kCheckpointMagic);
  c.version = kCheckpointVersion;
  io::Writer kind;
  kind.put(kKindTrainingState);
  c.sections.push_back({io::make_tag("KIND"), std::string(kind.view())});
  c.sections.push_back({io::make_tag("MODL"), encode_model_section(state.model)});
  if (state.best_model) {
    c.sections.push_back({io::make_tag("BEST"), encode_model_section(*state.best_model)});
  }
  for (std::size_t i = 0; i < state.heads.size(); ++i) {
    const ClassifierHead& h = state.heads[i];
    io::Writer w;
    w.put(h.group.u);
    w.put(h.group.v);
    w.put(h.group.w);
    w.put(static_cast<std::uint8_t>(h.row_normalized));
    w.put(static_cast<std::uint32_t>(h.weights.rows()));
    w.put(static_cast<std::uint32_t>(h.weights.cols()));
    w.put_span(flat(h.weights));
    w.put_raw(encode_moments(state.head_moments[i]));
    c.sections.push_back({io::make_tag("HEAD"), std::string(w.view())});
  }
  io::Writer adam;
  adam.put_raw(encode_moments(state.projection_moments));
  adam.put_raw(encode_moments(state.bias_moments));
  adam.put_raw(encode_moments(state.p_moments));
  c.sections.push_back({io::make_tag("ADAM"), std::string(adam.view())});
  io::Writer stat;
  stat.put(static_cast<std::int32_t>(state.epochs_completed));
  stat.put(state.best_val_recall1);
  stat.put(static_cast<std::int32_t>(state.best_epoch));
  stat.put(static_cast<std::uint64_t>(state.peak_resident_descriptors));
  c.sections.push_back({io::make_tag("STAT"), std::string(stat.view())});
  c.sections.push_back({io::make_tag("HIST"), history_json(state.history).dump()});
  c.sections.push_back({io::make_tag("META"), std::string(metadata)});
  return io::encode_container(c);
}

TrainState load_training_state(std::string_view bytes) {
  const io::Container c =
      io::decode_container(bytes, kCheckpointMagic, kCheckpointVersion, "training checkpoint");
  io::Reader kind(c.only("KIND").payload, "checkpoint kind");
  if (kind.get<std::uint32_t>() != kKindTrainingState) {
    throw Error(ErrorCode::kParse, "checkpoint is not a training state");
  }
  TrainState s;
  s.model = decode_model_section(c.only("MODL").payload);
  if (c.count("BEST") == 1) s.best_model = decode_model_section(c.only("BEST").payload);
  for (const io::Section* sec : c.all("HEAD")) {
    io::Reader r(sec->payload, "head section");
    ClassifierHead h;
    h.group.u = r.get<std::int32_t>();
    h.group.v = r.get<std::int32_t>();
    h.group.w = r.get<std::int32_t>();
    h.row_normalized = r.get<std::uint8_t>() != 0;
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    h.weights.resize(rows, cols);
    r.get_span(flat(h.weights));
    s.head_moments.push_back(decode_moments(r));
    r.expect_end();
    s.groups.push_back(h.group);
    s.heads.push_back(std::move(h));
  }
  io::Reader adam(c.only("ADAM").payload, "adam section");
  s.projection_moments = decode_moments(adam);
  s.bias_moments = decode_moments(adam);
  s.p_moments = decode_moments(adam);
  adam.expect_end();
  io::Reader stat(c.only("STAT").payload, "stat section");
  s.epochs_completed = stat.get<std::int32_t>();
  s.best_val_recall1 = stat.get<double>();
  s.best_epoch = stat.get<std::int32_t>();
  s.peak_resident_descriptors = static_cast<std::size_t>(stat.get<std::uint64_t>());
  try {
    for (const auto& h : nlohmann::json::parse(c.only("HIST").payload)) {
      EpochRecord e;
      e.epoch = h.at("epoch").get<int>();
      const auto g = h.at("group");
      e.group = GroupId{g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>()};
      e.mean_loss = h.at("mean_loss").get<double>();
      const auto v = h.at("val_recall");
      e.val_recall1 = v.at(0).get<double>();
      e.val_recall5 = v.at(1).get<double>();
      e.val_recall10 = v.at(2).get<double>();
      e.val_recall20 = v.at(3).get<double>();
      e.iteration_losses = h.at("iteration_losses").get<std::vector<double>>();
      s.history.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("training history: ") + e.what());
  }
  return s;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history,
                       std::string_view comment) {
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "epoch,group,mean_loss,val_recall@1,val_recall@5,val_recall@10,val_recall@20\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,G_%d_%d_%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", h.epoch,
                  h.group.u, h.group.v, h.group.w, h.mean_loss, h.val_recall1, h.val_recall5,
                  h.val_recall10, h.val_recall20);
    out << buf;
  }
}

}  // namespace cosplace
