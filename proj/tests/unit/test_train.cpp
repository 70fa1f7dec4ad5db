#include <gtest/gtest.h>

#include <sstream>

#include "cosplace/binary_io.hpp"
#include "cosplace/error.hpp"
#include "cosplace/train.hpp"
#include "support/desk.hpp"

namespace cosplace {
namespace {

TEST(Adam, FirstStepHandValue) {
  std::vector<double> theta{0.0};
  AdamMoments m(1);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  adam_step(theta, std::vector<double>{1.0}, m, 1, cfg);
  EXPECT_NEAR(-theta[0], 0.09999999900000002, 1e-15);
  EXPECT_EQ(m.step, 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> theta{1.5, -2.0};
  AdamMoments m(2);
  adam_step(theta, std::vector<double>{0.0, 0.0}, m, 1, AdamConfig{});
  EXPECT_EQ(theta, (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(m.m, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(m.v, (std::vector<double>{0.0, 0.0}));
}

TEST(Adam, SteadyStateStepIsLearningRate) {
  std::vector<double> theta{0.0, 0.0};
  AdamMoments m(2);
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  const std::vector<double> g{3.0, -0.5};
  std::vector<double> before;
  for (int t = 1; t <= 2000; ++t) {
    before = theta;
    adam_step(theta, g, m, t, cfg);
  }
  EXPECT_NEAR(theta[0] - before[0], -0.01, 1e-8);
  EXPECT_NEAR(theta[1] - before[1], 0.01, 1e-8);
}

TEST(Adam, Errors) {
  std::vector<double> theta{0.0};
  AdamMoments m(1);
  try {
    adam_step(theta, std::vector<double>{std::nan("")}, m, 1, AdamConfig{}, "projection");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("projection"), std::string::npos);
  }
  EXPECT_THROW(adam_step(theta, std::vector<double>{1.0, 2.0}, m, 1, AdamConfig{}), Error);
  EXPECT_THROW(adam_step(theta, std::vector<double>{1.0}, m, 0, AdamConfig{}), Error);
}

Partition two_class_partition(int a_size, int b_size) {
  std::vector<ImageRecord> records;
  for (int i = 0; i < a_size; ++i) records.push_back({"a" + std::to_string(i), {5, 5, 10}});
  for (int i = 0; i < b_size; ++i) records.push_back({"b" + std::to_string(i), {25, 5, 10}});
  PartitionConfig pc;
  pc.translation_separation = 2;
  pc.heading_separation = 1;
  pc.min_images_per_class = 1;
  return build_partition(records, pc);
}

TEST(Sampler, ClassUniform) {
  const Partition p = two_class_partition(3, 300);
  std::mt19937_64 rng(1);
  int a = 0;
  const auto batch = sample_batch(p, {0, 0, 0}, 10000, rng);
  ASSERT_EQ(batch.size(), 10000u);
  for (const auto& item : batch) {
    a += item.image_id[0] == 'a';
    EXPECT_EQ(item.label, item.image_id[0] == 'a' ? 0 : 1);
  }
  EXPECT_NEAR(a / 10000.0, 0.5, 0.02);
}

TEST(Sampler, DeterministicAndSized) {
  const Partition p = two_class_partition(5, 5);
  std::mt19937_64 r1(9), r2(9);
  const auto b1 = sample_batch(p, {0, 0, 0}, 32, r1);
  EXPECT_EQ(b1.size(), 32u);
  EXPECT_EQ(b1, sample_batch(p, {0, 0, 0}, 32, r2));
  EXPECT_THROW(sample_batch(p, {1, 0, 0}, 4, r1), Error);
}

TEST(Groups, FirstGInEnumerationOrder) {
  const desk::Setup s = desk::tiny_setup();
  const auto groups = select_training_groups(s.partition, 3);
  const auto all = enumerate_groups(s.partition.config);
  EXPECT_EQ(groups, std::vector<GroupId>(all.begin(), all.begin() + 3));
  EXPECT_THROW(select_training_groups(s.partition, 5), Error);
  EXPECT_THROW(select_training_groups(s.partition, 0), Error);
  const Partition sparse = two_class_partition(3, 3);
  try {
    select_training_groups(sparse, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyGroup);
  }
}

TEST(Training, CyclesGroupsAndTouchesOneHeadPerEpoch) {
  const desk::Setup s = desk::tiny_setup();
  const TrainConfig cfg = desk::tiny_train_config();
  std::vector<std::vector<std::string>> head_bytes;
  auto snapshot = [](const TrainState& st) {
    std::vector<std::string> out;
    for (const auto& h : st.heads) {
      out.emplace_back(reinterpret_cast<const char*>(h.weights.data()),
                       sizeof(double) * static_cast<std::size_t>(h.weights.size()));
    }
    return out;
  };
  head_bytes.push_back({});  // index e + 1 holds the heads after epoch e
  const TrainState state = train_cosplace(s.data(), cfg, desk::tiny_embed_config(), std::nullopt,
                                          [&](const EpochRecord&, const TrainState& st) {
                                            head_bytes.push_back(snapshot(st));
                                          });
  ASSERT_EQ(state.history.size(), 3u);
  for (int e = 0; e < 3; ++e) {
    EXPECT_EQ(state.history[static_cast<std::size_t>(e)].group, state.groups[static_cast<std::size_t>(e % 2)]);
  }
  // Epoch 2 trains head 0 again; head 1 must be unchanged across it.
  EXPECT_NE(head_bytes[3][0], head_bytes[2][0]);
  EXPECT_EQ(head_bytes[3][1], head_bytes[2][1]);
  // Epoch 1 trains head 1 only.
  EXPECT_EQ(head_bytes[2][0], head_bytes[1][0]);
  EXPECT_NE(head_bytes[2][1], head_bytes[1][1]);
  EXPECT_EQ(state.heads.size(), 2u);
  EXPECT_EQ(state.peak_resident_descriptors, static_cast<std::size_t>(cfg.batch_size));
}

TEST(Training, BestRecallNondecreasingAndExportsBest) {
  const desk::Setup s = desk::tiny_setup(2);
  TrainConfig cfg = desk::tiny_train_config();
  cfg.total_epochs = 4;
  double best = -1.0;
  const TrainState state = train_cosplace(s.data(), cfg, desk::tiny_embed_config(), std::nullopt,
                                          [&](const EpochRecord& r, const TrainState& st) {
                                            EXPECT_GE(st.best_val_recall1, best);
                                            best = st.best_val_recall1;
                                            EXPECT_GE(st.best_val_recall1, r.val_recall1);
                                          });
  double max_r1 = -1.0;
  int argmax = -1;
  for (const auto& r : state.history) {
    if (r.val_recall1 > max_r1) {
      max_r1 = r.val_recall1;
      argmax = r.epoch;
    }
  }
  EXPECT_EQ(state.best_val_recall1, max_r1);
  EXPECT_EQ(state.best_epoch, argmax);
  const EmbeddingModel exported = export_inference_model(state);
  EXPECT_EQ(exported, *state.best_model);

  const std::string bytes = save_model(exported);
  EXPECT_EQ(save_model(export_inference_model(state)), bytes);
  const io::Container c = io::decode_container(bytes, kCheckpointMagic, kCheckpointVersion, "model");
  EXPECT_EQ(c.count("HEAD"), 0u);
  EXPECT_EQ(c.count("MODL"), 1u);
}

TEST(Training, ZeroLearningRateExportsInitialModel) {
  const desk::Setup s = desk::tiny_setup();
  TrainConfig cfg = desk::tiny_train_config();
  cfg.adam.learning_rate = 0.0;
  cfg.total_epochs = 2;
  const TrainState state = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  const int channels = s.world.config.channels;
  EXPECT_EQ(export_inference_model(state), new_embedding_model(channels, desk::tiny_embed_config(), cfg.seed));
}

TEST(Training, LossDecreasesOverFirstEpoch) {
  const desk::Setup s = desk::tiny_setup(3);
  TrainConfig cfg = desk::tiny_train_config();
  cfg.groups_used = 1;
  cfg.total_epochs = 1;
  cfg.iterations_per_epoch = 300;
  cfg.batch_size = 32;
  const TrainState state = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  const auto& losses = state.history[0].iteration_losses;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < losses.size(); start += 50) {
    double sum = 0.0;
    for (std::size_t i = start; i < start + 50; ++i) sum += losses[i];
    EXPECT_LT(sum / 50.0, previous) << "window at " << start;
    previous = sum / 50.0;
  }
}

TEST(Training, DeterministicAcrossRunsAndThreadCounts) {
  const desk::Setup s = desk::tiny_setup();
  TrainConfig cfg = desk::tiny_train_config();
  const TrainState a = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  const TrainState b = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  cfg.threads = 3;
  const TrainState c = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  EXPECT_EQ(save_training_state(a), save_training_state(b));
  EXPECT_EQ(save_model(export_inference_model(a)), save_model(export_inference_model(c)));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const desk::Setup s = desk::tiny_setup();
  TrainConfig cfg = desk::tiny_train_config();
  const TrainState full = train_cosplace(s.data(), cfg, desk::tiny_embed_config());
  TrainConfig first = cfg;
  first.total_epochs = 1;
  const TrainState partial = train_cosplace(s.data(), first, desk::tiny_embed_config());
  const TrainState reloaded = load_training_state(save_training_state(partial));
  EXPECT_EQ(reloaded, partial);
  const TrainState resumed = train_cosplace(s.data(), cfg, desk::tiny_embed_config(), reloaded);
  EXPECT_EQ(save_training_state(resumed), save_training_state(full));
}

TEST(Training, Errors) {
  const desk::Setup s = desk::tiny_setup();
  TrainConfig cfg = desk::tiny_train_config();
  EXPECT_THROW(export_inference_model(TrainState{}), Error);
  cfg.groups_used = 99;
  EXPECT_THROW(train_cosplace(s.data(), cfg, desk::tiny_embed_config()), Error);
  cfg = desk::tiny_train_config();
  cfg.batch_size = 0;
  EXPECT_THROW(train_cosplace(s.data(), cfg, desk::tiny_embed_config()), Error);
}

TEST(History, CsvLayout) {
  EpochRecord r;
  r.epoch = 0;
  r.group = {1, 0, 1};
  r.mean_loss = 0.5;
  r.val_recall1 = 0.25;
  std::ostringstream out;
  write_history_csv(out, std::span(&r, 1), "{\"seed\":1}");
  EXPECT_EQ(out.str(),
            "# {\"seed\":1}\n"
            "epoch,group,mean_loss,val_recall@1,val_recall@5,val_recall@10,val_recall@20\n"
            "0,G_1_0_1,0.5,0.25,0,0,0\n");
}

}  // namespace
}  // namespace cosplace
