#include <benchmark/benchmark.h>

#include <random>

#include "cosplace/embed.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/loss.hpp"
#include "cosplace/partition.hpp"
#include "cosplace/retrieval.hpp"

using namespace cosplace;

namespace {

Descriptor random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n;
  Descriptor d(dim);
  for (int i = 0; i < dim; ++i) d[i] = n(rng);
  return d.normalized();
}

// Exhaustive scan: cost should grow linearly in both database size and D.
void BM_KnnScan(benchmark::State& state) {
  const auto size = static_cast<std::size_t>(state.range(0));
  const int dim = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  std::vector<Descriptor> db;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < size; ++i) {
    db.push_back(random_unit(rng, dim));
    ids.push_back(std::to_string(i));
  }
  const DescriptorIndex index = build_index(db, ids, std::vector<GeoPose>(size), {10, Hemisphere::kNorth});
  const Descriptor q = random_unit(rng, dim);
  for (auto _ : state) benchmark::DoNotOptimize(knn(index, q, 20));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * size));
}
BENCHMARK(BM_KnnScan)->Args({10000, 128})->Args({10000, 512})->Args({40000, 128})->Args({40000, 512});

void BM_EmbedForwardBackward(benchmark::State& state) {
  const auto kind = static_cast<PoolingKind>(state.range(0));
  std::mt19937_64 rng(2);
  EmbedConfig cfg;
  cfg.output_dim = 64;
  cfg.pooling = {kind, 3.0};
  cfg.learn_p = kind == PoolingKind::kGem;
  const EmbeddingModel m = new_embedding_model(48, cfg, 3);
  FeatureMap fm(48, 4, 4);
  std::uniform_real_distribution<float> u(0.0f, 3.0f);
  for (auto& v : fm.values) v = u(rng);
  const Eigen::VectorXd g = random_unit(rng, 64);
  for (auto _ : state) {
    const ForwardCache cache = forward_with_cache(m, fm);
    benchmark::DoNotOptimize(backward(m, cache, g));
  }
  state.SetLabel(std::string(pooling_name(kind)));
}
BENCHMARK(BM_EmbedForwardBackward)->Arg(0)->Arg(1)->Arg(2);

void BM_LmclBackward(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const int classes = static_cast<int>(state.range(0));
  const ClassifierHead head = new_head({0, 0, 0}, classes, 512, 5);
  std::vector<Descriptor> d;
  std::vector<int> y;
  for (int i = 0; i < 32; ++i) {
    d.push_back(random_unit(rng, 512));
    y.push_back(i % classes);
  }
  for (auto _ : state) benchmark::DoNotOptimize(lmcl_backward(d, y, head, LossConfig{}));
}
BENCHMARK(BM_LmclBackward)->Arg(100)->Arg(1000);

void BM_BuildPartition(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(0.0, 5000.0), heading(0.0, 360.0);
  std::vector<ImageRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].id = "img" + std::to_string(i);
    records[i].pose = {550000.0 + pos(rng), 4180000.0 + pos(rng), heading(rng)};
  }
  PartitionConfig cfg;
  cfg.min_images_per_class = 1;
  for (auto _ : state) benchmark::DoNotOptimize(build_partition(records, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_BuildPartition)->Arg(10000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
