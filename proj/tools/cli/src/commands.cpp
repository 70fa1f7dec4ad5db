#include "cosplace/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "cosplace/binary_io.hpp"
#include "cosplace/cli/run_config.hpp"
#include "cosplace/error.hpp"
#include "cosplace/ingest.hpp"
#include "cosplace/retrieval.hpp"
#include "cosplace/synthcity.hpp"
#include "cosplace/train.hpp"

namespace cosplace::cli {
namespace {

namespace fs = std::filesystem;

std::vector<ImageRecord> read_manifest(const std::string& path) {
  std::istringstream in(io::read_file(path));
  try {
    return parse_manifest(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void save_manifest(const std::string& path, std::span<const ImageRecord> records,
                   const std::string& echo) {
  std::ostringstream out;
  write_manifest(out, records, echo);
  io::write_file(path, out.str());
}

FeatureStore read_features(const std::string& path) {
  return FeatureStore::deserialize(io::read_file(path));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Flattened, normalized feature maps: descriptors for oracle stores.
std::vector<Descriptor> flat_descriptors(const FeatureStore& store, std::span<const ImageRecord> records) {
  std::vector<Descriptor> out;
  out.reserve(records.size());
  for (const ImageRecord& r : records) {
    const FeatureMap& fm = store.at(r.feature_key());
    Descriptor d(static_cast<Eigen::Index>(fm.values.size()));
    for (std::size_t i = 0; i < fm.values.size(); ++i) d[static_cast<Eigen::Index>(i)] = fm.values[i];
    const double n = d.norm();
    if (!(n > 0.0)) throw Error(ErrorCode::kDomain, "oracle feature for '" + r.id + "' is zero");
    out.push_back(d / n);
  }
  return out;
}

EvalReport evaluate(std::vector<Descriptor> db, std::span<const ImageRecord> db_records,
                    std::vector<Descriptor> queries, std::span<const ImageRecord> query_records,
                    const RunConfig& cfg, std::string label) {
  if (db_records.empty()) throw Error(ErrorCode::kState, "database manifest is empty");
  require_single_zone(db_records);
  std::vector<std::string> ids;
  std::vector<GeoPose> poses;
  for (const ImageRecord& r : db_records) {
    ids.push_back(r.id);
    poses.push_back(r.pose);
  }
  const DescriptorIndex index = build_index(db, ids, poses, db_records.front().zone);
  std::vector<Query> q;
  q.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    q.push_back({std::move(queries[i]), query_records[i].pose, query_records[i].zone});
  }
  EvalReport report = recall_at_n(index, q, cfg.eval.ks, cfg.eval.threshold_m, cfg.threads);
  report.label = std::move(label);
  return report;
}

struct TrainingRun {
  ValidationSplit split;
  Partition partition;
  TrainState state;
};

ValidationSplit split_for(const RunConfig& cfg, std::span<const ImageRecord> records) {
  return split_validation(records, cfg.val_fraction, cfg.seed);
}

TrainingRun train_run(const RunConfig& cfg, std::span<const ImageRecord> records,
                      const FeatureStore& features, std::optional<Partition> partition,
                      std::optional<TrainState> resume, const EpochCallback& on_epoch) {
  TrainingRun run;
  run.split = split_for(cfg, records);
  if (partition) {
    std::set<std::string_view> train_ids;
    for (const ImageRecord& r : run.split.train) train_ids.insert(r.id);
    for (const auto& [c, members] : partition->class_members) {
      for (const std::string& id : members) {
        if (!train_ids.contains(id)) {
          throw Error(ErrorCode::kState, "partition member '" + id +
                                             "' is not a training record under this seed and "
                                             "val_fraction; rerun `cosplace partition`");
        }
      }
    }
    run.partition = std::move(*partition);
  } else {
    run.partition = build_partition(run.split.train, cfg.partition);
  }
  const TrainingData data{&features, &run.partition, run.split.train, run.split.val_database,
                          run.split.val_queries};
  run.state = train_cosplace(data, cfg.train, cfg.model, std::move(resume), on_epoch);
  return run;
}

std::string stats_table(const Partition& p) {
  const PartitionStats s = partition_stats(p);
  std::ostringstream out;
  out << "groups: " << s.group_count << '\n'
      << "classes retained: " << s.retained_classes << " (" << s.retained_images << " images)\n"
      << "classes discarded: " << s.discarded_classes << " (" << s.discarded_images << " images)\n"
      << "class size min/mean/max: " << s.min_class_size << " / " << s.mean_class_size << " / "
      << s.max_class_size << '\n'
      << "group      classes  images\n";
  for (const auto& [g, n] : s.classes_per_group) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-10s %7lld %7lld\n", to_string(g).c_str(),
                  static_cast<long long>(n), static_cast<long long>(s.images_per_group.at(g)));
    out << line;
  }
  return out.str();
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) continue;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
      throw Error(ErrorCode::kUsage, "sweep value '" + token + "' is not a number");
    }
    values.push_back(v);
  }
  if (values.empty()) throw Error(ErrorCode::kUsage, "sweep needs at least one value in --values");
  return values;
}

int as_int(double v, const std::string& what) {
  if (v != std::floor(v)) throw Error(ErrorCode::kUsage, what + " takes integer values");
  return static_cast<int>(v);
}

struct Options {
  // Global.
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<int> threads;
  // Overrides.
  std::optional<double> M;
  std::optional<int> alpha, N, L, min_images;
  std::optional<int> groups, epochs, iterations, batch, dim;
  std::optional<double> lr, val_fraction, threshold;
  std::optional<std::string> pooling;
  // Paths and switches.
  std::string in, out, manifest, features, partition, out_dir, resume;
  std::string model, db, db_features, queries, query_features, oracle_features, json;
  bool baseline = false;
  std::string dimension, values;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.deterministic) cfg.deterministic = true;
  if (o.threads) cfg.threads = *o.threads;
  if (o.M) cfg.partition.cell_size_m = *o.M;
  if (o.alpha) cfg.partition.heading_bin_deg = *o.alpha;
  if (o.N) cfg.partition.translation_separation = *o.N;
  if (o.L) cfg.partition.heading_separation = *o.L;
  if (o.min_images) cfg.partition.min_images_per_class = *o.min_images;
  if (o.groups) cfg.train.groups_used = *o.groups;
  if (o.epochs) cfg.train.total_epochs = *o.epochs;
  if (o.iterations) cfg.train.iterations_per_epoch = *o.iterations;
  if (o.batch) cfg.train.batch_size = *o.batch;
  if (o.dim) cfg.model.output_dim = *o.dim;
  if (o.lr) cfg.train.adam.learning_rate = *o.lr;
  if (o.val_fraction) cfg.val_fraction = *o.val_fraction;
  if (o.threshold) {
    cfg.eval.threshold_m = *o.threshold;
    cfg.train.val_threshold_m = *o.threshold;
  }
  if (o.pooling) {
    try {
      cfg.model.pooling.kind = parse_pooling(*o.pooling);
    } catch (const Error& e) {
      throw Error(ErrorCode::kUsage, std::string("--pooling: ") + e.what());
    }
  }
  cfg.propagate();
  cfg.validate();
  return cfg;
}

// Commands. Each receives the resolved config and its JSON echo.

void cmd_convert(const Options& o, const RunConfig&, const std::string& echo, std::ostream& out) {
  const auto records = read_manifest(o.in);
  save_manifest(o.out, records, echo);
  out << "converted " << records.size() << " records, zone " << format_zone(records.front().zone) << '\n';
}

void cmd_partition(const Options& o, const RunConfig& cfg, const nlohmann::json& echo, std::ostream& out) {
  const auto records = read_manifest(o.manifest);
  const ValidationSplit split = split_for(cfg, records);
  const Partition p = build_partition(split.train, cfg.partition);
  nlohmann::json doc = partition_to_json(p);
  doc["run_config"] = echo;
  io::write_file(o.out, doc.dump(1) + "\n");
  out << "training records: " << split.train.size() << " (validation: " << split.val_database.size()
      << " database, " << split.val_queries.size() << " queries)\n"
      << stats_table(p);
}

void cmd_train(const Options& o, const RunConfig& cfg, const nlohmann::json& echo, std::ostream& out) {
  const auto records = read_manifest(o.manifest);
  const FeatureStore features = read_features(o.features);
  std::optional<Partition> partition;
  if (!o.partition.empty()) {
    try {
      partition = partition_from_json(nlohmann::json::parse(io::read_file(o.partition)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, o.partition + ": " + e.what());
    }
  }
  std::optional<TrainState> resume;
  if (!o.resume.empty()) resume = load_training_state(io::read_file(o.resume));
  if (cfg.train.groups_used == 1) {
    out << "note: groups_used=1, training reduces to plain cosFace on a single group\n";
  }
  ensure_dir(o.out_dir);
  const std::string meta = echo.dump();
  const TrainingRun run = train_run(cfg, records, features, std::move(partition), std::move(resume),
                                    [&](const EpochRecord& r, const TrainState& st) {
                                      char line[160];
                                      std::snprintf(line, sizeof(line),
                                                    "epoch %d  %s  loss %.4f  val R@1 %.1f  best %.1f\n",
                                                    r.epoch, to_string(r.group).c_str(), r.mean_loss,
                                                    100.0 * r.val_recall1, 100.0 * st.best_val_recall1);
                                      out << line << std::flush;
                                    });
  io::write_file(join(o.out_dir, "model.ckpt"), save_model(export_inference_model(run.state), meta));
  io::write_file(join(o.out_dir, "state.ckpt"), save_training_state(run.state, meta));
  std::ostringstream history;
  write_history_csv(history, run.state.history, meta);
  io::write_file(join(o.out_dir, "history.csv"), history.str());
  out << "best epoch " << run.state.best_epoch << " (val R@1 " << 100.0 * run.state.best_val_recall1
      << "), peak resident descriptors " << run.state.peak_resident_descriptors << '\n';
}

void cmd_eval(const Options& o, const RunConfig& cfg, const nlohmann::json& echo, std::ostream& out) {
  if (o.model.empty() && !o.baseline && o.oracle_features.empty()) {
    throw Error(ErrorCode::kUsage, "eval needs --model, --baseline or --oracle-features");
  }
  const auto db = read_manifest(o.db);
  const auto queries = read_manifest(o.queries);
  std::vector<EvalReport> reports;

  if (!o.model.empty() || o.baseline) {
    if (o.db_features.empty()) throw Error(ErrorCode::kUsage, "--db-features is required with a model");
    const FeatureStore db_store = read_features(o.db_features);
    const FeatureStore q_store = o.query_features.empty() || o.query_features == o.db_features
                                     ? db_store
                                     : read_features(o.query_features);
    auto run = [&](const EmbeddingModel& m, const char* label) {
      reports.push_back(evaluate(embed_records(m, db_store, db, cfg.threads), db,
                                 embed_records(m, q_store, queries, cfg.threads), queries, cfg, label));
    };
    if (!o.model.empty()) run(load_model(io::read_file(o.model)), "cosplace");
    if (o.baseline) {
      if (db.empty()) throw Error(ErrorCode::kState, "database manifest is empty");
      const int channels = db_store.at(db.front().feature_key()).channels;
      run(new_embedding_model(channels, cfg.model, cfg.seed), "random-init");
    }
  }
  if (!o.oracle_features.empty()) {
    const FeatureStore store = read_features(o.oracle_features);
    reports.push_back(evaluate(flat_descriptors(store, db), db, flat_descriptors(store, queries), queries,
                               cfg, "oracle"));
  }

  out << "recall@N within " << cfg.eval.threshold_m << " m, " << queries.size() << " queries\n"
      << format_report_table(reports);
  if (!o.json.empty()) {
    nlohmann::json doc;
    doc["format"] = "cosplace.eval";
    doc["run_config"] = echo;
    doc["reports"] = nlohmann::json::array();
    for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
    io::write_file(o.json, doc.dump(1) + "\n");
  }
}

void cmd_synth(const Options& o, const RunConfig& cfg, const nlohmann::json& echo, std::ostream& out) {
  const SyntheticWorld world = generate_city(cfg.city);
  ensure_dir(o.out_dir);
  const std::string meta = echo.dump();
  save_manifest(join(o.out_dir, "database.csv"), world.records, meta);
  save_manifest(join(o.out_dir, "queries.csv"), world.queries, meta);
  io::write_file(join(o.out_dir, "features.bin"), world.features.serialize());
  io::write_file(join(o.out_dir, "oracle_features.bin"), oracle_feature_store(world).serialize());
  nlohmann::json info{{"format", "cosplace.synth"},
                      {"run_config", echo},
                      {"records", world.records.size()},
                      {"queries", world.queries.size()},
                      {"scenes", world.latents.size()},
                      {"max_cross_similarity", world.max_cross_similarity}};
  io::write_file(join(o.out_dir, "world.json"), info.dump(1) + "\n");
  out << "synthetic city: " << world.records.size() << " database images, " << world.queries.size()
      << " queries, " << world.latents.size() << " scenes\n";
}

void cmd_sweep(const Options& o, const RunConfig& base, const nlohmann::json& echo, std::ostream& out) {
  static const std::vector<std::string> kDimensions{"M", "alpha", "N", "L", "groups_used"};
  if (std::find(kDimensions.begin(), kDimensions.end(), o.dimension) == kDimensions.end()) {
    throw Error(ErrorCode::kUsage, "--dimension must be one of M, alpha, N, L, groups_used");
  }
  const std::vector<double> values = parse_values(o.values);
  const auto records = read_manifest(o.manifest);
  const FeatureStore features = read_features(o.features);
  const auto queries = read_manifest(o.queries);
  const FeatureStore q_store = o.query_features.empty() || o.query_features == o.features
                                   ? features
                                   : read_features(o.query_features);

  std::ostringstream csv;
  csv << "# " << echo.dump() << '\n'
      << "dimension,value,groups_used,best_epoch,val_recall@1";
  for (int k : base.eval.ks) csv << ",recall@" << k;
  csv << '\n';
  for (double v : values) {
    RunConfig cfg = base;
    if (o.dimension == "M") cfg.partition.cell_size_m = v;
    if (o.dimension == "alpha") cfg.partition.heading_bin_deg = as_int(v, "alpha");
    if (o.dimension == "N") cfg.partition.translation_separation = as_int(v, "N");
    if (o.dimension == "L") cfg.partition.heading_separation = as_int(v, "L");
    if (o.dimension == "groups_used") cfg.train.groups_used = as_int(v, "groups_used");
    cfg.train.groups_used = std::min(cfg.train.groups_used, cfg.partition.group_count());
    cfg.propagate();
    cfg.validate();
    const TrainingRun run = train_run(cfg, records, features, std::nullopt, std::nullopt, {});
    const EmbeddingModel model = export_inference_model(run.state);
    const EvalReport report = evaluate(embed_records(model, features, records, cfg.threads), records,
                                       embed_records(model, q_store, queries, cfg.threads), queries, cfg,
                                       o.dimension + "=" + format_double(v));
    csv << o.dimension << ',' << format_double(v) << ',' << cfg.train.groups_used << ','
        << run.state.best_epoch << ',' << format_double(run.state.best_val_recall1);
    for (double r : report.recall) csv << ',' << format_double(r);
    csv << '\n';
    char line[128];
    std::snprintf(line, sizeof(line), "%s=%g  groups %d  R@1 %.1f\n", o.dimension.c_str(), v,
                  cfg.train.groups_used, 100.0 * report.recall.front());
    out << line << std::flush;
  }
  io::write_file(o.out, csv.str());
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CosPlace: group-partitioned place-recognition training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "JSON run config (defaults apply to missing keys)");
  app.add_option("--seed", o.seed, "Seed for every random choice");
  app.add_flag("--deterministic", o.deterministic, "Fixed-order reductions (bitwise-reproducible)");
  app.add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);

  auto* convert = app.add_subcommand("convert", "Project a lat/lon manifest to UTM");
  convert->add_option("--in", o.in, "Input manifest")->required();
  convert->add_option("--out", o.out, "Output manifest")->required();

  auto partition_overrides = [&](CLI::App* c) {
    c->add_option("--M", o.M, "Cell size in meters");
    c->add_option("--alpha", o.alpha, "Heading bin in degrees");
    c->add_option("--N", o.N, "Translation separation");
    c->add_option("--L", o.L, "Heading separation");
    c->add_option("--min-images", o.min_images, "Drop classes with fewer images");
    c->add_option("--val-fraction", o.val_fraction, "Fraction held out for each validation split");
  };
  auto train_overrides = [&](CLI::App* c) {
    c->add_option("--groups", o.groups, "Groups used for training");
    c->add_option("--epochs", o.epochs, "Total epochs");
    c->add_option("--iterations", o.iterations, "Iterations per epoch");
    c->add_option("--batch", o.batch, "Batch size");
    c->add_option("--lr", o.lr, "Adam learning rate");
    c->add_option("--dim", o.dim, "Descriptor dimension");
    c->add_option("--pooling", o.pooling, "gem, avg or max");
  };

  auto* partition = app.add_subcommand("partition", "Assign classes and groups");
  partition->add_option("--manifest", o.manifest, "Input manifest")->required();
  partition->add_option("--out", o.out, "Partition JSON")->required();
  partition_overrides(partition);

  auto* train = app.add_subcommand("train", "Train an embedding model");
  train->add_option("--manifest", o.manifest, "Training manifest")->required();
  train->add_option("--features", o.features, "Feature store")->required();
  train->add_option("--partition", o.partition, "Partition JSON (built on the fly when absent)");
  train->add_option("--out-dir", o.out_dir, "Output directory")->required();
  train->add_option("--resume", o.resume, "Training state to continue from");
  train->add_option("--threshold", o.threshold, "Validation distance threshold in meters");
  partition_overrides(train);
  train_overrides(train);

  auto* eval = app.add_subcommand("eval", "Recall@N of a model against a database");
  eval->add_option("--model", o.model, "Inference checkpoint");
  eval->add_flag("--baseline", o.baseline, "Also report a random-init model");
  eval->add_option("--oracle-features", o.oracle_features, "Report oracle descriptors from this store");
  eval->add_option("--db", o.db, "Database manifest")->required();
  eval->add_option("--db-features", o.db_features, "Database feature store");
  eval->add_option("--queries", o.queries, "Query manifest")->required();
  eval->add_option("--query-features", o.query_features, "Query feature store (default: database store)");
  eval->add_option("--threshold", o.threshold, "Distance threshold in meters");
  eval->add_option("--dim", o.dim, "Descriptor dimension of the baseline model");
  eval->add_option("--pooling", o.pooling, "Pooling of the baseline model");
  eval->add_option("--json", o.json, "Write the reports as JSON");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic city");
  synth->add_option("--out-dir", o.out_dir, "Output directory")->required();
  synth->add_option("--M", o.M, "Class cell size the jitter is kept within");
  synth->add_option("--alpha", o.alpha, "Heading bin the jitter is kept within");

  auto* sweep = app.add_subcommand("sweep", "Recall against one partition or training parameter");
  sweep->add_option("--dimension", o.dimension, "M, alpha, N, L or groups_used")->required();
  sweep->add_option("--values", o.values, "Comma-separated values")->required();
  sweep->add_option("--manifest", o.manifest, "Training and database manifest")->required();
  sweep->add_option("--features", o.features, "Feature store")->required();
  sweep->add_option("--queries", o.queries, "Query manifest")->required();
  sweep->add_option("--query-features", o.query_features, "Query feature store");
  sweep->add_option("--out", o.out, "CSV output")->required();
  sweep->add_option("--threshold", o.threshold, "Distance threshold in meters");
  partition_overrides(sweep);
  train_overrides(sweep);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << error_code_name(ErrorCode::kUsage) << ": " << msg << '\n';
    return 2;
  }

  try {
    const RunConfig cfg = resolve_config(o);
    const nlohmann::json echo = run_config_to_json(cfg);
    if (*convert) cmd_convert(o, cfg, echo.dump(), out);
    if (*partition) cmd_partition(o, cfg, echo, out);
    if (*train) cmd_train(o, cfg, echo, out);
    if (*eval) cmd_eval(o, cfg, echo, out);
    if (*synth) cmd_synth(o, cfg, echo, out);
    if (*sweep) cmd_sweep(o, cfg, echo, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << error_code_name(e.code()) << ": " << msg << '\n';
    return e.code() == ErrorCode::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << error_code_name(ErrorCode::kIo) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace cosplace::cli
