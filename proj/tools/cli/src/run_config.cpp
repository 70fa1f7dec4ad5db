#include "cosplace/cli/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cosplace/binary_io.hpp"
#include "cosplace/error.hpp"
#include "cosplace/ingest.hpp"

namespace cosplace::cli {
namespace {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::kInvalidConfig, "config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kInvalidConfig, "config: '" + name(key) + "' has the wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw Error(ErrorCode::kInvalidConfig, "config: unknown key '" + name(it.key()) + "'");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::propagate() {
  train.seed = seed;
  train.threads = threads;
  train.deterministic = deterministic;
  city.seed = seed;
  city.class_cell_m = partition.cell_size_m;
  city.class_heading_deg = partition.heading_bin_deg;
}

void RunConfig::validate() const {
  if (threads < 1) throw Error(ErrorCode::kInvalidConfig, "config: threads must be >= 1");
  partition.validate();
  train.validate();
  city.validate();
  if (model.output_dim < 1) throw Error(ErrorCode::kInvalidConfig, "config: model.output_dim must be >= 1");
  if (model.pooling.kind == PoolingKind::kGem && !(model.pooling.p >= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "config: model.gem_p must be >= 1");
  }
  if (!(val_fraction > 0.0 && val_fraction <= 0.5)) {
    throw Error(ErrorCode::kInvalidConfig, "config: train.val_fraction must be in (0, 0.5]");
  }
  if (!(eval.threshold_m >= 0.0) || eval.ks.empty() || eval.ks.front() < 1 ||
      !std::is_sorted(eval.ks.begin(), eval.ks.end()) ||
      std::adjacent_find(eval.ks.begin(), eval.ks.end()) != eval.ks.end()) {
    throw Error(ErrorCode::kInvalidConfig,
                "config: eval needs threshold_m >= 0 and strictly increasing ks >= 1");
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  j["partition"] = c.partition;
  j["train"] = {{"groups_used", c.train.groups_used},
                {"iterations_per_epoch", c.train.iterations_per_epoch},
                {"total_epochs", c.train.total_epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.adam.learning_rate},
                {"adam_beta1", c.train.adam.beta1},
                {"adam_beta2", c.train.adam.beta2},
                {"adam_eps", c.train.adam.eps},
                {"margin", c.train.loss.margin},
                {"scale", c.train.loss.scale},
                {"val_fraction", c.val_fraction},
                {"val_threshold_m", c.train.val_threshold_m}};
  j["model"] = {{"output_dim", c.model.output_dim},
                {"pooling", std::string(pooling_name(c.model.pooling.kind))},
                {"gem_p", c.model.pooling.p},
                {"learn_p", c.model.learn_p},
                {"bias", c.model.has_bias}};
  const CityConfig& y = c.city;
  j["city"] = {{"extent_m", y.extent_m},
               {"place_spacing_m", y.place_spacing_m},
               {"place_jitter_m", y.place_jitter_m},
               {"headings_per_place", y.headings_per_place},
               {"images_per_place_heading", y.images_per_place_heading},
               {"queries_per_place_heading", y.queries_per_place_heading},
               {"latent_dim", y.latent_dim},
               {"feature_map_shape", {y.channels, y.height, y.width}},
               {"signal_offset", y.signal_offset},
               {"noise_sigma", y.noise_sigma},
               {"nuisance_dim", y.nuisance_dim},
               {"nuisance_sigma", y.nuisance_sigma},
               {"domain_shift_sigma", y.domain_shift_sigma},
               {"origin_east", y.origin_east},
               {"origin_north", y.origin_north},
               {"zone", format_zone(y.zone)}};
  j["eval"] = {{"threshold_m", c.eval.threshold_m}, {"ks", c.eval.ks}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
  RunConfig c;
  Section root(doc, "");
  root.read("seed", c.seed);
  root.read("deterministic", c.deterministic);
  root.read("threads", c.threads);

  if (const auto* p = root.child("partition")) {
    Section s(*p, "partition");
    s.read("M", c.partition.cell_size_m);
    s.read("alpha", c.partition.heading_bin_deg);
    s.read("N", c.partition.translation_separation);
    s.read("L", c.partition.heading_separation);
    s.read("min_images_per_class", c.partition.min_images_per_class);
    s.finish();
  }
  if (const auto* t = root.child("train")) {
    Section s(*t, "train");
    s.read("groups_used", c.train.groups_used);
    s.read("iterations_per_epoch", c.train.iterations_per_epoch);
    s.read("total_epochs", c.train.total_epochs);
    s.read("batch_size", c.train.batch_size);
    s.read("learning_rate", c.train.adam.learning_rate);
    s.read("adam_beta1", c.train.adam.beta1);
    s.read("adam_beta2", c.train.adam.beta2);
    s.read("adam_eps", c.train.adam.eps);
    s.read("margin", c.train.loss.margin);
    s.read("scale", c.train.loss.scale);
    s.read("val_fraction", c.val_fraction);
    s.read("val_threshold_m", c.train.val_threshold_m);
    s.finish();
  }
  if (const auto* m = root.child("model")) {
    Section s(*m, "model");
    std::string pooling(pooling_name(c.model.pooling.kind));
    s.read("output_dim", c.model.output_dim);
    s.read("pooling", pooling);
    s.read("gem_p", c.model.pooling.p);
    s.read("learn_p", c.model.learn_p);
    s.read("bias", c.model.has_bias);
    s.finish();
    try {
      c.model.pooling.kind = parse_pooling(pooling);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidConfig, std::string("config: model.pooling: ") + e.what());
    }
  }
  if (const auto* y = root.child("city")) {
    Section s(*y, "city");
    CityConfig& city = c.city;
    s.read("extent_m", city.extent_m);
    s.read("place_spacing_m", city.place_spacing_m);
    s.read("place_jitter_m", city.place_jitter_m);
    s.read("headings_per_place", city.headings_per_place);
    s.read("images_per_place_heading", city.images_per_place_heading);
    s.read("queries_per_place_heading", city.queries_per_place_heading);
    s.read("latent_dim", city.latent_dim);
    std::vector<int> shape{city.channels, city.height, city.width};
    s.read("feature_map_shape", shape);
    if (shape.size() != 3) throw Error(ErrorCode::kInvalidConfig, "config: city.feature_map_shape needs [C, H, W]");
    city.channels = shape[0];
    city.height = shape[1];
    city.width = shape[2];
    s.read("signal_offset", city.signal_offset);
    s.read("noise_sigma", city.noise_sigma);
    s.read("nuisance_dim", city.nuisance_dim);
    s.read("nuisance_sigma", city.nuisance_sigma);
    s.read("domain_shift_sigma", city.domain_shift_sigma);
    s.read("origin_east", city.origin_east);
    s.read("origin_north", city.origin_north);
    std::string zone = format_zone(city.zone);
    s.read("zone", zone);
    s.finish();
    try {
      city.zone = parse_zone(zone);
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidConfig, std::string("config: city.zone: ") + e.what());
    }
  }
  if (const auto* e = root.child("eval")) {
    Section s(*e, "eval");
    s.read("threshold_m", c.eval.threshold_m);
    s.read("ks", c.eval.ks);
    s.finish();
  }
  root.finish();
  c.propagate();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = io::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, "config '" + path + "': " + e.what());
  }
  return run_config_from_json(doc);
}

}  // namespace cosplace::cli
