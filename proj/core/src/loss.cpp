#include "cosplace/loss.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cosplace/error.hpp"

namespace cosplace {
namespace {

constexpr double kUnitTolerance = 1e-6;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct NormalizedHead {
  Eigen::MatrixXd unit;     // rows of unit length
  Eigen::VectorXd norms;
};

NormalizedHead normalize_rows(const ClassifierHead& head) {
  NormalizedHead out;
  out.norms = head.weights.rowwise().norm();
  out.unit = head.weights;
  for (int j = 0; j < head.num_classes(); ++j) {
    if (!(out.norms[j] > 0.0) || !std::isfinite(out.norms[j])) {
      throw Error(ErrorCode::kNotNormalized,
                  "classifier row " + std::to_string(j) + " has zero or non-finite norm");
    }
    out.unit.row(j) /= out.norms[j];
  }
  return out;
}

void check_inputs(std::span<const Descriptor> descriptors, std::span<const int> labels,
                  const ClassifierHead& head, const LossConfig& cfg) {
  if (descriptors.size() != labels.size() || descriptors.empty()) {
    throw Error(ErrorCode::kDimension, "descriptor and label batches must be equal and non-empty");
  }
  if (!(cfg.scale > 0.0) || !(cfg.margin >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "loss needs scale > 0 and margin >= 0");
  }
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= head.num_classes()) {
      throw Error(ErrorCode::kDomain, "label " + std::to_string(labels[i]) + " out of range [0, " +
                                          std::to_string(head.num_classes()) + ")");
    }
    if (descriptors[i].size() != head.weights.cols()) {
      throw Error(ErrorCode::kDimension, "descriptor dimension does not match head");
    }
    if (std::abs(descriptors[i].norm() - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::kNotNormalized,
                  "descriptor " + std::to_string(i) + " is not unit-norm");
    }
  }
}

// Per-item logits, stable log-sum-exp and softmax.
struct ItemTerms {
  double loss = 0.0;
  Eigen::VectorXd cosines;
  Eigen::VectorXd softmax;
};

ItemTerms item_terms(const Descriptor& d, int label, const NormalizedHead& nh,
                     const LossConfig& cfg) {
  ItemTerms t;
  t.cosines = nh.unit * d;
  Eigen::VectorXd logits = cfg.scale * t.cosines;
  logits[label] -= cfg.scale * cfg.margin;
  const double peak = logits.maxCoeff();
  t.softmax = (logits.array() - peak).exp();
  const double sum = t.softmax.sum();
  t.softmax /= sum;
  t.loss = peak + std::log(sum) - logits[label];
  return t;
}

}  // namespace

std::uint64_t head_seed(std::uint64_t base_seed, const GroupId& group) {
  std::uint64_t h = splitmix64(base_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(group.u)));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(group.v)) << 21));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(group.w)) << 42));
  return h;
}

ClassifierHead new_head(const GroupId& group, int num_classes, int dim, std::uint64_t seed) {
  if (num_classes < 2) {
    throw Error(ErrorCode::kDomain, "a classifier head needs at least 2 classes, " +
                                        to_string(group) + " has " + std::to_string(num_classes));
  }
  if (dim < 1) throw Error(ErrorCode::kDimension, "head dimension must be >= 1");
  ClassifierHead head;
  head.group = group;
  head.weights.resize(num_classes, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < num_classes; ++j) {
    double norm = 0.0;
    do {
      for (int k = 0; k < dim; ++k) head.weights(j, k) = normal(rng);
      norm = head.weights.row(j).norm();
    } while (norm == 0.0);
    head.weights.row(j) /= norm;
  }
  head.row_normalized = true;
  return head;
}

double lmcl_forward(std::span<const Descriptor> descriptors, std::span<const int> labels,
                    const ClassifierHead& head, const LossConfig& cfg) {
  check_inputs(descriptors, labels, head, cfg);
  const NormalizedHead nh = normalize_rows(head);
  double total = 0.0;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    total += item_terms(descriptors[i], labels[i], nh, cfg).loss;
  }
  return total / static_cast<double>(descriptors.size());
}

LossGradients lmcl_backward(std::span<const Descriptor> descriptors, std::span<const int> labels,
                            const ClassifierHead& head, const LossConfig& cfg) {
  check_inputs(descriptors, labels, head, cfg);
  const NormalizedHead nh = normalize_rows(head);
  const double inv_batch = 1.0 / static_cast<double>(descriptors.size());

  LossGradients out;
  out.descriptors.reserve(descriptors.size());
  Eigen::MatrixXd grad_unit = Eigen::MatrixXd::Zero(nh.unit.rows(), nh.unit.cols());
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    ItemTerms t = item_terms(descriptors[i], labels[i], nh, cfg);
    out.loss += t.loss;
    // d loss / d cos_j = s * (softmax_j - [j == y])
    Eigen::VectorXd grad_cos = t.softmax;
    grad_cos[labels[i]] -= 1.0;
    grad_cos *= cfg.scale * inv_batch;
    out.descriptors.push_back(nh.unit.transpose() * grad_cos);
    grad_unit.noalias() += grad_cos * descriptors[i].transpose();
  }
  out.loss *= inv_batch;

  // Chain through w / |w|.
  out.weights.resize(nh.unit.rows(), nh.unit.cols());
  for (int j = 0; j < nh.unit.rows(); ++j) {
    const Eigen::RowVectorXd u = nh.unit.row(j);
    const Eigen::RowVectorXd g = grad_unit.row(j);
    out.weights.row(j) = (g - u * u.dot(g)) / nh.norms[j];
  }
  return out;
}

}  // namespace cosplace
