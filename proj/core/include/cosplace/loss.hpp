#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cosplace/embed.hpp"
#include "cosplace/partition.hpp"

namespace cosplace {

/// One classifier per group. Rows are stored unnormalized and normalized on
/// the fly; `row_normalized` records whether the stored rows are currently unit.
struct ClassifierHead {
  GroupId group;
  Eigen::MatrixXd weights;  // num_classes x D
  bool row_normalized = false;

  int num_classes() const { return static_cast<int>(weights.rows()); }

  friend bool operator==(const ClassifierHead& a, const ClassifierHead& b) {
    return a.group == b.group && a.row_normalized == b.row_normalized &&
           a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           a.weights == b.weights;
  }
};

/// Large margin cosine loss parameters.
struct LossConfig {
  double margin = 0.40;
  double scale = 30.0;
};

/// Seed for a group's head, derived from a base seed and the group id.
std::uint64_t head_seed(std::uint64_t base_seed, const GroupId& group);

/// Rows drawn from an isotropic Gaussian and normalized. Throws kDomain for
/// fewer than two classes.
ClassifierHead new_head(const GroupId& group, int num_classes, int dim, std::uint64_t seed);

/// Mean over the batch of
///   -log( e^{s(cos_y - m)} / (e^{s(cos_y - m)} + sum_{j != y} e^{s cos_j}) ).
/// Descriptors must be unit-norm within 1e-6.
double lmcl_forward(std::span<const Descriptor> descriptors, std::span<const int> labels,
                    const ClassifierHead& head, const LossConfig& cfg);

struct LossGradients {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> descriptors;  // d loss / d descriptor, per item
  Eigen::MatrixXd weights;                   // d loss / d stored (unnormalized) rows
};

LossGradients lmcl_backward(std::span<const Descriptor> descriptors, std::span<const int> labels,
                            const ClassifierHead& head, const LossConfig& cfg);

}  // namespace cosplace
