#pragma once

// Loss terms of the cross-lingual contrastive objective.
//
//   positive alignment  (1/n) sum_{i>j} cos(x_i, x_j)
//   negative contrast   (1/n) sum_i sum_j cos(x_i, N_j)
//   generation          token-level cross-entropy, summed per response
//   total               l_g + (l_n_e + l_n_d - l_p_d - l_p_e) / (4 t_avg)
//
// The encoder side uses the 2k+1 pooled history views; the decoder side uses
// the 2k+1 soft response representations plus k+1 gradient-blocked encodings
// of gold responses, 3k+2 vectors in all.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chatzero/autograd.hpp"
#include "chatzero/model.hpp"

namespace chatzero {

struct LossBreakdown {
  double l_p_e = 0.0;
  double l_n_e = 0.0;
  double l_p_d = 0.0;
  double l_n_d = 0.0;
  double l_g = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
  bool finite() const;
  // Name of the first non-finite term, empty if all are finite.
  std::string first_non_finite() const;
};

struct ObjectiveConfig {
  // Divide the negative sums by the number of negatives (off: literal form).
  bool normalize_negatives = false;
  // Replaces 1 / (4 t_avg) when set.
  std::optional<double> contrastive_scale;
};

double positive_alignment(const std::vector<std::vector<float>>& reps);
double negative_contrast(const std::vector<std::vector<float>>& reps, const std::vector<std::vector<float>>& negatives,
                         bool normalize_negatives = false);

// Mean over views of the summed per-token negative log-likelihood. Each
// target sequence must have one token per distribution row.
double generation_loss(const std::vector<DecoderDistribution>& views, const std::vector<std::vector<int>>& targets);

double contrastive_weight(double t_avg, const ObjectiveConfig& config = {});
double total_loss(const LossBreakdown& parts, double t_avg, const ObjectiveConfig& config = {});

namespace ad_loss {

// Rows of reps are the vectors.
ad::Var positive_alignment(ad::Var reps);
ad::Var negative_contrast(ad::Var reps, ad::Var negatives, bool normalize_negatives = false);

}  // namespace ad_loss

}  // namespace chatzero
