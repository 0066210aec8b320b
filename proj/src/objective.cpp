#include "chatzero/objective.hpp"

#include <cmath>

#include "chatzero/errors.hpp"

namespace chatzero {

nlohmann::json LossBreakdown::to_json() const {
  return {{"l_p_e", l_p_e}, {"l_n_e", l_n_e}, {"l_p_d", l_p_d}, {"l_n_d", l_n_d}, {"l_g", l_g}, {"total", total}};
}

std::string LossBreakdown::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {{"l_p_e", l_p_e}, {"l_n_e", l_n_e}, {"l_p_d", l_p_d},
                                                  {"l_n_d", l_n_d}, {"l_g", l_g},     {"total", total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) return name;
  return {};
}

bool LossBreakdown::finite() const { return first_non_finite().empty(); }

namespace {

Matrix stack(const std::vector<std::vector<float>>& rows, const char* what) {
  if (rows.empty()) return {};
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ShapeError(std::string(what) + ": vectors differ in dimension");
    std::copy(rows[i].begin(), rows[i].end(), m.row(static_cast<int>(i)).begin());
  }
  return m;
}

}  // namespace

namespace ad_loss {

ad::Var positive_alignment(ad::Var reps) {
  if (reps.rows() < 2) throw DegenerateInputError("positive_alignment: needs at least two vectors");
  return ad::scale(ad::pairwise_cosine_sum(reps), 1.0f / static_cast<float>(reps.rows()));
}

ad::Var negative_contrast(ad::Var reps, ad::Var negatives, bool normalize_negatives) {
  if (reps.rows() < 1) throw DegenerateInputError("negative_contrast: no positive vectors");
  if (negatives.rows() < 1) throw DegenerateInputError("negative_contrast: no negatives (batch size must be >= 2)");
  float s = 1.0f / static_cast<float>(reps.rows());
  if (normalize_negatives) s /= static_cast<float>(negatives.rows());
  return ad::scale(ad::cross_cosine_sum(reps, negatives), s);
}

}  // namespace ad_loss

double positive_alignment(const std::vector<std::vector<float>>& reps) {
  if (reps.size() < 2) throw DegenerateInputError("positive_alignment: needs at least two vectors");
  ad::Tape tape(false);
  return ad_loss::positive_alignment(tape.constant(stack(reps, "positive_alignment"))).item();
}

double negative_contrast(const std::vector<std::vector<float>>& reps, const std::vector<std::vector<float>>& negatives,
                         bool normalize_negatives) {
  if (reps.empty()) throw DegenerateInputError("negative_contrast: no positive vectors");
  if (negatives.empty()) throw DegenerateInputError("negative_contrast: no negatives (batch size must be >= 2)");
  ad::Tape tape(false);
  return ad_loss::negative_contrast(tape.constant(stack(reps, "negative_contrast")),
                                    tape.constant(stack(negatives, "negative_contrast")), normalize_negatives)
      .item();
}

double generation_loss(const std::vector<DecoderDistribution>& views, const std::vector<std::vector<int>>& targets) {
  if (views.size() != targets.size()) throw ShapeError("generation_loss: one target sequence per view required");
  if (views.empty()) throw DegenerateInputError("generation_loss: no views");
  double total = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Matrix& p = views[v].probs;
    if (static_cast<int>(targets[v].size()) != p.rows)
      throw ShapeError("generation_loss: view " + std::to_string(v) + " has " + std::to_string(p.rows) +
                       " steps but " + std::to_string(targets[v].size()) + " targets");
    for (int i = 0; i < p.rows; ++i) {
      const int tok = targets[v][i];
      if (tok < 0 || tok >= p.cols) throw ShapeError("generation_loss: target id out of range");
      total -= std::log(static_cast<double>(p(i, tok)));
    }
  }
  return total / static_cast<double>(views.size());
}

double contrastive_weight(double t_avg, const ObjectiveConfig& config) {
  if (config.contrastive_scale) return *config.contrastive_scale;
  if (!(t_avg > 0.0)) throw ConfigError("total_loss: average response length must be positive");
  return 1.0 / (4.0 * t_avg);
}

double total_loss(const LossBreakdown& parts, double t_avg, const ObjectiveConfig& config) {
  if (!(t_avg > 0.0)) throw ConfigError("total_loss: average response length must be positive");
  return parts.l_g + contrastive_weight(t_avg, config) * (parts.l_n_e + parts.l_n_d - parts.l_p_d - parts.l_p_e);
}

}  // namespace chatzero
