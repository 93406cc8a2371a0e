#pragma once

#include <span>
#include <string>
#include <vector>

namespace turnwise::analysis {

// Overall score (percent) earned per generated token. Throws InvalidInput
// unless avg_tokens > 0.
double per_token_score(double overall_pct, double avg_tokens);

// Ranks 1..n over a fixed model list.
class RankVector {
 public:
  // Throws InvalidInput unless `ranks` is a permutation of 1..n.
  explicit RankVector(std::vector<int> ranks);

  std::size_t size() const { return ranks_.size(); }
  std::span<const int> ranks() const { return ranks_; }
  RankVector reversed() const;

 private:
  std::vector<int> ranks_;
};

// rho = 1 - 6 * sum d_i^2 / (n (n^2 - 1)) for tie-free rankings.
// Throws InvalidInput on length mismatch or n < 2.
double spearman(const RankVector& a, const RankVector& b);

// Mean of spearman(reference, o) over `others`, evaluated from the summed
// integer rank differences.
double mean_spearman(const RankVector& reference, std::span<const RankVector> others);

enum class NoisyLabel { Irrelevant, Relevant };

// Class-conditional label noise: rho_minus = P(label R | truth I),
// rho_plus = P(label I | truth R).
class NoiseModel {
 public:
  // Throws InvalidInput unless both rates are >= 0 and sum to < 1.
  NoiseModel(double rho_minus, double rho_plus);

  double rho_minus() const { return rho_minus_; }
  double rho_plus() const { return rho_plus_; }
  // Probability that a label whose truth is `truth` is observed flipped.
  double flip_rate(NoisyLabel truth) const {
    return truth == NoisyLabel::Relevant ? rho_plus_ : rho_minus_;
  }

 private:
  double rho_minus_;
  double rho_plus_;
};

// Unbiased surrogate for the clean loss under class-conditional noise:
//   observed R: ((1 - rho_minus) * loss_R - rho_plus * loss_I) / (1 - rho_minus - rho_plus)
//   observed I: ((1 - rho_plus) * loss_I - rho_minus * loss_R) / (1 - rho_minus - rho_plus)
// where `loss_as_labeled` is the loss against the observed label and
// `loss_as_flipped` the loss against the opposite one.
double corrected_loss(double loss_as_labeled, double loss_as_flipped, NoisyLabel observed, const NoiseModel& noise);

// (1 - 2 eps_v)^2 * n. Throws InvalidInput unless 0 <= eps_v < 0.5.
double effective_samples(double n, double eps_v);

// constant * log_covering / ((1 - 2 eps_v)^2 * eps^2). An order-of-magnitude
// estimate; the hidden constants and log factors are folded into `constant`.
double sample_budget(double log_covering, double eps_v, double eps, double constant = 1.0);

}  // namespace turnwise::analysis
