#include "turnwise/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "turnwise/errors.hpp"

namespace turnwise::analysis {

double per_token_score(double overall_pct, double avg_tokens) {
  if (!(avg_tokens > 0.0)) throw InvalidInput("per_token_score: avg_tokens must be positive");
  return overall_pct / avg_tokens;
}

RankVector::RankVector(std::vector<int> ranks) : ranks_(std::move(ranks)) {
  std::vector<bool> seen(ranks_.size() + 1, false);
  for (int r : ranks_) {
    if (r < 1 || static_cast<std::size_t>(r) > ranks_.size() || seen[static_cast<std::size_t>(r)]) {
      throw InvalidInput("rank vector is not a permutation of 1..n");
    }
    seen[static_cast<std::size_t>(r)] = true;
  }
}

RankVector RankVector::reversed() const {
  std::vector<int> out(ranks_.size());
  const int n = static_cast<int>(ranks_.size());
  std::transform(ranks_.begin(), ranks_.end(), out.begin(), [n](int r) { return n + 1 - r; });
  return RankVector(std::move(out));
}

namespace {

long long sum_squared_rank_diff(const RankVector& a, const RankVector& b) {
  if (a.size() != b.size()) throw InvalidInput("spearman: rank vectors differ in length");
  if (a.size() < 2) throw InvalidInput("spearman: need at least two ranked items");
  long long sum_d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long long d = a.ranks()[i] - b.ranks()[i];
    sum_d2 += d * d;
  }
  return sum_d2;
}

}  // namespace

double spearman(const RankVector& a, const RankVector& b) {
  const long long sum_d2 = sum_squared_rank_diff(a, b);
  const auto n = static_cast<long long>(a.size());
  return 1.0 - static_cast<double>(6 * sum_d2) / static_cast<double>(n * (n * n - 1));
}

double mean_spearman(const RankVector& reference, std::span<const RankVector> others) {
  if (others.empty()) throw InvalidInput("mean_spearman: no rankings to compare");
  // Summing the integer numerators first leaves a single rounding step.
  long long total = 0;
  for (const auto& o : others) total += sum_squared_rank_diff(reference, o);
  const auto n = static_cast<long long>(reference.size());
  const auto k = static_cast<long long>(others.size());
  return 1.0 - static_cast<double>(6 * total) / static_cast<double>(k * n * (n * n - 1));
}

NoiseModel::NoiseModel(double rho_minus, double rho_plus) : rho_minus_(rho_minus), rho_plus_(rho_plus) {
  if (!(rho_minus >= 0.0) || !(rho_plus >= 0.0)) throw InvalidInput("noise rates must be nonnegative");
  if (!(rho_minus + rho_plus < 1.0)) throw InvalidInput("noise rates must satisfy rho_minus + rho_plus < 1");
}

double corrected_loss(double loss_as_labeled, double loss_as_flipped, NoisyLabel observed, const NoiseModel& noise) {
  // Weight on the observed label uses the flip rate of the opposite class.
  const NoisyLabel opposite = observed == NoisyLabel::Relevant ? NoisyLabel::Irrelevant : NoisyLabel::Relevant;
  const double keep = 1.0 - noise.flip_rate(opposite);
  const double flip = noise.flip_rate(observed);
  const double denom = 1.0 - noise.rho_minus() - noise.rho_plus();
  return (keep * loss_as_labeled - flip * loss_as_flipped) / denom;
}

double effective_samples(double n, double eps_v) {
  if (!(eps_v >= 0.0 && eps_v < 0.5)) throw InvalidInput("eps_v must lie in [0, 0.5)");
  if (!(n >= 0.0)) throw InvalidInput("sample count must be nonnegative");
  const double f = 1.0 - 2.0 * eps_v;
  // n * f first: keeps round inputs such as (1000, 0.1) exact.
  return n * f * f;
}

double sample_budget(double log_covering, double eps_v, double eps, double constant) {
  if (!(log_covering > 0.0)) throw InvalidInput("log covering number must be positive");
  if (!(eps > 0.0)) throw InvalidInput("target excess risk must be positive");
  if (!(constant > 0.0)) throw InvalidInput("constant must be positive");
  if (!(eps_v >= 0.0 && eps_v < 0.5)) throw InvalidInput("eps_v must lie in [0, 0.5)");
  const double f = 1.0 - 2.0 * eps_v;
  return constant * log_covering / (f * f * eps * eps);
}

}  // namespace turnwise::analysis
