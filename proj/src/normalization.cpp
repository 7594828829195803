#include "gcdt/data/normalization.h"

#include <algorithm>
#include <array>
#include <cmath>

namespace gcdt::data {

std::vector<double> Standardizer::normalize(const std::vector<double>& x) const {
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mean[i]) / std[i];
  return z;
}

std::vector<double> Standardizer::denormalize(const std::vector<double>& z) const {
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = z[i] * std[i] + mean[i];
  return x;
}

namespace {

// Two-pass accumulation keeps the result independent of magnitude drift.
struct Moments {
  explicit Moments(std::size_t dim) : sum(dim, 0.0), sq(dim, 0.0) {}
  std::vector<double> sum;
  std::vector<double> sq;
  std::size_t n = 0;
};

Standardizer finish(const std::vector<double>& mean, const Moments& centered) {
  Standardizer s;
  s.mean = mean;
  s.std.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i)
    s.std[i] = std::max(std::sqrt(centered.sq[i] / static_cast<double>(centered.n)), kMinStd);
  return s;
}

}  // namespace

NormStats compute_norm_stats(const Dataset& d, const TaskRegistry& tasks) {
  if (d.empty()) throw DatasetError("compute_norm_stats: empty dataset");
  struct Acc {
    Moments obs, goal, act;
  };
  std::map<std::string, Acc> acc;
  auto get = [&](const std::string& id) -> Acc& {
    auto it = acc.find(id);
    if (it != acc.end()) return it->second;
    auto spec = tasks.find(id);
    if (spec == tasks.end()) throw DatasetError("compute_norm_stats: unknown task '" + id + "'");
    const auto& s = spec->second;
    return acc.emplace(id, Acc{Moments(s.obs_dim), Moments(s.goal_dim), Moments(s.act_dim)}).first->second;
  };
  auto add = [](Moments& m, const std::vector<double>& x) {
    for (std::size_t i = 0; i < x.size(); ++i) m.sum[i] += x[i];
    ++m.n;
  };
  for (const auto& tr : d.trajectories) {
    Acc& a = get(tr.task_id);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      add(a.obs, tr.observations[t]);
      add(a.act, tr.actions[t]);
      add(a.goal, tr.goal);
    }
  }
  auto mean_of = [](const Moments& m) {
    std::vector<double> mean(m.sum.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = m.sum[i] / static_cast<double>(m.n);
    return mean;
  };
  std::map<std::string, std::array<std::vector<double>, 3>> means;
  for (auto& [id, a] : acc) means[id] = {mean_of(a.obs), mean_of(a.goal), mean_of(a.act)};

  std::map<std::string, Acc> centered;
  for (auto& [id, a] : acc)
    centered.emplace(id, Acc{Moments(a.obs.sum.size()), Moments(a.goal.sum.size()), Moments(a.act.sum.size())});
  auto add_sq = [](Moments& m, const std::vector<double>& x, const std::vector<double>& mean) {
    for (std::size_t i = 0; i < x.size(); ++i) m.sq[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
    ++m.n;
  };
  for (const auto& tr : d.trajectories) {
    Acc& c = centered.at(tr.task_id);
    const auto& mu = means.at(tr.task_id);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      add_sq(c.obs, tr.observations[t], mu[0]);
      add_sq(c.goal, tr.goal, mu[1]);
      add_sq(c.act, tr.actions[t], mu[2]);
    }
  }

  NormStats out;
  for (auto& [id, c] : centered) {
    const auto& mu = means.at(id);
    TaskNormStats s;
    s.obs = finish(mu[0], c.obs);
    s.goal = finish(mu[1], c.goal);
    s.act = finish(mu[2], c.act);
    s.time_to_goal_scale = static_cast<double>(tasks.at(id).max_episode_steps);
    out.emplace(id, std::move(s));
  }
  return out;
}

}  // namespace gcdt::data
