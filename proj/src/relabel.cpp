#include "gcdt/data/relabel.h"

namespace gcdt::data {

Dataset hindsight_relabel(const Dataset& d) {
  if (d.count(Provenance::kRelabeled) > 0)
    throw DatasetError("hindsight_relabel: input already contains relabeled trajectories");
  Dataset out;
  out.trajectories.reserve(d.size() + d.total_timesteps());
  out.trajectories = d.trajectories;
  for (const auto& src : d.trajectories) {
    for (std::size_t t = 1; t <= src.length(); ++t) {
      Trajectory r;
      r.task_id = src.task_id;
      r.observations.assign(src.observations.begin(), src.observations.begin() + t);
      r.actions.assign(src.actions.begin(), src.actions.begin() + t);
      r.achieved_goals.assign(src.achieved_goals.begin(), src.achieved_goals.begin() + t);
      r.goal = src.achieved_goals[t - 1];
      r.provenance = Provenance::kRelabeled;
      out.trajectories.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace gcdt::data
