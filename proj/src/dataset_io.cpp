#include "gcdt/data/dataset_io.h"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <system_error>

namespace gcdt::data {

using nlohmann::ordered_json;

std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  return p.replace_extension(".tasks.json");
}

namespace {

ordered_json spec_to_json(const TaskSpec& s) {
  ordered_json j;
  j["obs_dim"] = s.obs_dim;
  j["goal_dim"] = s.goal_dim;
  j["act_dim"] = s.act_dim;
  j["max_episode_steps"] = s.max_episode_steps;
  j["expected_steps"] = s.expected_steps;
  j["success_threshold"] = s.success_threshold;
  return j;
}

TaskSpec spec_from_json(const std::string& id, const ordered_json& j) {
  TaskSpec s;
  s.task_id = id;
  s.obs_dim = j.at("obs_dim").get<std::size_t>();
  s.goal_dim = j.at("goal_dim").get<std::size_t>();
  s.act_dim = j.at("act_dim").get<std::size_t>();
  s.max_episode_steps = j.at("max_episode_steps").get<std::size_t>();
  s.expected_steps = j.at("expected_steps").get<std::size_t>();
  s.success_threshold = j.at("success_threshold").get<double>();
  s.validate();
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Rows rows_from_json(const ordered_json& j, const char* key) {
  if (!j.is_array()) throw DatasetError(std::string("\"") + key + "\" must be an array of arrays");
  Rows rows;
  rows.reserve(j.size());
  for (const auto& r : j) {
    if (!r.is_array()) throw DatasetError(std::string("\"") + key + "\" must be an array of arrays");
    std::vector<double> row;
    row.reserve(r.size());
    for (const auto& v : r) {
      if (!v.is_number()) throw DatasetError(std::string("\"") + key + "\" contains a non-number");
      row.push_back(v.get<double>());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string task_registry_to_json(const TaskRegistry& tasks) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, spec] : tasks) j[id] = spec_to_json(spec);
  return j.dump(2);
}

TaskRegistry task_registry_from_json(std::string_view text) {
  TaskRegistry reg;
  try {
    const auto j = ordered_json::parse(text);
    if (!j.is_object()) throw DatasetError("task registry must be a JSON object");
    for (const auto& [id, spec] : j.items()) reg.emplace(id, spec_from_json(id, spec));
  } catch (const ordered_json::exception& e) {
    throw DatasetError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DatasetError(e.what());
  }
  return reg;
}

TaskRegistry load_task_registry(const std::filesystem::path& sidecar) {
  try {
    return task_registry_from_json(read_file(sidecar));
  } catch (const DatasetError& e) {
    throw DatasetError("task sidecar '" + sidecar.string() + "': " + e.what());
  }
}

void save_task_registry(const std::filesystem::path& sidecar, const TaskRegistry& tasks) {
  write_file_atomic(sidecar, task_registry_to_json(tasks) + "\n");
}

Trajectory parse_trajectory_line(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::parse_error& e) {
    throw DatasetError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetError("record must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "task" && key != "obs" && key != "act" && key != "goal" && key != "achieved" && key != "provenance")
      throw DatasetError("unexpected key \"" + key + "\"");
  for (const char* key : {"task", "obs", "act", "goal", "achieved"})
    if (!j.contains(key)) throw DatasetError(std::string("missing key \"") + key + "\"");

  Trajectory tr;
  if (!j["task"].is_string()) throw DatasetError("\"task\" must be a string");
  tr.task_id = j["task"].get<std::string>();
  tr.observations = rows_from_json(j["obs"], "obs");
  tr.actions = rows_from_json(j["act"], "act");
  tr.achieved_goals = rows_from_json(j["achieved"], "achieved");
  if (!j["goal"].is_array()) throw DatasetError("\"goal\" must be an array");
  for (const auto& v : j["goal"]) {
    if (!v.is_number()) throw DatasetError("\"goal\" contains a non-number");
    tr.goal.push_back(v.get<double>());
  }
  if (j.contains("provenance")) {
    const auto& p = j["provenance"];
    if (p == "original") tr.provenance = Provenance::kOriginal;
    else if (p == "relabeled") tr.provenance = Provenance::kRelabeled;
    else throw DatasetError("\"provenance\" must be \"original\" or \"relabeled\"");
  }
  return tr;
}

std::string format_trajectory_line(const Trajectory& tr, bool with_provenance) {
  ordered_json j;
  j["task"] = tr.task_id;
  j["obs"] = tr.observations;
  j["act"] = tr.actions;
  j["goal"] = tr.goal;
  j["achieved"] = tr.achieved_goals;
  if (with_provenance) j["provenance"] = to_string(tr.provenance);
  return j.dump();
}

Dataset load_dataset(const std::filesystem::path& path, const TaskRegistry& tasks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset '" + path.string() + "'");
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      Trajectory tr = parse_trajectory_line(line);
      auto it = tasks.find(tr.task_id);
      if (it == tasks.end()) throw DatasetError("unknown task_id '" + tr.task_id + "'");
      tr.validate(it->second);
      ds.trajectories.push_back(std::move(tr));
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, load_task_registry(sidecar_path(path)));
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset, const TaskRegistry& tasks) {
  const bool with_provenance = dataset.count(Provenance::kRelabeled) > 0;
  std::string out;
  for (const auto& tr : dataset.trajectories) {
    out += format_trajectory_line(tr, with_provenance);
    out += '\n';
  }
  write_file_atomic(path, out);
  save_task_registry(sidecar_path(path), tasks);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot move output into place at '" + path.string() + "': " + ec.message());
  }
}

}  // namespace gcdt::data
