#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gcdt/data/trajectory.h"

namespace gcdt::data {

/// "<dir>/<stem>.tasks.json" for "<dir>/<stem>.jsonl".
std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path);

std::string task_registry_to_json(const TaskRegistry& tasks);
/// Throws DatasetError on malformed JSON or an invalid spec.
TaskRegistry task_registry_from_json(std::string_view text);

TaskRegistry load_task_registry(const std::filesystem::path& sidecar);
void save_task_registry(const std::filesystem::path& sidecar, const TaskRegistry& tasks);

/// Parses one JSON-Lines trajectory record. Accepted keys are exactly
/// "task", "obs", "act", "goal", "achieved", plus the optional
/// "provenance" written by augmentation.
Trajectory parse_trajectory_line(std::string_view line);
std::string format_trajectory_line(const Trajectory& tr, bool with_provenance);

/// Reads a dataset and validates every record against `tasks`. Errors name
/// the offending line number.
Dataset load_dataset(const std::filesystem::path& path, const TaskRegistry& tasks);
/// Same, with the registry read from the dataset's sidecar.
Dataset load_dataset(const std::filesystem::path& path);

/// Writes the dataset and its task sidecar. The provenance key is emitted
/// only when the dataset contains relabeled trajectories, so files of
/// original demos carry exactly the five base keys.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset, const TaskRegistry& tasks);

/// Writes via a temporary sibling file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace gcdt::data
