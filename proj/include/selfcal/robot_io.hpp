#pragma once

#include <filesystem>
#include <string>

#include "selfcal/robot_model.hpp"

namespace selfcal {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Load a robot description (frames, chains, mask, sensors) from JSON.
/// The model is validated before being returned. Taxel patches may reference
/// a CSV sidecar (`taxel_csv`: "patch_id,taxel_id,x,y,z") resolved relative
/// to the robot file.
RobotModel load_robot(const std::filesystem::path& path);

void save_robot(const RobotModel& model, const std::filesystem::path& path);

std::string robot_to_json(const RobotModel& model);
RobotModel robot_from_json(const std::string& text,
                           const std::filesystem::path& base_dir = {});

}  // namespace selfcal
