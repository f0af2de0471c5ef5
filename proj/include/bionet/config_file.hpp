#pragma once

#include "bionet/training.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace bionet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(BioTarget target);
std::string to_string(Stage2Schedule schedule);
std::string to_string(ScheduleUnit unit);
BioTarget bio_target_from_string(const std::string& s);
Stage2Schedule stage2_schedule_from_string(const std::string& s);
ScheduleUnit schedule_unit_from_string(const std::string& s);

/// Flat `key = value` text, one field per line; `#` starts a comment. Keys
/// not present keep the value from `base`; unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

/// Every field, in the same syntax parse_train_config reads.
std::string format_train_config(const TrainConfig& config);
void save_train_config(const std::filesystem::path& path, const TrainConfig& config);

}  // namespace bionet
