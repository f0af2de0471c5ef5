#include "bionet/config_file.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace bionet {

std::string to_string(BioTarget target) {
  return target == BioTarget::ground_truth ? "ground_truth" : "bio_of_ground_truth";
}
std::string to_string(Stage2Schedule schedule) { return schedule == Stage2Schedule::joint ? "joint" : "sequential"; }
std::string to_string(ScheduleUnit unit) { return unit == ScheduleUnit::epochs ? "epochs" : "steps"; }

BioTarget bio_target_from_string(const std::string& s) {
  if (s == "ground_truth") return BioTarget::ground_truth;
  if (s == "bio_of_ground_truth") return BioTarget::bio_of_ground_truth;
  throw ConfigError("unknown bio_target '" + s + "' (expected ground_truth or bio_of_ground_truth)");
}

Stage2Schedule stage2_schedule_from_string(const std::string& s) {
  if (s == "joint") return Stage2Schedule::joint;
  if (s == "sequential") return Stage2Schedule::sequential;
  throw ConfigError("unknown stage2_schedule '" + s + "' (expected joint or sequential)");
}

ScheduleUnit schedule_unit_from_string(const std::string& s) {
  if (s == "epochs") return ScheduleUnit::epochs;
  if (s == "steps") return ScheduleUnit::steps;
  throw ConfigError("unknown lr_schedule_unit '" + s + "' (expected epochs or steps)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (!is || !is.eof()) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("'" + s + "' is not a boolean (expected true or false)");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(item));
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number_field(T TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(v); },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return num(c.*member);
            else return std::to_string(c.*member);
          }};
}

Field weight_field(double LossWeights::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.weights.*member = parse_number<double>(v); },
          [member](const TrainConfig& c) { return num(c.weights.*member); }};
}

Field adam_field(double AdamOptions::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.adam.*member = parse_number<double>(v); },
          [member](const TrainConfig& c) { return num(c.adam.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"epochs", number_field(&TrainConfig::epochs)},
      {"batch_size", number_field(&TrainConfig::batch_size)},
      {"base_lr", number_field(&TrainConfig::base_lr)},
      {"lr_decay_epochs",
       {[](TrainConfig& c, const std::string& v) { c.lr_decay_epochs = parse_int_list(v); },
        [](const TrainConfig& c) { return format_int_list(c.lr_decay_epochs); }}},
      {"lr_decay_factor", number_field(&TrainConfig::lr_decay_factor)},
      {"lr_schedule_unit",
       {[](TrainConfig& c, const std::string& v) { c.lr_schedule_unit = schedule_unit_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.lr_schedule_unit); }}},
      {"adam_beta1", adam_field(&AdamOptions::beta1)},
      {"adam_beta2", adam_field(&AdamOptions::beta2)},
      {"adam_eps", adam_field(&AdamOptions::eps)},
      {"seed", number_field(&TrainConfig::seed)},
      {"augment",
       {[](TrainConfig& c, const std::string& v) { c.augmentation.enabled = parse_bool(v); },
        [](const TrainConfig& c) { return std::string(c.augmentation.enabled ? "true" : "false"); }}},
      {"flip_prob",
       {[](TrainConfig& c, const std::string& v) { c.augmentation.flip_prob = parse_number<double>(v); },
        [](const TrainConfig& c) { return num(c.augmentation.flip_prob); }}},
      {"max_rotation_deg",
       {[](TrainConfig& c, const std::string& v) { c.augmentation.max_rotation_deg = parse_number<double>(v); },
        [](const TrainConfig& c) { return num(c.augmentation.max_rotation_deg); }}},
      {"ablation_mode",
       {[](TrainConfig& c, const std::string& v) {
          try {
            c.ablation_mode = ablation_mode_from_string(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
          }
        },
        [](const TrainConfig& c) { return to_string(c.ablation_mode); }}},
      {"base_width", number_field(&TrainConfig::base_width)},
      {"depth", number_field(&TrainConfig::depth)},
      {"bio_head_width", number_field(&TrainConfig::bio_head_width)},
      {"norm_groups", number_field(&TrainConfig::norm_groups)},
      {"w_multilayers", weight_field(&LossWeights::w_multilayers)},
      {"w_choroid", weight_field(&LossWeights::w_choroid)},
      {"w_bio", weight_field(&LossWeights::w_bio)},
      {"ce_form",
       {[](TrainConfig& c, const std::string& v) {
          try {
            c.ce_form = cross_entropy_form_from_string(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
          }
        },
        [](const TrainConfig& c) { return to_string(c.ce_form); }}},
      {"bio_target",
       {[](TrainConfig& c, const std::string& v) { c.bio_target = bio_target_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.bio_target); }}},
      {"stage2_schedule",
       {[](TrainConfig& c, const std::string& v) { c.stage2_schedule = stage2_schedule_from_string(v); },
        [](const TrainConfig& c) { return to_string(c.stage2_schedule); }}},
      {"warmup_epochs", number_field(&TrainConfig::warmup_epochs)},
      {"bio_blur_prob", number_field(&TrainConfig::bio_blur_prob)},
      {"bio_blur_sigma_max", number_field(&TrainConfig::bio_blur_sigma_max)},
      {"eval_every", number_field(&TrainConfig::eval_every)},
  };
  return table;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
  std::map<std::string, const Field*> lookup;
  for (const auto& [key, field] : fields()) lookup[key] = &field;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->second->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + " (" + key + "): " + e.what());
    }
  }
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_train_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

void save_train_config(const std::filesystem::path& path, const TrainConfig& config) {
  std::ofstream os(path);
  os << format_train_config(config);
  if (!os) throw ConfigError("cannot write config file '" + path.string() + "'");
}

}  // namespace bionet
