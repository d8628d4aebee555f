#include "ftm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "ftm/io.hpp"

namespace ftm {

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names = RunConfig{}.variants;
  return names;
}

bool is_known_variant(const std::string& name) {
  const auto& v = known_variants();
  return std::find(v.begin(), v.end(), name) != v.end();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("cannot parse '" + value + "'");
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) {
            c.*member = parse_number<T>(v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

// Serialization order is the order of this table.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", number_field(&RunConfig::seed)},
      {"scale", number_field(&RunConfig::scale)},
      {"lm_sentences", number_field(&RunConfig::lm_sentences)},
      {"heldout_sentences", number_field(&RunConfig::heldout_sentences)},
      {"near_miss_rate", number_field(&RunConfig::near_miss_rate)},
      {"far_field_rate", number_field(&RunConfig::far_field_rate)},
      {"far_field_sigma", number_field(&RunConfig::far_field_sigma)},
      {"lm_order", number_field(&RunConfig::lm_order)},
      {"lm_discount", number_field(&RunConfig::lm_discount)},
      {"confusion_lambda", number_field(&RunConfig::confusion_lambda)},
      {"confusion_sigma", number_field(&RunConfig::confusion_sigma)},
      {"beam", number_field(&RunConfig::beam)},
      {"max_arcs_per_step", number_field(&RunConfig::max_arcs_per_step)},
      {"hidden_dim", number_field(&RunConfig::hidden_dim)},
      {"head_hidden", number_field(&RunConfig::head_hidden)},
      {"epochs", number_field(&RunConfig::epochs)},
      {"batch_size", number_field(&RunConfig::batch_size)},
      {"learning_rate", number_field(&RunConfig::learning_rate)},
      {"beta1", number_field(&RunConfig::beta1)},
      {"beta2", number_field(&RunConfig::beta2)},
      {"adam_eps", number_field(&RunConfig::adam_eps)},
      {"target_fs", number_field(&RunConfig::target_fs)},
      {"encoder_lr_scale", number_field(&RunConfig::encoder_lr_scale)},
      {"variants",
       {[](RunConfig& c, const std::string& v) {
          c.variants.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            if (!is_known_variant(item)) throw ConfigError("unknown variant '" + item + "' in config");
            c.variants.push_back(item);
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (const auto& v : c.variants) out += (out.empty() ? "" : ",") + v;
          return out;
        }}},
  };
  return table;
}

void check(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  require(c.scale > 0.0, "scale must be positive");
  require(c.lm_sentences > 0 && c.heldout_sentences > 0, "corpus sizes must be positive");
  require(c.near_miss_rate >= 0.0 && c.near_miss_rate <= 1.0, "near_miss_rate must lie in [0, 1]");
  require(c.far_field_rate >= 0.0 && c.far_field_rate <= 1.0 && c.far_field_sigma >= 0.0,
          "far-field parameters out of range");
  require(c.lm_order >= 1, "lm_order must be at least 1");
  require(c.lm_discount > 0.0 && c.lm_discount < 1.0, "lm_discount must lie in (0, 1)");
  require(c.confusion_lambda > 0.0 && c.confusion_sigma >= 0.0, "confusion parameters out of range");
  require(c.beam >= 1 && c.max_arcs_per_step >= 1, "beam and max_arcs_per_step must be positive");
  require(c.hidden_dim >= 1 && c.head_hidden >= 1, "model sizes must be positive");
  require(c.epochs >= 1 && c.batch_size >= 1, "epochs and batch_size must be positive");
  require(c.learning_rate >= 0.0 && c.encoder_lr_scale >= 0.0, "learning rates must be non-negative");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps must be positive");
  require(c.target_fs >= 0.0 && c.target_fs <= 1.0, "target_fs must lie in [0, 1]");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "run_dir") {
      c.run_dir = value;
      continue;
    }
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second.set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  check(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c = parse_config(read_file(path));
  if (c.run_dir.is_relative()) c.run_dir = path.parent_path() / c.run_dir;
  return c;
}

std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

}  // namespace ftm
