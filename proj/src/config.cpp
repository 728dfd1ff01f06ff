#include "mqc/config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace mqc {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

bool looks_numeric(const std::string& s) {
  if (s.empty()) return false;
  const char c = s[0];
  return std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' ||
         c == '.';
}

TomlDoc::Value parse_scalar(const std::string& raw, const std::string& where) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) {
        ++i;
        switch (raw[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default:
            throw FormatError(where + ": unsupported escape \\" +
                              std::string(1, raw[i]));
        }
      } else {
        out += raw[i];
      }
    }
    return out;
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (looks_numeric(raw)) {
    // integer unless it carries a fractional part or exponent
    if (raw.find_first_of(".eE") == std::string::npos) {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(raw, &used);
      if (used != raw.size())
        throw FormatError(where + ": bad integer '" + raw + "'");
      return v;
    }
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size())
      throw FormatError(where + ": bad number '" + raw + "'");
    return v;
  }
  throw FormatError(where + ": cannot parse value '" + raw + "'");
}

std::vector<std::string> split_array_items(const std::string& inner,
                                           const std::string& where) {
  std::vector<std::string> items;
  std::string cur;
  bool in_str = false;
  for (char c : inner) {
    if (c == '"') in_str = !in_str;
    if (c == ',' && !in_str) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_str) throw FormatError(where + ": unterminated string in array");
  const std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);
  return items;
}

}  // namespace

TomlDoc TomlDoc::parse(const std::string& text) {
  TomlDoc doc;
  std::istringstream in(text);
  std::string line, table;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw FormatError(where + ": malformed table header");
      table = trim(line.substr(1, line.size() - 2));
      if (table.empty()) throw FormatError(where + ": empty table name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (key.empty() || raw.empty())
      throw FormatError(where + ": empty key or value");
    const std::string full = table.empty() ? key : table + "." + key;
    if (doc.values_.count(full))
      throw FormatError(where + ": duplicate key " + full);

    if (raw.front() == '[') {
      if (raw.back() != ']') throw FormatError(where + ": malformed array");
      const auto items = split_array_items(raw.substr(1, raw.size() - 2), where);
      if (!items.empty() && items.front().front() == '"') {
        std::vector<std::string> out;
        for (const auto& it : items)
          out.push_back(std::get<std::string>(parse_scalar(it, where)));
        doc.values_[full] = out;
      } else {
        std::vector<double> out;
        for (const auto& it : items) {
          const Value v = parse_scalar(it, where);
          if (std::holds_alternative<std::int64_t>(v))
            out.push_back(static_cast<double>(std::get<std::int64_t>(v)));
          else if (std::holds_alternative<double>(v))
            out.push_back(std::get<double>(v));
          else
            throw FormatError(where + ": array items must be numbers");
        }
        doc.values_[full] = out;
      }
    } else {
      doc.values_[full] = parse_scalar(raw, where);
    }
  }
  return doc;
}

TomlDoc TomlDoc::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TomlDoc::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw ArgumentError("config key is not a string: " + key);
}

std::int64_t TomlDoc::get_int(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw ArgumentError("config key is not an integer: " + key);
}

double TomlDoc::get_double(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* v = std::get_if<double>(&it->second)) return *v;
  if (const auto* i = std::get_if<std::int64_t>(&it->second))
    return static_cast<double>(*i);
  throw ArgumentError("config key is not a number: " + key);
}

bool TomlDoc::get_bool(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* v = std::get_if<bool>(&it->second)) return *v;
  throw ArgumentError("config key is not a boolean: " + key);
}

std::vector<double> TomlDoc::get_double_array(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
  throw ArgumentError("config key is not a numeric array: " + key);
}

std::vector<std::string> TomlDoc::get_string_array(
    const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("config key missing: " + key);
  if (const auto* v = std::get_if<std::vector<std::string>>(&it->second))
    return *v;
  throw ArgumentError("config key is not a string array: " + key);
}

namespace {

void read_train_cfg(const TomlDoc& doc, const std::string& table,
                    TrainConfig& cfg, std::set<std::string>& known) {
  auto key = [&](const std::string& k) {
    known.insert(table + "." + k);
    return table + "." + k;
  };
  if (doc.has(key("learning_rate")))
    cfg.learning_rate = doc.get_double(table + ".learning_rate");
  if (doc.has(key("weight_decay")))
    cfg.weight_decay = doc.get_double(table + ".weight_decay");
  if (doc.has(key("scheduler_factor")))
    cfg.scheduler_factor = doc.get_double(table + ".scheduler_factor");
  if (doc.has(key("scheduler_patience")))
    cfg.scheduler_patience =
        static_cast<int>(doc.get_int(table + ".scheduler_patience"));
  if (doc.has(key("early_stop_patience")))
    cfg.early_stop_patience =
        static_cast<int>(doc.get_int(table + ".early_stop_patience"));
  if (doc.has(key("batch_size")))
    cfg.batch_size = static_cast<int>(doc.get_int(table + ".batch_size"));
  if (doc.has(key("max_epochs")))
    cfg.max_epochs = static_cast<int>(doc.get_int(table + ".max_epochs"));
  if (doc.has(key("seed")))
    cfg.seed = static_cast<std::uint64_t>(doc.get_int(table + ".seed"));
}

}  // namespace

RunConfig RunConfig::from_toml(const TomlDoc& doc) {
  RunConfig cfg;
  std::set<std::string> known;
  auto key = [&](const std::string& k) {
    known.insert(k);
    return k;
  };

  if (!doc.has(key("schema_version")))
    throw FormatError("config: schema_version is required");
  cfg.schema_version = static_cast<int>(doc.get_int("schema_version"));
  if (cfg.schema_version != 1)
    throw FormatError("config: unsupported schema_version " +
                      std::to_string(cfg.schema_version));

  if (doc.has(key("passes")))
    cfg.passes = static_cast<int>(doc.get_int("passes"));
  if (doc.has(key("master_seed")))
    cfg.master_seed = static_cast<std::uint64_t>(doc.get_int("master_seed"));
  if (doc.has(key("workers")))
    cfg.workers = static_cast<int>(doc.get_int("workers"));
  if (doc.has(key("out_dir"))) cfg.out_dir = doc.get_string("out_dir");

  if (doc.has(key("motion.rotation_range_deg")))
    cfg.motion.rotation_range_deg = doc.get_double("motion.rotation_range_deg");
  if (doc.has(key("motion.translation_range_mm")))
    cfg.motion.translation_range_mm =
        doc.get_double("motion.translation_range_mm");
  if (doc.has(key("motion.n_transforms_min")))
    cfg.motion.n_transforms_min =
        static_cast<int>(doc.get_int("motion.n_transforms_min"));
  if (doc.has(key("motion.n_transforms_max")))
    cfg.motion.n_transforms_max =
        static_cast<int>(doc.get_int("motion.n_transforms_max"));
  if (doc.has(key("motion.phase_axis")))
    cfg.motion.phase_axis = static_cast<int>(doc.get_int("motion.phase_axis"));
  if (doc.has(key("motion.random_phase_axis")))
    cfg.motion.random_phase_axis = doc.get_bool("motion.random_phase_axis");

  auto& a = cfg.augment;
  if (doc.has(key("augment.elastic_grid"))) {
    const auto g = doc.get_double_array("augment.elastic_grid");
    if (g.size() != 3)
      throw ArgumentError("config: augment.elastic_grid needs 3 entries");
    for (int i = 0; i < 3; ++i) a.elastic_grid[i] = static_cast<int>(g[i]);
  }
  if (doc.has(key("augment.elastic_max_disp_mm")))
    a.elastic_max_disp_mm = doc.get_double("augment.elastic_max_disp_mm");
  if (doc.has(key("augment.bias_order")))
    a.bias_order = static_cast<int>(doc.get_int("augment.bias_order"));
  if (doc.has(key("augment.bias_coeff_range")))
    a.bias_coeff_range = doc.get_double("augment.bias_coeff_range");
  if (doc.has(key("augment.contrast_log_gamma_range")))
    a.contrast_log_gamma_range =
        doc.get_double("augment.contrast_log_gamma_range");
  if (doc.has(key("augment.flip_probability")))
    a.flip_probability = doc.get_double("augment.flip_probability");
  if (doc.has(key("augment.scale_min")))
    a.scale_min = doc.get_double("augment.scale_min");
  if (doc.has(key("augment.scale_max")))
    a.scale_max = doc.get_double("augment.scale_max");
  if (doc.has(key("augment.roi"))) {
    const auto r = doc.get_double_array("augment.roi");
    if (r.size() != 3) throw ArgumentError("config: augment.roi needs 3 entries");
    for (int i = 0; i < 3; ++i) a.roi[i] = static_cast<int>(r[i]);
  }
  if (doc.has(key("augment.normalize_lo_pct")))
    a.normalize_lo_pct = doc.get_double("augment.normalize_lo_pct");
  if (doc.has(key("augment.normalize_hi_pct")))
    a.normalize_hi_pct = doc.get_double("augment.normalize_hi_pct");
  if (doc.has(key("augment.enable_elastic")))
    a.enable_elastic = doc.get_bool("augment.enable_elastic");
  if (doc.has(key("augment.enable_scale")))
    a.enable_scale = doc.get_bool("augment.enable_scale");
  if (doc.has(key("augment.enable_flip")))
    a.enable_flip = doc.get_bool("augment.enable_flip");
  if (doc.has(key("augment.enable_bias")))
    a.enable_bias = doc.get_bool("augment.enable_bias");
  if (doc.has(key("augment.enable_contrast")))
    a.enable_contrast = doc.get_bool("augment.enable_contrast");
  if (doc.has(key("augment.enable_motion")))
    a.enable_motion = doc.get_bool("augment.enable_motion");

  if (doc.has(key("rms.sphere_radius_mm")))
    cfg.rms.sphere_radius_mm = doc.get_double("rms.sphere_radius_mm");
  if (doc.has(key("rms.aggregation"))) {
    const auto agg = doc.get_string("rms.aggregation");
    if (agg == "mean")
      cfg.rms.aggregation = RmsAggregation::Mean;
    else if (agg == "max")
      cfg.rms.aggregation = RmsAggregation::Max;
    else
      throw ArgumentError("config: rms.aggregation must be mean or max");
  }

  if (doc.has(key("bins.n_bins")))
    cfg.bins.n_bins = static_cast<int>(doc.get_int("bins.n_bins"));
  if (doc.has(key("bins.lo"))) cfg.bins.lo = doc.get_double("bins.lo");
  if (doc.has(key("bins.hi"))) cfg.bins.hi = doc.get_double("bins.hi");
  if (doc.has(key("bins.soft_sigma")))
    cfg.bins.soft_sigma = doc.get_double("bins.soft_sigma");

  // published optimizer settings for this pipeline are the defaults
  cfg.pretrain_cfg.learning_rate = 2e-5;
  cfg.pretrain_cfg.weight_decay = 0.05;
  cfg.transfer_cfg.learning_rate = 5e-4;
  cfg.transfer_cfg.weight_decay = 0.05;
  cfg.transfer_cfg.batch_size = 12;
  cfg.transfer_cfg.max_epochs = 50;
  cfg.scratch_cfg.learning_rate = 3e-6;
  cfg.scratch_cfg.weight_decay = 0.06;
  cfg.scratch_cfg.batch_size = 12;
  cfg.scratch_cfg.early_stop_patience = 100;
  cfg.scratch_cfg.max_epochs = 500;
  read_train_cfg(doc, "pretrain", cfg.pretrain_cfg, known);
  read_train_cfg(doc, "transfer", cfg.transfer_cfg, known);
  read_train_cfg(doc, "scratch", cfg.scratch_cfg, known);

  if (doc.has(key("transfer.dropout")))
    cfg.transfer_dropout = doc.get_double("transfer.dropout");
  if (doc.has(key("scratch.dropout")))
    cfg.scratch_dropout = doc.get_double("scratch.dropout");
  if (doc.has(key("probe.head_hidden")))
    cfg.head_hidden = static_cast<int>(doc.get_int("probe.head_hidden"));
  if (doc.has(key("probe.trunk_hidden"))) {
    cfg.trunk_hidden.clear();
    for (double h : doc.get_double_array("probe.trunk_hidden"))
      cfg.trunk_hidden.push_back(static_cast<int>(h));
  }

  for (const auto& [k, v] : doc.values())
    if (!known.count(k)) throw FormatError("config: unknown key " + k);

  cfg.augment.validate();
  cfg.motion.validate();
  cfg.bins.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_toml(TomlDoc::parse_file(path));
}

}  // namespace mqc
