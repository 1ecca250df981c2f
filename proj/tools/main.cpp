// evpanel: simulate staggered-adoption event panels, estimate dynamic
// treatment-effect paths, probe their sensitivity to pre-trend violations,
// size minimum detectable effects, and describe the raw panel.
//
// Every run reads one strict INI config, writes a resolved copy of it next
// to the outputs, and stamps each output file with a hash of that resolved
// text, so a result can always be traced to the exact configuration that
// produced it. Reruns are byte-identical: nothing here depends on clocks,
// locales, or iteration order of hashed containers.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evpanel/censor.hpp"
#include "evpanel/descriptives.hpp"
#include "evpanel/errors.hpp"
#include "evpanel/estimators.hpp"
#include "evpanel/inference.hpp"
#include "evpanel/io.hpp"
#include "evpanel/panel.hpp"
#include "evpanel/path_io.hpp"
#include "evpanel/simulate.hpp"
#include "evpanel/stats.hpp"

namespace {

using namespace evpanel;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// strict INI configuration

using IniData = std::map<std::string, std::map<std::string, std::string>>;

IniData parse_ini(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + file);
  IniData data;
  std::string line, section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("malformed section header at line " +
                          std::to_string(line_no));
      }
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) {
        throw ConfigError("empty section name at line " +
                          std::to_string(line_no));
      }
      data[section];
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value at line " +
                        std::to_string(line_no));
    }
    if (section.empty()) {
      throw ConfigError("key outside any [section] at line " +
                        std::to_string(line_no));
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("empty key at line " + std::to_string(line_no));
    }
    auto [it, fresh] = data[section].emplace(key, value);
    if (!fresh) {
      throw ConfigError("duplicate key '" + key + "' in [" + section +
                        "] at line " + std::to_string(line_no));
    }
  }
  return data;
}

class Config {
 public:
  Config(std::string section,
         std::vector<std::pair<std::string, std::string>> defaults)
      : section_(std::move(section)), entries_(std::move(defaults)) {
    for (const auto& [k, v] : entries_) values_[k] = v;
  }

  const std::string& section() const { return section_; }

  bool knows(const std::string& key) const { return values_.count(key) > 0; }

  void apply(const std::map<std::string, std::string>& overrides) {
    for (const auto& [k, v] : overrides) {
      auto it = values_.find(k);
      if (it == values_.end()) {
        throw ConfigError("unknown key '" + k + "' in [" + section_ + "]");
      }
      it->second = v;
    }
  }

  const std::string& str(const std::string& key) const {
    return values_.at(key);
  }

  long integer(const std::string& key) const {
    return parse_long(str(key), key);
  }

  uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    try {
      size_t pos = 0;
      const unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected an unsigned integer, got '" +
                        s + "'");
    }
  }

  double number(const std::string& key) const {
    return parse_double(str(key), key);
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(where(key) + ": expected a boolean, got '" + s + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    if (trim(str(key)).empty()) return out;
    for (const auto& part : split(str(key), ',')) {
      const std::string p = trim(part);
      if (p.empty()) {
        throw ConfigError(where(key) + ": empty list element");
      }
      out.push_back(p);
    }
    return out;
  }

  std::vector<double> number_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& p : list(key)) out.push_back(parse_double(p, key));
    return out;
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& p : list(key)) {
      out.push_back(static_cast<int>(parse_long(p, key)));
    }
    return out;
  }

  std::optional<double> maybe_number(const std::string& key) const {
    if (trim(str(key)).empty()) return std::nullopt;
    return number(key);
  }

  std::optional<int> maybe_int(const std::string& key) const {
    if (trim(str(key)).empty()) return std::nullopt;
    return static_cast<int>(integer(key));
  }

  std::string resolved() const {
    std::ostringstream out;
    out << "[" << section_ << "]\n";
    for (const auto& [k, unused] : entries_) {
      out << k << " = " << values_.at(k) << "\n";
    }
    return out.str();
  }

  std::string where(const std::string& key) const {
    return "[" + section_ + "] " + key;
  }

 private:
  long parse_long(const std::string& s, const std::string& key) const {
    try {
      size_t pos = 0;
      const long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected an integer, got '" + s + "'");
    }
  }

  double parse_double(const std::string& s, const std::string& key) const {
    try {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected a number, got '" + s + "'");
    }
  }

  std::string section_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::map<std::string, std::string> values_;
};

Config make_config(const std::string& command) {
  using P = std::pair<std::string, std::string>;
  if (command == "simulate") {
    return Config("simulate",
                  {P{"n_units", "200"},
                   P{"t_min", "0"},
                   P{"t_max", "23"},
                   P{"seed", "1"},
                   P{"lambda_h", "0.5"},
                   P{"xi", "1"},
                   P{"cohort_lambda_h", ""},
                   P{"cohort_xi", ""},
                   P{"outcomes", "y:1:0"},
                   P{"alpha_h", "0"},
                   P{"alpha_n", "0"},
                   P{"sd_u", "0"},
                   P{"sd_v", "0"},
                   P{"sd_eps", "0"},
                   P{"fe_unit_sd", "0"},
                   P{"fe_time_sd", "0"},
                   P{"binary_cut", ""},
                   P{"n_districts", "4"},
                   P{"n_providers", "40"},
                   P{"provider_hazard_sd", "0"},
                   P{"shock", "none"},
                   P{"adoption", "list:8"},
                   P{"never_prob", "0"},
                   P{"truth_horizon", ""}});
  }
  if (command == "estimate") {
    return Config("estimate",
                  {P{"input", ""},
                   P{"estimator", "twfe"},
                   P{"outcome", ""},
                   P{"anchor", "adoption"},
                   P{"leads", "5"},
                   P{"lags", "5"},
                   P{"pool_leads", "0"},
                   P{"pool_lags", "1"},
                   P{"reference", "-2"},
                   P{"allow_zero_reference", "false"},
                   P{"fixed_effects", "unit,period"},
                   P{"covariates", ""},
                   P{"cluster", "unit"},
                   P{"control_group", "never_treated"},
                   P{"cs_base_offset", "2"},
                   P{"sa_weight_vcov", "false"},
                   P{"covariates_in_interactions", "true"},
                   P{"ipw_covariates", ""},
                   P{"apply_censoring", "true"},
                   P{"col_unit", "unit"},
                   P{"col_period", "period"},
                   P{"col_shock", "anchor"},
                   P{"col_adoption", "adoption"},
                   P{"adoption_indicator", "false"},
                   P{"col_outcomes", ""},
                   P{"col_covariates", ""}});
  }
  if (command == "sensitivity") {
    return Config("sensitivity",
                  {P{"path", ""},
                   P{"vcov", ""},
                   P{"m_grid", "0,0.5,1,1.5,2"},
                   P{"level", "0.95"},
                   P{"post_from", "0"},
                   P{"post_to", ""},
                   P{"target_taus", ""},
                   P{"target_weights", ""},
                   P{"scale_on_levels", "false"}});
  }
  if (command == "power") {
    return Config("power",
                  {P{"se", ""},
                   P{"labels", ""},
                   P{"alpha", "0.05"},
                   P{"power", "0.8"}});
  }
  if (command == "describe") {
    return Config("describe",
                  {P{"input", ""},
                   P{"outcomes", ""},
                   P{"anchor", "adoption"},
                   P{"window", "12"},
                   P{"span", "3"},
                   P{"level", "0.95"},
                   P{"min_group", "10"},
                   P{"baseline", "pre_adoption"},
                   P{"apply_censoring", "true"},
                   P{"col_unit", "unit"},
                   P{"col_period", "period"},
                   P{"col_shock", "anchor"},
                   P{"col_adoption", "adoption"},
                   P{"adoption_indicator", "false"},
                   P{"col_outcomes", ""},
                   P{"col_covariates", ""}});
  }
  throw ConfigError("unknown command: " + command);
}

const std::vector<std::string> kCommands = {"simulate", "estimate",
                                            "sensitivity", "power",
                                            "describe"};

Config load_config(const std::string& command, const std::string& file) {
  const IniData data = parse_ini(file);
  // reject unknown sections and unknown keys everywhere, not only in the
  // active section, so typos never pass silently
  std::map<std::string, Config> registry;
  for (const auto& name : kCommands) registry.emplace(name, make_config(name));
  for (const auto& [section, entries] : data) {
    auto it = registry.find(section);
    if (it == registry.end()) {
      throw ConfigError("unknown section [" + section + "]");
    }
    it->second.apply(entries);
  }
  Config active = make_config(command);
  auto it = data.find(command);
  if (it != data.end()) active.apply(it->second);
  return active;
}

// ---------------------------------------------------------------------------
// output plumbing

struct RunOpts {
  std::string config;
  std::string out;
  bool overwrite = false;
  bool quiet = false;
  std::optional<uint64_t> seed;  // --seed override
};

struct Outputs {
  fs::path dir;
  std::string header;  // without the leading "# "
  bool quiet = false;

  std::string file(const std::string& name) const {
    return (dir / name).string();
  }

  void wrote(const std::string& name) const {
    if (!quiet) std::cout << "wrote " << file(name) << "\n";
  }
};

Outputs prepare_outputs(const RunOpts& ro, const Config& config,
                        std::optional<uint64_t> seed = std::nullopt) {
  Outputs out;
  out.dir = fs::path(ro.out);
  out.quiet = ro.quiet;
  if (fs::exists(out.dir)) {
    if (!fs::is_directory(out.dir)) {
      throw ConfigError("output path exists and is not a directory: " +
                        ro.out);
    }
    if (!ro.overwrite && fs::directory_iterator(out.dir) !=
                             fs::directory_iterator()) {
      throw ConfigError("output directory is not empty (pass --overwrite): " +
                        ro.out);
    }
  } else {
    fs::create_directories(out.dir);
  }

  if (!seed) seed = ro.seed;
  const std::string resolved = config.resolved();
  const std::string hash = hex64(fnv1a64(resolved));
  std::ofstream cfg(out.file("config.resolved.ini"), std::ios::binary);
  if (!cfg) throw ConfigError("cannot write into " + ro.out);
  cfg << "# evpanel " << kVersion << " resolved configuration\n" << resolved;
  cfg.close();
  out.wrote("config.resolved.ini");

  out.header = std::string("evpanel ") + kVersion + " config=" + hash +
               " seed=" + (seed ? std::to_string(*seed) : "none");
  return out;
}

void write_keyvalue(const Outputs& out, const std::string& name,
                    const std::vector<std::pair<std::string, std::string>>&
                        rows) {
  TextTable table;
  table.columns = {"key", "value"};
  for (const auto& [k, v] : rows) {
    auto& row = table.add_row();
    row[0] = k;
    row[1] = v;
  }
  write_table(out.file(name), table, '\t', out.header);
  out.wrote(name);
}

// keep = gap rule AND not flagged in the file; without censoring keep all
CensorMask resolve_mask(const PanelDataset& panel, bool apply_censoring) {
  if (!apply_censoring) return CensorMask::all(panel.n_cells());
  CensorMask mask = censor_gap_mask(panel);
  for (long i = 0; i < panel.n_cells(); ++i) {
    if (panel.censored()[i]) mask.keep[i] = 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// subcommands

int run_simulate(const Config& cfg, const RunOpts& ro) {
  StructuralParams params;
  params.lambda_h = cfg.number("lambda_h");
  params.xi = cfg.number("xi");
  for (const auto& part : cfg.list("cohort_lambda_h")) {
    const auto kv = split(part, ':');
    if (kv.size() != 2) {
      throw ConfigError(cfg.where("cohort_lambda_h") +
                        ": expected cohort:value pairs");
    }
    params.lambda_h_by_cohort[static_cast<int>(std::stol(kv[0]))] =
        std::stod(kv[1]);
  }
  for (const auto& part : cfg.list("cohort_xi")) {
    const auto kv = split(part, ':');
    if (kv.size() != 2) {
      throw ConfigError(cfg.where("cohort_xi") +
                        ": expected cohort:value pairs");
    }
    params.xi_by_cohort[static_cast<int>(std::stol(kv[0]))] = std::stod(kv[1]);
  }
  for (const auto& part : cfg.list("outcomes")) {
    const auto fields = split(part, ':');
    if (fields.size() != 3 || trim(fields[0]).empty()) {
      throw ConfigError(cfg.where("outcomes") +
                        ": expected name:on_health:on_program");
    }
    OutcomeLoading loading;
    loading.name = trim(fields[0]);
    try {
      loading.on_health = std::stod(fields[1]);
      loading.on_program = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw ConfigError(cfg.where("outcomes") + ": bad loading in '" + part +
                        "'");
    }
    params.outcomes.push_back(loading);
  }
  params.alpha_h = cfg.number("alpha_h");
  params.alpha_n = cfg.number("alpha_n");
  params.sd_u = cfg.number("sd_u");
  params.sd_v = cfg.number("sd_v");
  params.sd_eps = cfg.number("sd_eps");
  params.fe_unit_sd = cfg.number("fe_unit_sd");
  params.fe_time_sd = cfg.number("fe_time_sd");
  params.binary_cut = cfg.maybe_number("binary_cut");
  params.n_districts = static_cast<int>(cfg.integer("n_districts"));
  params.n_providers = static_cast<int>(cfg.integer("n_providers"));
  params.provider_hazard_sd = cfg.number("provider_hazard_sd");

  AnchorProcess shock;
  {
    const auto fields = split(cfg.str("shock"), ':');
    if (fields[0] == "none" && fields.size() == 1) {
      shock = AnchorProcess::none();
    } else if (fields[0] == "fixed" && fields.size() == 2) {
      shock = AnchorProcess::at(static_cast<int>(std::stol(fields[1])));
    } else if (fields[0] == "uniform" && fields.size() == 3) {
      shock = AnchorProcess::uniform(static_cast<int>(std::stol(fields[1])),
                                     static_cast<int>(std::stol(fields[2])));
    } else {
      throw ConfigError(cfg.where("shock") +
                        ": expected none, fixed:P, or uniform:LO:HI");
    }
  }
  AdoptionProcess adoption;
  {
    const double never_prob = cfg.number("never_prob");
    const auto fields = split(cfg.str("adoption"), ':');
    if (fields[0] == "list" && fields.size() == 2) {
      std::vector<int> periods;
      for (const auto& p : split(fields[1], ';')) {
        periods.push_back(static_cast<int>(std::stol(trim(p))));
      }
      adoption = AdoptionProcess::list(periods, never_prob);
    } else if (fields[0] == "geometric" &&
               (fields.size() == 3 || fields.size() == 4)) {
      const bool relative = fields.size() == 4 && fields[3] == "relative";
      if (fields.size() == 4 && !relative) {
        throw ConfigError(cfg.where("adoption") +
                          ": trailing field must be 'relative'");
      }
      adoption = AdoptionProcess::geometric(
          std::stod(fields[1]), static_cast<int>(std::stol(fields[2])),
          never_prob, relative);
    } else {
      throw ConfigError(
          cfg.where("adoption") +
          ": expected list:P1;P2;... or geometric:HAZARD:START[:relative]");
    }
  }

  const int n_units = static_cast<int>(cfg.integer("n_units"));
  const int t_min = static_cast<int>(cfg.integer("t_min"));
  const int t_max = static_cast<int>(cfg.integer("t_max"));
  const uint64_t seed = cfg.u64("seed");
  const int horizon =
      cfg.maybe_int("truth_horizon").value_or(t_max - t_min);

  SimResult sim = simulate_panel(params, n_units, t_min, t_max, seed, shock,
                                 adoption, horizon);
  censor_gap(sim.panel);

  const Outputs out = prepare_outputs(ro, cfg, seed);
  save_panel(sim.panel, out.file("panel.tsv"), '\t', out.header);
  out.wrote("panel.tsv");
  save_truth(sim.truth, out.file("truth.tsv"), '\t', out.header);
  out.wrote("truth.tsv");
  return 0;
}

EventStudySpec spec_from(const Config& cfg) {
  EventStudySpec spec;
  const std::string anchor = cfg.str("anchor");
  if (anchor == "adoption") {
    spec.anchor = Anchor::Adoption;
  } else if (anchor == "shock") {
    spec.anchor = Anchor::Shock;
  } else {
    throw ConfigError(cfg.where("anchor") + ": expected adoption or shock");
  }
  spec.leads = static_cast<int>(cfg.integer("leads"));
  spec.lags = static_cast<int>(cfg.integer("lags"));
  spec.pool_leads = static_cast<int>(cfg.integer("pool_leads"));
  spec.pool_lags = static_cast<int>(cfg.integer("pool_lags"));
  spec.reference = static_cast<int>(cfg.integer("reference"));
  spec.allow_zero_reference = cfg.flag("allow_zero_reference");
  spec.fixed_effects.clear();
  auto parse_dim = [&](const std::string& name, const std::string& key) {
    if (name == "unit") return FeDim::Unit;
    if (name == "period") return FeDim::Period;
    if (name == "district_period") return FeDim::DistrictPeriod;
    if (name == "provider") return FeDim::Provider;
    throw ConfigError(cfg.where(key) + ": unknown dimension '" + name + "'");
  };
  for (const auto& name : cfg.list("fixed_effects")) {
    spec.fixed_effects.push_back(parse_dim(name, "fixed_effects"));
  }
  if (spec.fixed_effects.empty()) {
    throw ConfigError(cfg.where("fixed_effects") + ": at least one required");
  }
  spec.covariates = cfg.list("covariates");
  spec.cluster_dim = parse_dim(cfg.str("cluster"), "cluster");
  const std::string control = cfg.str("control_group");
  if (control == "never_treated") {
    spec.control_group = ControlGroup::NeverTreated;
  } else if (control == "not_yet_treated") {
    spec.control_group = ControlGroup::NotYetTreated;
  } else if (control == "last_treated") {
    spec.control_group = ControlGroup::LastTreated;
  } else {
    throw ConfigError(cfg.where("control_group") +
                      ": expected never_treated, not_yet_treated, or "
                      "last_treated");
  }
  spec.cs_base_offset = static_cast<int>(cfg.integer("cs_base_offset"));
  spec.sa_weight_vcov = cfg.flag("sa_weight_vcov");
  spec.covariates_in_interactions = cfg.flag("covariates_in_interactions");
  return spec;
}

PanelSchema schema_from(const Config& cfg) {
  PanelSchema schema;
  schema.unit = cfg.str("col_unit");
  schema.period = cfg.str("col_period");
  schema.shock = cfg.str("col_shock");
  schema.adoption = cfg.str("col_adoption");
  schema.adoption_is_indicator = cfg.flag("adoption_indicator");
  schema.outcomes = cfg.list("col_outcomes");
  schema.covariates = cfg.list("col_covariates");
  return schema;
}

int run_estimate(const Config& cfg, const RunOpts& ro) {
  const std::string input = cfg.str("input");
  if (input.empty()) {
    throw ConfigError(cfg.where("input") + ": required");
  }
  const PanelDataset panel = load_panel(input, schema_from(cfg));
  const CensorMask mask = resolve_mask(panel, cfg.flag("apply_censoring"));
  const EventStudySpec spec = spec_from(cfg);

  std::string outcome = cfg.str("outcome");
  if (outcome.empty()) {
    if (panel.outcome_names().empty()) {
      throw MissingColumn("panel has no outcome columns");
    }
    outcome = panel.outcome_names().front();
  }
  const std::string estimator = cfg.str("estimator");

  CoefficientPath path;
  std::optional<GroupTimeATT> grid;
  if (estimator == "twfe") {
    path = twfe_event_study(panel, mask, spec, outcome);
  } else if (estimator == "sun_abraham") {
    path = sun_abraham(panel, mask, spec, outcome);
  } else if (estimator == "callaway_santanna") {
    grid = callaway_santanna(panel, mask, spec, outcome,
                             cfg.list("ipw_covariates"));
    path = aggregate_event_time(*grid, spec.window_hi(),
                                spec.window_lo() - 1, -spec.cs_base_offset);
  } else {
    throw ConfigError(cfg.where("estimator") +
                      ": expected twfe, sun_abraham, or callaway_santanna");
  }

  const Outputs out = prepare_outputs(ro, cfg);
  save_path(path, out.file("path.tsv"), out.file("vcov.tsv"), '\t',
            out.header);
  out.wrote("path.tsv");
  out.wrote("vcov.tsv");
  if (grid) {
    save_attgt(*grid, out.file("attgt.tsv"), '\t', out.header);
    out.wrote("attgt.tsv");
  }

  // plot-ready long table: the point estimate and its band per bin, with the
  // normalized reference shown as an exact zero
  {
    constexpr double z = 1.959963984540054;
    auto kind_tag = [](EventTimeBin::Kind kind) {
      switch (kind) {
        case EventTimeBin::Kind::PooledPre: return "pooled_pre";
        case EventTimeBin::Kind::PooledPost: return "pooled_post";
        case EventTimeBin::Kind::Exact: break;
      }
      return "exact";
    };
    TextTable plot;
    plot.columns = {"tau", "kind", "estimate", "lo", "hi", "n", "reference"};
    for (int i = 0; i < path.size(); ++i) {
      auto& row = plot.add_row();
      row[0] = std::to_string(path.event_times[i].tau);
      row[1] = kind_tag(path.event_times[i].kind);
      row[2] = format_double(path.estimates[i]);
      row[3] = format_double(path.estimates[i] - z * path.ses[i]);
      row[4] = format_double(path.estimates[i] + z * path.ses[i]);
      row[5] = format_double(path.n_obs[i]);
      row[6] = i == path.reference_index ? "1" : "0";
    }
    write_table(out.file("plot.tsv"), plot, '\t', out.header);
    out.wrote("plot.tsv");
  }

  std::vector<std::pair<std::string, std::string>> diag;
  diag.emplace_back("estimator", estimator);
  diag.emplace_back("outcome", outcome);
  diag.emplace_back("reference_tau", std::to_string(path.reference_period));
  diag.emplace_back("reference_mean", format_double(path.reference_mean));
  diag.emplace_back("pretrend_p", format_double(path.pretrend_p));
  diag.emplace_back("leveloff_p", format_double(path.leveloff_p));
  diag.emplace_back("cells_masked", std::to_string(mask.n_dropped()));
  diag.emplace_back("warnings", std::to_string(path.warnings.size()));
  for (size_t i = 0; i < path.warnings.size(); ++i) {
    diag.emplace_back("warning_" + std::to_string(i + 1), path.warnings[i]);
  }
  write_keyvalue(out, "diagnostics.tsv", diag);
  return 0;
}

int run_sensitivity(const Config& cfg, const RunOpts& ro) {
  if (cfg.str("path").empty() || cfg.str("vcov").empty()) {
    throw ConfigError("[sensitivity] path and vcov are required");
  }
  const CoefficientPath path = load_path(cfg.str("path"), cfg.str("vcov"));
  const double level = cfg.number("level");
  HonestOptions options;
  options.post_from = static_cast<int>(cfg.integer("post_from"));
  options.post_to = cfg.maybe_int("post_to");
  options.target_taus = cfg.int_list("target_taus");
  options.target_weights = cfg.number_list("target_weights");
  options.scale_on_levels = cfg.flag("scale_on_levels");

  const std::vector<double> ms = cfg.number_list("m_grid");
  if (ms.empty()) {
    throw ConfigError(cfg.where("m_grid") + ": at least one value required");
  }

  const SensitivityResult grid = sensitivity_grid(path, ms, level, options);

  const Outputs out = prepare_outputs(ro, cfg);
  TextTable table;
  table.columns = {"m",         "estimate",     "bound_lo", "bound_hi",
                   "ci_lo",     "ci_hi",        "crosses_zero", "s_pre",
                   "b_factor",  "se_target",    "se_step",  "method",
                   "target"};
  for (size_t i = 0; i < ms.size(); ++i) {
    const HonestBounds b = honest_rm_bounds(path, ms[i], options);
    const HonestInterval& ci = grid.intervals[i];
    auto& row = table.add_row();
    row[0] = format_double(ms[i]);
    row[1] = format_double(b.estimate);
    row[2] = format_double(b.lower);
    row[3] = format_double(b.upper);
    row[4] = format_double(ci.lower);
    row[5] = format_double(ci.upper);
    row[6] = ci.lower <= 0.0 && ci.upper >= 0.0 ? "1" : "0";
    row[7] = format_double(b.s_pre);
    row[8] = format_double(b.b_factor);
    row[9] = format_double(b.se_target);
    row[10] = format_double(b.se_step);
    row[11] = grid.method;
    row[12] = grid.target;
  }
  write_table(out.file("sensitivity.tsv"), table, '\t', out.header);
  out.wrote("sensitivity.tsv");
  return 0;
}

int run_power(const Config& cfg, const RunOpts& ro) {
  const std::vector<double> ses = cfg.number_list("se");
  if (ses.empty()) {
    throw ConfigError(cfg.where("se") + ": at least one value required");
  }
  std::vector<std::string> labels = cfg.list("labels");
  if (!labels.empty() && labels.size() != ses.size()) {
    throw ConfigError(cfg.where("labels") + ": must match the se list");
  }
  const double alpha = cfg.number("alpha");
  const double target_power = cfg.number("power");

  const Outputs out = prepare_outputs(ro, cfg);
  TextTable table;
  table.columns = {"label", "se", "alpha", "power", "multiplier", "mde"};
  for (size_t i = 0; i < ses.size(); ++i) {
    const MDEResult r = mde(ses[i], alpha, target_power);
    auto& row = table.add_row();
    row[0] = labels.empty() ? "se_" + std::to_string(i + 1) : labels[i];
    row[1] = format_double(r.se);
    row[2] = format_double(r.alpha);
    row[3] = format_double(r.power);
    row[4] = format_double(r.multiplier);
    row[5] = format_double(r.mde);
  }
  write_table(out.file("power.tsv"), table, '\t', out.header);
  out.wrote("power.tsv");
  return 0;
}

int run_describe(const Config& cfg, const RunOpts& ro) {
  const std::string input = cfg.str("input");
  if (input.empty()) {
    throw ConfigError(cfg.where("input") + ": required");
  }
  const PanelDataset panel = load_panel(input, schema_from(cfg));
  const CensorMask mask = resolve_mask(panel, cfg.flag("apply_censoring"));

  Anchor anchor = Anchor::Adoption;
  if (cfg.str("anchor") == "shock") {
    anchor = Anchor::Shock;
  } else if (cfg.str("anchor") != "adoption") {
    throw ConfigError(cfg.where("anchor") + ": expected adoption or shock");
  }
  BaselineFilter filter = BaselineFilter::PreAdoption;
  if (cfg.str("baseline") == "pre_shock") {
    filter = BaselineFilter::PreShock;
  } else if (cfg.str("baseline") == "all") {
    filter = BaselineFilter::All;
  } else if (cfg.str("baseline") != "pre_adoption") {
    throw ConfigError(cfg.where("baseline") +
                      ": expected pre_adoption, pre_shock, or all");
  }

  std::vector<std::string> outcomes = cfg.list("outcomes");
  if (outcomes.empty()) outcomes = panel.outcome_names();

  const Outputs out = prepare_outputs(ro, cfg);

  for (const auto& outcome : outcomes) {
    const auto series = moving_average_trajectory(
        panel, mask, outcome, anchor, static_cast<int>(cfg.integer("window")),
        static_cast<int>(cfg.integer("span")), cfg.number("level"));
    TextTable table;
    table.columns = {"group", "tau", "n", "mean_raw", "mean_smooth", "lo",
                     "hi"};
    for (const auto& s : series) {
      for (const auto& p : s.points) {
        auto& row = table.add_row();
        row[0] = s.group;
        row[1] = std::to_string(p.tau);
        row[2] = std::to_string(p.n);
        row[3] = format_double(p.mean_raw);
        row[4] = format_double(p.mean_smooth);
        row[5] = format_double(p.lo);
        row[6] = format_double(p.hi);
      }
    }
    write_table(out.file("trajectory_" + outcome + ".tsv"), table, '\t',
                out.header);
    out.wrote("trajectory_" + outcome + ".tsv");
  }

  {
    const LeniencyResult len =
        loo_leniency(panel, cfg.integer("min_group"));
    TextTable table;
    table.columns = {"unit", "provider", "adopts", "group_size", "loo"};
    for (const auto& r : len.rows) {
      auto& row = table.add_row();
      row[0] = r.unit;
      row[1] = r.provider;
      row[2] = std::to_string(r.adopts);
      row[3] = std::to_string(r.group_size);
      row[4] = r.loo ? format_double(*r.loo) : "";
    }
    write_table(out.file("leniency_units.tsv"), table, '\t', out.header);
    out.wrote("leniency_units.tsv");
    write_keyvalue(
        out, "leniency_test.tsv",
        {{"n_full", std::to_string(len.n_full)},
         {"n_restricted", std::to_string(len.n_restricted)},
         {"min_group", std::to_string(cfg.integer("min_group"))},
         {"mean_adopters", format_double(len.mean_adopters)},
         {"mean_non_adopters", format_double(len.mean_non_adopters)},
         {"sd_adopters", format_double(len.sd_adopters)},
         {"sd_non_adopters", format_double(len.sd_non_adopters)},
         {"diff", format_double(len.diff)},
         {"t_stat", format_double(len.t_stat)},
         {"p_value", format_double(len.p_value)}});
  }

  {
    const auto rows = balance_table(panel, mask, filter);
    TextTable table;
    table.columns = {"name",         "n_treated",    "n_control",
                     "mean_treated", "mean_control", "sd_treated",
                     "sd_control",   "diff",         "t_stat",
                     "smd"};
    for (const auto& r : rows) {
      auto& row = table.add_row();
      row[0] = r.name;
      row[1] = std::to_string(r.n_treated);
      row[2] = std::to_string(r.n_control);
      row[3] = format_double(r.mean_treated);
      row[4] = format_double(r.mean_control);
      row[5] = format_double(r.sd_treated);
      row[6] = format_double(r.sd_control);
      row[7] = format_double(r.diff);
      row[8] = format_double(r.t_stat);
      row[9] = format_double(r.smd);
    }
    write_table(out.file("balance.tsv"), table, '\t', out.header);
    out.wrote("balance.tsv");
  }

  {
    const auto rows = district_intake(panel);
    TextTable table;
    table.columns = {"district", "period", "count"};
    for (const auto& r : rows) {
      auto& row = table.add_row();
      row[0] = r.district;
      row[1] = std::to_string(r.period);
      row[2] = std::to_string(r.count);
    }
    write_table(out.file("intake.tsv"), table, '\t', out.header);
    out.wrote("intake.tsv");
  }

  {
    const auto rows = censor_report(panel);
    TextTable table;
    table.columns = {"unit", "t_shock", "t_adopt", "drop_from", "drop_to"};
    for (const auto& r : rows) {
      auto& row = table.add_row();
      row[0] = r.unit;
      row[1] = std::to_string(r.t_shock);
      row[2] = std::to_string(r.t_adopt);
      row[3] = std::to_string(r.drop_from);
      row[4] = std::to_string(r.drop_to);
    }
    write_table(out.file("censor_units.tsv"), table, '\t', out.header);
    out.wrote("censor_units.tsv");

    const auto hist = censor_gap_histogram(panel);
    TextTable gaps;
    gaps.columns = {"gap", "units"};
    for (const auto& [gap, n] : hist) {
      auto& row = gaps.add_row();
      row[0] = std::to_string(gap);
      row[1] = std::to_string(n);
    }
    write_table(out.file("censor_gaps.tsv"), gaps, '\t', out.header);
    out.wrote("censor_gaps.tsv");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"staggered-adoption event-study toolkit"};
  app.set_version_flag("--version", std::string("evpanel ") + kVersion);
  app.require_subcommand(1);

  std::map<std::string, RunOpts> opts;
  std::map<std::string, uint64_t> seeds;
  std::map<std::string, CLI::Option*> seed_opts;
  for (const auto& name : kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    RunOpts& c = opts[name];
    sub->add_option("--config", c.config, "INI configuration file")
        ->required();
    sub->add_option("--out", c.out, "output directory")->required();
    sub->add_flag("--overwrite", c.overwrite,
                  "allow writing into a non-empty directory");
    sub->add_flag("--quiet", c.quiet, "suppress progress output");
    seed_opts[name] = sub->add_option("--seed", seeds[name],
                                      "override the configured seed");
  }

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  RunOpts& c = opts[command];
  if (seed_opts[command]->count() > 0) c.seed = seeds[command];
  try {
    Config cfg = load_config(command, c.config);
    if (c.seed && cfg.knows("seed")) {
      cfg.apply({{"seed", std::to_string(*c.seed)}});
    }
    if (command == "simulate") return run_simulate(cfg, c);
    if (command == "estimate") return run_estimate(cfg, c);
    if (command == "sensitivity") return run_sensitivity(cfg, c);
    if (command == "power") return run_power(cfg, c);
    if (command == "describe") return run_describe(cfg, c);
    throw ConfigError("unknown command: " + command);
  } catch (const Error& e) {
    nlohmann::json j;
    j["error"] = e.name();
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json j;
    j["error"] = "Internal";
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
  }
}
