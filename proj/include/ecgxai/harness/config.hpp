#pragma once

#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ecgxai/harness/experiment.hpp"
#include "ecgxai/harness/ingest.hpp"

namespace ecgxai::harness {

/// Flat TOML subset: `[section]` headers, `key = value` lines, `#` comments.
/// Values are quoted strings, booleans, numbers or one-line arrays of them.
/// Result maps section name ("" for the top level) to a JSON object.
inline std::map<std::string, json> parse_config_text(std::string_view text, const std::string& origin = "config") {
  std::map<std::string, json> out;
  out[""] = json::object();
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](std::size_t line, const std::string& msg) {
    throw InvalidInputError(origin + ":" + std::to_string(line) + ": " + msg);
  };
  auto parse_scalar = [&](std::string_view v, std::size_t line) -> json {
    v = io::trim(v);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
      return std::string(v.substr(1, v.size() - 2));
    if (v == "true") return true;
    if (v == "false") return false;
    const auto num = detail::parse_real(v);
    if (!num) fail(line, "cannot parse value '" + std::string(v) + "'");
    if (v.find_first_of(".eE") == std::string_view::npos && *num >= 0) return static_cast<std::uint64_t>(*num);
    if (v.find_first_of(".eE") == std::string_view::npos) return static_cast<std::int64_t>(*num);
    return *num;
  };
  for (std::size_t lineno = 1; std::getline(in, raw); ++lineno) {
    std::string_view line = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = io::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(lineno, "unterminated section header");
      section = std::string(io::trim(line.substr(1, line.size() - 2)));
      if (section.empty()) fail(lineno, "empty section name");
      if (out.contains(section)) fail(lineno, "duplicate section [" + section + "]");
      out[section] = json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail(lineno, "expected key = value");
    const std::string key(io::trim(line.substr(0, eq)));
    const std::string_view value = io::trim(line.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    if (out[section].contains(key)) fail(lineno, "duplicate key '" + key + "'");
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') fail(lineno, "arrays must close on the same line");
      json arr = json::array();
      const auto inner = io::trim(value.substr(1, value.size() - 2));
      if (!inner.empty())
        for (auto part : io::split_csv(inner)) arr.push_back(parse_scalar(part, lineno));
      out[section][key] = arr;
    } else {
      out[section][key] = parse_scalar(value, lineno);
    }
  }
  return out;
}

namespace detail {

/// Rejects keys the defaults do not know, then overlays `j` onto them.
inline json overlay(const json& defaults, const json& j, const std::string& where) {
  json merged = defaults;
  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) throw InvalidInputError(where + ": unknown key '" + k + "'");
    merged[k] = v;
  }
  return merged;
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_sections(const std::map<std::string, json>& sections,
                                                        ExperimentConfig cfg = {}, const std::string& origin = "config") {
  try {
    for (const auto& [name, body] : sections) {
      const std::string where = origin + " [" + (name.empty() ? std::string("top level") : name) + "]";
      if (name.empty()) {
        for (const auto& [k, v] : body.items()) {
          if (k == "seed") cfg.seed = v.get<std::uint64_t>();
          else if (k == "n_iterations") cfg.n_iterations = v.get<std::size_t>();
          else if (k == "normalization") cfg.normalization = v.get<std::string>();
          else if (k == "powerline_hz") cfg.powerline_hz = v.get<double>();
          else if (k == "shuffle_labels") cfg.shuffle_labels = v.get<bool>();
          else if (k == "explain") cfg.explain = v.get<bool>();
          else if (k == "explain_layer") cfg.explain_options.layer = v.get<std::size_t>();
          else if (k == "explain_max_segments") cfg.explain_options.max_segments = v.get<std::size_t>();
          else if (k == "save_checkpoints") cfg.save_checkpoints = v.get<bool>();
          else if (k == "jobs") cfg.jobs = v.get<std::size_t>();
          else if (k == "architecture") {
            const auto a = models::parse_architecture(v.get<std::string>());
            if (!a) throw InvalidInputError(where + ": unknown architecture '" + v.get<std::string>() + "'");
            cfg.model.arch = *a;
          } else {
            throw InvalidInputError(where + ": unknown key '" + k + "'");
          }
        }
      } else if (name == "vit") {
        cfg.model.vit = models::ViTConfig::from_json(detail::overlay(cfg.model.vit.to_json(), body, where));
      } else if (name == "resnet") {
        cfg.model.resnet = models::ResNetConfig::from_json(detail::overlay(cfg.model.resnet.to_json(), body, where));
      } else if (name == "cnn_lstm") {
        cfg.model.cnn_lstm =
            models::CnnLstmConfig::from_json(detail::overlay(cfg.model.cnn_lstm.to_json(), body, where));
      } else if (name == "training") {
        const json t = detail::overlay(cfg.training.to_json(), body, where);
        cfg.training.batch_size = t.at("batch_size").get<std::size_t>();
        cfg.training.max_epochs = t.at("max_epochs").get<std::size_t>();
        cfg.training.patience = t.at("patience").get<std::size_t>();
        cfg.training.learning_rate = t.at("learning_rate").get<double>();
        cfg.training.cosine_schedule = t.at("cosine_schedule").get<bool>();
        cfg.training.stop_at_perfect_val = t.at("stop_at_perfect_val").get<bool>();
        cfg.training.recalibrate_bn = t.at("recalibrate_bn").get<bool>();
        cfg.training.bn_calibration_rows = t.at("bn_calibration_rows").get<std::size_t>();
      } else if (name == "split") {
        const json s = detail::overlay({{"train", cfg.ratios.train}, {"val", cfg.ratios.val}, {"test", cfg.ratios.test}},
                                       body, where);
        cfg.ratios = {s.at("train").get<double>(), s.at("val").get<double>(), s.at("test").get<double>()};
      } else {
        throw InvalidInputError(origin + ": unknown section [" + name + "]");
      }
    }
  } catch (const json::exception& e) {
    throw InvalidInputError(origin + ": wrong value type (" + std::string(e.what()) + ")");
  }
  cfg.validate();
  cfg.model.vit.validate();
  cfg.model.resnet.validate();
  cfg.model.cnn_lstm.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const io::fs::path& path, ExperimentConfig base = {}) {
  const auto sections = parse_config_text(io::read_file(path), path.string());
  return experiment_config_from_sections(sections, std::move(base), path.string());
}

}  // namespace ecgxai::harness
