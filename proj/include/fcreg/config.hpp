#pragma once

// Flat key = value run configuration. Missing keys take the default
// registration settings (w=21, bins=21, soft binning, lambda=0.01,
// gamma=0.01, learning_rate=1e-4, downsample_factor=3); unknown keys are
// rejected so typos cannot silently fall back to defaults.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fcreg/funcconn.hpp"
#include "fcreg/objective.hpp"

namespace fcreg {

struct RunConfig {
  FCConfig fc;            // w, bins, soft, var_eps
  LossWeights weights;    // lambda, gamma
  OptimizerConfig opt;    // learning_rate, iterations, seed, grad_mode, ...
  int downsample_factor = 3;

  void validate() const {
    fc.validate();
    weights.validate();
    opt.validate();
    if (downsample_factor < 1)
      throw std::invalid_argument("RunConfig: downsample_factor must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: invalid boolean for key '" + key +
                              "': " + v);
}

inline double parse_real(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: invalid number for key '" + key +
                                "': " + v);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: invalid number for key '" + key +
                                "': " + v);
  return x;
}

inline long parse_int(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  long x = 0;
  try {
    x = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: invalid integer for key '" + key +
                                "': " + v);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: invalid integer for key '" + key +
                                "': " + v);
  return x;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected 'key = value' at line " +
                                  std::to_string(lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config: empty key or value at line " +
                                  std::to_string(lineno));

    if (key == "w") {
      cfg.fc.w = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "bins") {
      cfg.fc.bins = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "soft") {
      cfg.fc.soft = detail::parse_bool(value, key);
    } else if (key == "var_eps") {
      cfg.fc.var_eps = detail::parse_real(value, key);
    } else if (key == "lambda") {
      cfg.weights.lambda = detail::parse_real(value, key);
    } else if (key == "gamma") {
      cfg.weights.gamma = detail::parse_real(value, key);
    } else if (key == "learning_rate") {
      cfg.opt.learning_rate = detail::parse_real(value, key);
    } else if (key == "iterations") {
      cfg.opt.iterations = static_cast<int>(detail::parse_int(value, key));
    } else if (key == "beta1") {
      cfg.opt.beta1 = detail::parse_real(value, key);
    } else if (key == "beta2") {
      cfg.opt.beta2 = detail::parse_real(value, key);
    } else if (key == "adam_eps") {
      cfg.opt.adam_eps = detail::parse_real(value, key);
    } else if (key == "seed") {
      cfg.opt.seed = static_cast<std::uint64_t>(detail::parse_int(value, key));
    } else if (key == "grad_mode") {
      if (value == "analytic")
        cfg.opt.grad_mode = GradMode::analytic;
      else if (value == "finite_difference")
        cfg.opt.grad_mode = GradMode::finite_difference;
      else
        throw std::invalid_argument("config: invalid grad_mode: " + value);
    } else if (key == "downsample_factor") {
      cfg.downsample_factor = static_cast<int>(detail::parse_int(value, key));
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace fcreg
