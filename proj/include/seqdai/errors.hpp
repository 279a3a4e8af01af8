#pragma once

#include <stdexcept>
#include <string>

namespace seqdai {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problem definition or hypothesis families are unusable.
class invalid_model : public error {
 public:
  explicit invalid_model(const std::string& what) : error("invalid model: " + what) {}
};

class invalid_subsystem : public error {
 public:
  explicit invalid_subsystem(const std::string& what) : error("invalid subsystem: " + what) {}
};

class invalid_observation : public error {
 public:
  explicit invalid_observation(const std::string& what) : error("invalid observation: " + what) {}
};

class invalid_level : public error {
 public:
  explicit invalid_level(const std::string& what) : error("invalid level: " + what) {}
};

class invalid_config : public error {
 public:
  explicit invalid_config(const std::string& what) : error("invalid config: " + what) {}
};

class numerical_error : public error {
 public:
  explicit numerical_error(const std::string& what) : error("numerical error: " + what) {}
};

class unsupported : public error {
 public:
  explicit unsupported(const std::string& what) : error("unsupported: " + what) {}
};

class degenerate_problem : public error {
 public:
  explicit degenerate_problem(const std::string& what) : error("degenerate problem: " + what) {}
};

}  // namespace seqdai
