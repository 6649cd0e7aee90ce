#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pedscan/common.hpp"

namespace pedscan {

// `key = value` configuration with a fixed key registry: anything outside the
// registry is a hard error, and the resolved state (defaults and command-line
// overrides included) can be echoed back as a re-runnable file.
class Control {
 public:
  void define(const std::string& key, const std::string& default_value) {
    if (!defined_.insert(key).second) throw config_error("control key defined twice: " + key);
    order_.push_back(key);
    values_[key] = default_value;
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open control file: " + path);
    std::string line;
    std::set<std::string> seen;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string stripped = trim(line);
      if (stripped.empty()) continue;
      const size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw config_error(path + ":" + std::to_string(line_no) +
                           ": expected 'key = value', got '" + stripped + "'");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (!defined_.count(key))
        throw config_error(path + ":" + std::to_string(line_no) + ": unknown control key '" +
                           key + "'");
      if (!seen.insert(key).second)
        throw config_error(path + ":" + std::to_string(line_no) + ": control key '" + key +
                           "' given twice");
      values_[key] = value;
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!defined_.count(key)) throw config_error("unknown control key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return !str(key).empty(); }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown control key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const {
    double out;
    if (!parse_double(str(key), out))
      throw config_error("control key '" + key + "' is not a number: '" + str(key) + "'");
    return out;
  }

  long long integer(const std::string& key) const {
    long long out;
    if (!parse_long(str(key), out))
      throw config_error("control key '" + key + "' is not an integer: '" + str(key) + "'");
    return out;
  }

  bool flag(const std::string& key) const {
    const std::string v = to_lower(str(key));
    if (v == "on" || v == "true" || v == "yes" || v == "1") return true;
    if (v == "off" || v == "false" || v == "no" || v == "0") return false;
    throw config_error("control key '" + key + "' is not a flag value: '" + str(key) + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& part : split_trimmed(str(key), ','))
      if (!part.empty()) out.push_back(part);
    return out;
  }

  void write_echo(const std::string& path) const {
    auto out = open_output(path);
    for (const auto& key : order_) out << key << " = " << values_.at(key) << "\n";
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::set<std::string> defined_;
};

}  // namespace pedscan
