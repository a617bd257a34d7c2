#include "v2p/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace v2p::toml {
namespace {

[[noreturn]] void fail(const std::string& origin, std::size_t line_no,
                       const std::string& msg) {
  throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' &&
        c != '.') {
      return false;
    }
  }
  return true;
}

struct Scalar {
  Table::Value v;
};

Scalar parse_scalar(const std::string& tok, const std::string& origin,
                    std::size_t line_no) {
  if (tok == "true") return {true};
  if (tok == "false") return {false};
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    return {tok.substr(1, tok.size() - 2)};
  }
  // Integer if it parses fully without . e E; else float.
  bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                     tok.find_first_of("0123456789") != std::string::npos;
  std::size_t used = 0;
  if (!looks_float) {
    try {
      std::int64_t i = std::stoll(tok, &used);
      if (used == tok.size()) return {i};
    } catch (const std::exception&) {
    }
  }
  try {
    double d = std::stod(tok, &used);
    if (used == tok.size()) return {d};
  } catch (const std::exception&) {
  }
  fail(origin, line_no, "cannot parse value '" + tok + "'");
}

std::vector<std::string> split_array_items(const std::string& body,
                                           const std::string& origin,
                                           std::size_t line_no) {
  std::vector<std::string> items;
  std::string cur;
  bool in_string = false;
  for (char c : body) {
    if (c == '"') in_string = !in_string;
    if (c == ',' && !in_string) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);
  if (in_string) fail(origin, line_no, "unterminated string in array");
  for (const std::string& it : items) {
    if (it.empty()) fail(origin, line_no, "empty array element");
  }
  return items;
}

Table::Value parse_array(const std::string& body, const std::string& origin,
                         std::size_t line_no) {
  std::vector<std::string> items = split_array_items(body, origin, line_no);
  if (items.empty()) return std::vector<double>{};
  std::vector<Scalar> scalars;
  for (const std::string& it : items) {
    scalars.push_back(parse_scalar(it, origin, line_no));
  }
  // Homogeneous arrays; integer + float mixes promote to float.
  bool any_bool = false, any_str = false, any_float = false, any_int = false;
  for (const Scalar& s : scalars) {
    any_bool |= std::holds_alternative<bool>(s.v);
    any_str |= std::holds_alternative<std::string>(s.v);
    any_float |= std::holds_alternative<double>(s.v);
    any_int |= std::holds_alternative<std::int64_t>(s.v);
  }
  if (any_bool && !any_str && !any_float && !any_int) {
    std::vector<bool> out;
    for (const Scalar& s : scalars) out.push_back(std::get<bool>(s.v));
    return out;
  }
  if (any_str && !any_bool && !any_float && !any_int) {
    std::vector<std::string> out;
    for (const Scalar& s : scalars) out.push_back(std::get<std::string>(s.v));
    return out;
  }
  if ((any_int || any_float) && !any_bool && !any_str) {
    if (any_float) {
      std::vector<double> out;
      for (const Scalar& s : scalars) {
        out.push_back(std::holds_alternative<double>(s.v)
                          ? std::get<double>(s.v)
                          : double(std::get<std::int64_t>(s.v)));
      }
      return out;
    }
    std::vector<std::int64_t> out;
    for (const Scalar& s : scalars) out.push_back(std::get<std::int64_t>(s.v));
    return out;
  }
  fail(origin, line_no, "array elements have mixed types");
}

}  // namespace

Table Table::parse_string(const std::string& text, const std::string& origin) {
  Table t;
  t.origin_ = origin;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) {
        fail(origin, line_no, "bad section name '" + section + "'");
      }
      continue;
    }
    std::size_t eq = std::string::npos;
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_string = !in_string;
      if (line[i] == '=' && !in_string) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!valid_key(key)) fail(origin, line_no, "bad key '" + key + "'");
    if (val.empty()) fail(origin, line_no, "missing value for '" + key + "'");
    std::string full = section.empty() ? key : section + "." + key;
    if (t.values_.count(full)) {
      fail(origin, line_no, "duplicate key '" + full + "'");
    }
    if (val.front() == '[') {
      if (val.back() != ']') fail(origin, line_no, "unterminated array");
      t.values_[full] =
          parse_array(val.substr(1, val.size() - 2), origin, line_no);
    } else {
      t.values_[full] = parse_scalar(val, origin, line_no).v;
    }
  }
  return t;
}

Table Table::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path.string());
}

const Table::Value& Table::lookup(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::runtime_error(origin_ + ": missing key '" + key + "'");
  }
  consumed_.insert(key);
  return it->second;
}

bool Table::has(const std::string& key) const {
  return values_.count(key) != 0;
}

bool Table::get_bool(const std::string& key) const {
  const Value& v = lookup(key);
  if (!std::holds_alternative<bool>(v)) {
    throw std::runtime_error(origin_ + ": key '" + key + "' is not a bool");
  }
  return std::get<bool>(v);
}

std::int64_t Table::get_int(const std::string& key) const {
  const Value& v = lookup(key);
  if (!std::holds_alternative<std::int64_t>(v)) {
    throw std::runtime_error(origin_ + ": key '" + key + "' is not an integer");
  }
  return std::get<std::int64_t>(v);
}

double Table::get_double(const std::string& key) const {
  const Value& v = lookup(key);
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  if (std::holds_alternative<std::int64_t>(v)) {
    return double(std::get<std::int64_t>(v));
  }
  throw std::runtime_error(origin_ + ": key '" + key + "' is not a number");
}

std::string Table::get_string(const std::string& key) const {
  const Value& v = lookup(key);
  if (!std::holds_alternative<std::string>(v)) {
    throw std::runtime_error(origin_ + ": key '" + key + "' is not a string");
  }
  return std::get<std::string>(v);
}

std::vector<std::int64_t> Table::get_int_array(const std::string& key) const {
  const Value& v = lookup(key);
  if (!std::holds_alternative<std::vector<std::int64_t>>(v)) {
    throw std::runtime_error(origin_ + ": key '" + key +
                             "' is not an integer array");
  }
  return std::get<std::vector<std::int64_t>>(v);
}

std::vector<double> Table::get_double_array(const std::string& key) const {
  const Value& v = lookup(key);
  if (std::holds_alternative<std::vector<double>>(v)) {
    return std::get<std::vector<double>>(v);
  }
  if (std::holds_alternative<std::vector<std::int64_t>>(v)) {
    std::vector<double> out;
    for (std::int64_t i : std::get<std::vector<std::int64_t>>(v)) {
      out.push_back(double(i));
    }
    return out;
  }
  throw std::runtime_error(origin_ + ": key '" + key +
                           "' is not a numeric array");
}

std::vector<std::string> Table::get_string_array(const std::string& key) const {
  const Value& v = lookup(key);
  if (!std::holds_alternative<std::vector<std::string>>(v)) {
    throw std::runtime_error(origin_ + ": key '" + key +
                             "' is not a string array");
  }
  return std::get<std::vector<std::string>>(v);
}

bool Table::get_bool_or(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::int64_t Table::get_int_or(const std::string& key,
                               std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double Table::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::string Table::get_string_or(const std::string& key,
                                 const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

void Table::require_all_consumed() const {
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key)) {
      throw std::runtime_error(origin_ + ": unknown key '" + key + "'");
    }
  }
}

std::vector<std::string> Table::keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) out.push_back(key);
  return out;
}

}  // namespace v2p::toml
