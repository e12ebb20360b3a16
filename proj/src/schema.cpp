#include "resyn/schema.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace resyn {

std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::Item: return "item";
    case ColumnKind::Numeric: return "numeric";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Timestamp: return "timestamp";
    case ColumnKind::Key: return "key";
    case ColumnKind::Excluded: return "excluded";
  }
  return "categorical";
}

ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "item") return ColumnKind::Item;
  if (s == "numeric") return ColumnKind::Numeric;
  if (s == "categorical") return ColumnKind::Categorical;
  if (s == "timestamp") return ColumnKind::Timestamp;
  if (s == "key") return ColumnKind::Key;
  if (s == "excluded") return ColumnKind::Excluded;
  throw std::runtime_error("schema: unknown column kind '" + s + "'");
}

const ColumnSpec* TableSchema::find(const std::string& name) const {
  for (const auto& c : columns) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

static const std::string& single_column(const TableSchema& t, ColumnKind kind,
                                        const char* what) {
  for (const auto& c : t.columns) {
    if (c.kind == kind) return c.name;
  }
  throw std::runtime_error("schema: table '" + t.table_name + "' has no " +
                           what + " column");
}

const std::string& TableSchema::key_column() const {
  return single_column(*this, ColumnKind::Key, "key");
}

const std::string& TableSchema::timestamp_column() const {
  return single_column(*this, ColumnKind::Timestamp, "timestamp");
}

std::optional<std::string> TableSchema::item_column() const {
  for (const auto& c : columns) {
    if (c.kind == ColumnKind::Item) return c.name;
  }
  return std::nullopt;
}

std::vector<std::string> TableSchema::value_columns() const {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    if (c.kind == ColumnKind::Item || c.kind == ColumnKind::Categorical ||
        c.kind == ColumnKind::Numeric) {
      out.push_back(c.name);
    }
  }
  return out;
}

std::vector<std::string> TableSchema::numeric_columns() const {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    if (c.kind == ColumnKind::Numeric) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> TableSchema::categorical_columns() const {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    if (c.kind == ColumnKind::Categorical) out.push_back(c.name);
  }
  return out;
}

bool TableSchema::is_numeric(const std::string& name) const {
  const ColumnSpec* c = find(name);
  return c != nullptr && c->kind == ColumnKind::Numeric;
}

static bool looks_numeric(const std::string& s) {
  if (s.empty()) return false;
  bool digit = false;
  for (char c : s) {
    if (c >= '0' && c <= '9') {
      digit = true;
    } else if (c != '.') {
      return false;
    }
  }
  return digit;
}

static void check_identifier(const std::string& s, const std::string& where) {
  if (s.empty()) throw std::runtime_error("schema: empty name in " + where);
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      throw std::runtime_error("schema: whitespace in name '" + s + "' (" +
                               where + ")");
    }
  }
  if (looks_numeric(s)) {
    throw std::runtime_error("schema: name '" + s + "' in " + where +
                             " would be indistinguishable from a number");
  }
}

void TableSchema::validate() const {
  check_identifier(table_name, "table name");
  std::set<std::string> seen;
  int keys = 0, timestamps = 0, items = 0;
  for (const auto& c : columns) {
    check_identifier(c.name, "table '" + table_name + "'");
    if (!seen.insert(c.name).second) {
      throw std::runtime_error("schema: duplicate column '" + c.name +
                               "' in table '" + table_name + "'");
    }
    switch (c.kind) {
      case ColumnKind::Key: ++keys; break;
      case ColumnKind::Timestamp: ++timestamps; break;
      case ColumnKind::Item: ++items; break;
      default: break;
    }
  }
  if (keys != 1) {
    throw std::runtime_error("schema: table '" + table_name +
                             "' must have exactly one key column");
  }
  if (timestamps != 1) {
    throw std::runtime_error("schema: table '" + table_name +
                             "' must have exactly one timestamp column");
  }
  if (items > 1) {
    throw std::runtime_error("schema: table '" + table_name +
                             "' has more than one item column");
  }
}

const TableSchema* SchemaConfig::find_table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.table_name == name) return &t;
  }
  return nullptr;
}

void SchemaConfig::validate() const {
  if (tables.empty()) throw std::runtime_error("schema: no tables");
  std::set<std::string> seen;
  for (const auto& t : tables) {
    t.validate();
    if (!seen.insert(t.table_name).second) {
      throw std::runtime_error("schema: duplicate table '" + t.table_name +
                               "'");
    }
  }
}

SchemaConfig load_schema_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("schema: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("schema: invalid JSON in " + path + ": " +
                             e.what());
  }
  if (!doc.contains("tables") || !doc["tables"].is_array()) {
    throw std::runtime_error("schema: " + path + " lacks a 'tables' array");
  }

  SchemaConfig config;
  for (const auto& jt : doc["tables"]) {
    TableSchema table;
    table.table_name = jt.at("table").get<std::string>();
    const auto& ts = jt.at("timestamp");
    const std::string unit = ts.at("unit").get<std::string>();
    if (unit == "minutes") {
      table.timestamp_unit = TimestampUnit::Minutes;
    } else if (unit == "offset-minutes") {
      table.timestamp_unit = TimestampUnit::OffsetMinutes;
    } else {
      throw std::runtime_error("schema: unknown timestamp unit '" + unit +
                               "' in table '" + table.table_name + "'");
    }

    std::set<std::string> excluded;
    if (jt.contains("excluded")) {
      for (const auto& e : jt["excluded"]) {
        excluded.insert(e.get<std::string>());
      }
    }

    table.columns.push_back(
        {jt.at("key").get<std::string>(), ColumnKind::Key, std::nullopt});
    table.columns.push_back(
        {ts.at("column").get<std::string>(), ColumnKind::Timestamp,
         std::nullopt});
    if (jt.contains("item") && !jt["item"].is_null()) {
      table.columns.push_back(
          {jt["item"].get<std::string>(), ColumnKind::Item, std::nullopt});
    }
    for (const auto& jc : jt.at("columns")) {
      ColumnSpec col;
      col.name = jc.at("name").get<std::string>();
      col.kind = column_kind_from_string(jc.at("kind").get<std::string>());
      if (col.kind != ColumnKind::Numeric &&
          col.kind != ColumnKind::Categorical) {
        throw std::runtime_error(
            "schema: 'columns' entries must be numeric or categorical, got '" +
            to_string(col.kind) + "' for '" + col.name + "'");
      }
      if (jc.contains("unit") && !jc["unit"].is_null()) {
        col.unit = jc["unit"].get<std::string>();
      }
      table.columns.push_back(std::move(col));
    }
    for (const auto& e : excluded) {
      table.columns.push_back({e, ColumnKind::Excluded, std::nullopt});
    }
    config.tables.push_back(std::move(table));
  }
  config.validate();
  return config;
}

void save_schema_config(const SchemaConfig& config, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["tables"] = nlohmann::ordered_json::array();
  for (const auto& t : config.tables) {
    nlohmann::ordered_json jt;
    jt["table"] = t.table_name;
    jt["key"] = t.key_column();
    jt["timestamp"] = {
        {"column", t.timestamp_column()},
        {"unit", t.timestamp_unit == TimestampUnit::Minutes ? "minutes"
                                                            : "offset-minutes"}};
    auto item = t.item_column();
    jt["item"] = item ? nlohmann::ordered_json(*item)
                      : nlohmann::ordered_json(nullptr);
    jt["columns"] = nlohmann::ordered_json::array();
    nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
    for (const auto& c : t.columns) {
      if (c.kind == ColumnKind::Numeric || c.kind == ColumnKind::Categorical) {
        nlohmann::ordered_json jc;
        jc["name"] = c.name;
        jc["kind"] = to_string(c.kind);
        if (c.unit) jc["unit"] = *c.unit;
        jt["columns"].push_back(jc);
      } else if (c.kind == ColumnKind::Excluded) {
        excluded.push_back(c.name);
      }
    }
    jt["excluded"] = excluded;
    doc["tables"].push_back(jt);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("schema: cannot write " + path);
  out << doc.dump(2) << "\n";
}

}  // namespace resyn
