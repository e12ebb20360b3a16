#pragma once

#include <optional>
#include <string>
#include <vector>

namespace resyn {

enum class ColumnKind { Item, Numeric, Categorical, Timestamp, Key, Excluded };

std::string to_string(ColumnKind k);
ColumnKind column_kind_from_string(const std::string& s);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Categorical;
  std::optional<std::string> unit;
};

enum class TimestampUnit { Minutes, OffsetMinutes };

struct TableSchema {
  std::string table_name;
  std::vector<ColumnSpec> columns;  // CSV header order
  TimestampUnit timestamp_unit = TimestampUnit::Minutes;

  const ColumnSpec* find(const std::string& name) const;
  const std::string& key_column() const;
  const std::string& timestamp_column() const;
  // Name of the item column, if the table declares one.
  std::optional<std::string> item_column() const;
  // Item, categorical and numeric columns in schema order; these are the
  // columns that appear in serialized events and synthetic output.
  std::vector<std::string> value_columns() const;
  std::vector<std::string> numeric_columns() const;
  std::vector<std::string> categorical_columns() const;  // excludes item
  bool is_numeric(const std::string& name) const;

  // Enforces: exactly one key, exactly one timestamp, at most one item,
  // unique names, no whitespace or numeric-looking table/column names.
  void validate() const;
};

struct SchemaConfig {
  std::vector<TableSchema> tables;  // file order

  const TableSchema* find_table(const std::string& name) const;
  void validate() const;
};

SchemaConfig load_schema_config(const std::string& path);
void save_schema_config(const SchemaConfig& config, const std::string& path);

}  // namespace resyn
