#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "resyn/schema.hpp"

namespace resyn {

// One CSV row after schema application: excluded columns dropped, timestamp
// normalized to whole minutes since admission. Empty string means null.
struct RawRow {
  std::string patient_id;
  std::int64_t t_minutes = 0;
  std::vector<std::string> values;  // aligned with TableData::value_columns
  std::size_t source_index = 0;     // original row order, used for tie-breaks
};

struct TableData {
  TableSchema schema;
  std::vector<std::string> value_columns;  // item/categorical/numeric, schema order
  std::vector<RawRow> rows;

  int column_index(const std::string& name) const;
};

using TableSet = std::map<std::string, TableData>;

struct EventRecord {
  std::int64_t t_minutes = 0;
  std::string table_name;
  // Non-null (column, value) pairs in schema column order.
  std::vector<std::pair<std::string, std::string>> pairs;
};

struct PatientTrajectory {
  std::string patient_id;
  std::int64_t window_minutes = 0;
  std::vector<EventRecord> events;  // sorted by (t, table, source order)
};

struct IngestSummary {
  std::size_t patients_kept = 0;
  std::size_t patients_dropped_empty = 0;  // zero in-window events
  std::size_t events_dropped_window = 0;
  std::size_t events_dropped_max = 0;
  std::map<std::string, std::size_t> rows_per_table;
};

struct FeatureCountReport {
  long long possible_count = 0;
  long long actual_count = 0;
  struct PerTable {
    std::string table_name;
    long long possible = 0;
    long long actual = 0;
  };
  std::vector<PerTable> per_table;
};

// Loads one CSV per table from data_dir (<table_name>.csv). Fatal on missing
// files, header mismatches against the schema, or invalid timestamps; errors
// carry the table and row location.
TableSet load_tables(const SchemaConfig& config, const std::string& data_dir);

// Merges all tables into per-patient chronological trajectories. Events past
// window_minutes or beyond max_events are dropped; ties on the timestamp are
// broken by table name, then source row order. Patients with zero in-window
// events are omitted (counted in the summary).
std::vector<PatientTrajectory> build_trajectories(const TableSet& tables,
                                                  std::int64_t window_minutes,
                                                  std::size_t max_events,
                                                  IngestSummary* summary = nullptr);

long long count_features_possible(const TableSet& tables);
long long count_features_actual(const TableSet& tables);
FeatureCountReport count_features(const TableSet& tables);

// Flattens trajectories back into per-table row sets (used by evaluation so
// real and synthetic sides pass through identical filtering).
TableSet tables_from_trajectories(const std::vector<PatientTrajectory>& trajs,
                                  const SchemaConfig& config);

}  // namespace resyn
