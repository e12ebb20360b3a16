#include "resyn/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "resyn/csv.hpp"

namespace resyn {

int TableData::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < value_columns.size(); ++i) {
    if (value_columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

static std::int64_t parse_timestamp(const std::string& raw,
                                    const std::string& table,
                                    std::size_t row_index) {
  if (raw.empty()) {
    throw std::runtime_error("ingest: empty timestamp in table '" + table +
                             "' row " + std::to_string(row_index));
  }
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0' || errno != 0 || !std::isfinite(v) ||
      v < 0.0) {
    throw std::runtime_error("ingest: unparseable timestamp '" + raw +
                             "' in table '" + table + "' row " +
                             std::to_string(row_index));
  }
  return static_cast<std::int64_t>(v);  // sub-minute precision truncated
}

TableSet load_tables(const SchemaConfig& config, const std::string& data_dir) {
  config.validate();
  TableSet out;
  for (const auto& schema : config.tables) {
    const std::string path = data_dir + "/" + schema.table_name + ".csv";
    std::vector<csv::Row> rows;
    try {
      rows = csv::read_file(path);
    } catch (const std::exception& e) {
      throw std::runtime_error("ingest: table '" + schema.table_name + "': " +
                               e.what());
    }
    if (rows.empty()) {
      throw std::runtime_error("ingest: table '" + schema.table_name +
                               "' has no header row");
    }

    // Map schema columns onto the CSV header.
    const csv::Row& header = rows.front();
    std::map<std::string, int> header_index;
    for (std::size_t i = 0; i < header.size(); ++i) {
      header_index[header[i]] = static_cast<int>(i);
    }
    for (const auto& col : schema.columns) {
      // Excluded columns are dropped anyway, so their absence is tolerated.
      if (col.kind == ColumnKind::Excluded) continue;
      if (!header_index.count(col.name)) {
        throw std::runtime_error("ingest: table '" + schema.table_name +
                                 "' is missing column '" + col.name +
                                 "' declared as " + to_string(col.kind));
      }
    }

    TableData data;
    data.schema = schema;
    data.value_columns = schema.value_columns();
    const int key_idx = header_index.at(schema.key_column());
    const int ts_idx = header_index.at(schema.timestamp_column());
    std::vector<int> value_idx;
    for (const auto& name : data.value_columns) {
      value_idx.push_back(header_index.at(name));
    }

    data.rows.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const csv::Row& row = rows[r];
      if (row.size() != header.size()) {
        throw std::runtime_error("ingest: table '" + schema.table_name +
                                 "' row " + std::to_string(r) + " has " +
                                 std::to_string(row.size()) + " fields, want " +
                                 std::to_string(header.size()));
      }
      RawRow raw;
      raw.patient_id = row[key_idx];
      raw.t_minutes = parse_timestamp(row[ts_idx], schema.table_name, r);
      raw.source_index = r - 1;
      raw.values.reserve(value_idx.size());
      for (int idx : value_idx) raw.values.push_back(row[idx]);
      data.rows.push_back(std::move(raw));
    }
    out.emplace(schema.table_name, std::move(data));
  }
  return out;
}

static EventRecord make_event(const TableData& table, const RawRow& row) {
  EventRecord e;
  e.t_minutes = row.t_minutes;
  e.table_name = table.schema.table_name;
  for (std::size_t i = 0; i < table.value_columns.size(); ++i) {
    if (!row.values[i].empty()) {
      e.pairs.emplace_back(table.value_columns[i], row.values[i]);
    }
  }
  return e;
}

std::vector<PatientTrajectory> build_trajectories(const TableSet& tables,
                                                  std::int64_t window_minutes,
                                                  std::size_t max_events,
                                                  IngestSummary* summary) {
  if (window_minutes <= 0) {
    throw std::runtime_error("ingest: window_minutes must be positive");
  }
  struct Keyed {
    std::int64_t t;
    const TableData* table;
    const RawRow* row;
  };
  std::map<std::string, std::vector<Keyed>> by_patient;
  std::set<std::string> all_patients;
  IngestSummary local;
  IngestSummary& s = summary ? *summary : local;

  for (const auto& [name, table] : tables) {
    s.rows_per_table[name] = table.rows.size();
    for (const RawRow& row : table.rows) {
      all_patients.insert(row.patient_id);
      if (row.t_minutes > window_minutes) {
        ++s.events_dropped_window;
        continue;
      }
      by_patient[row.patient_id].push_back({row.t_minutes, &table, &row});
    }
  }

  std::vector<PatientTrajectory> out;
  out.reserve(by_patient.size());
  for (auto& [patient, events] : by_patient) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Keyed& a, const Keyed& b) {
                       if (a.t != b.t) return a.t < b.t;
                       if (a.table->schema.table_name !=
                           b.table->schema.table_name) {
                         return a.table->schema.table_name <
                                b.table->schema.table_name;
                       }
                       return a.row->source_index < b.row->source_index;
                     });
    if (events.size() > max_events) {
      s.events_dropped_max += events.size() - max_events;
      events.resize(max_events);
    }
    PatientTrajectory traj;
    traj.patient_id = patient;
    traj.window_minutes = window_minutes;
    traj.events.reserve(events.size());
    for (const Keyed& k : events) {
      EventRecord e = make_event(*k.table, *k.row);
      if (e.pairs.empty()) continue;  // row with all-null values carries nothing
      traj.events.push_back(std::move(e));
    }
    if (traj.events.empty()) continue;
    out.push_back(std::move(traj));
  }
  s.patients_kept = out.size();
  s.patients_dropped_empty = all_patients.size() - out.size();
  return out;
}

// Per-item unique categorical values and observed combinations. Null cells
// participate as the empty-string value so that actual <= possible holds on
// every input.
struct ItemStats {
  std::vector<std::set<std::string>> uniques;  // per categorical column
  std::set<std::vector<std::string>> combos;
};

static std::map<std::string, ItemStats> item_stats(const TableData& table) {
  const auto cat_cols = table.schema.categorical_columns();
  std::vector<int> cat_idx;
  for (const auto& c : cat_cols) cat_idx.push_back(table.column_index(c));
  const auto item = table.schema.item_column();
  const int item_idx = item ? table.column_index(*item) : -1;

  std::map<std::string, ItemStats> stats;
  for (const RawRow& row : table.rows) {
    const std::string key = item_idx >= 0 ? row.values[item_idx] : "";
    ItemStats& st = stats[key];
    if (st.uniques.empty()) st.uniques.resize(cat_idx.size());
    std::vector<std::string> combo;
    combo.reserve(cat_idx.size());
    for (std::size_t c = 0; c < cat_idx.size(); ++c) {
      const std::string& v = row.values[cat_idx[c]];
      st.uniques[c].insert(v);
      combo.push_back(v);
    }
    st.combos.insert(std::move(combo));
  }
  return stats;
}

FeatureCountReport count_features(const TableSet& tables) {
  FeatureCountReport report;
  for (const auto& [name, table] : tables) {
    const long long num_cols =
        static_cast<long long>(table.schema.numeric_columns().size());
    long long possible = 0, actual = 0;
    for (const auto& [item, st] : item_stats(table)) {
      long long combos_possible = 1;
      for (const auto& uniq : st.uniques) {
        combos_possible *= static_cast<long long>(uniq.size());
      }
      possible += combos_possible * (num_cols + 1);
      actual += static_cast<long long>(st.combos.size()) * (num_cols + 1);
    }
    report.per_table.push_back({name, possible, actual});
    report.possible_count += possible;
    report.actual_count += actual;
  }
  return report;
}

long long count_features_possible(const TableSet& tables) {
  return count_features(tables).possible_count;
}

long long count_features_actual(const TableSet& tables) {
  return count_features(tables).actual_count;
}

TableSet tables_from_trajectories(const std::vector<PatientTrajectory>& trajs,
                                  const SchemaConfig& config) {
  TableSet out;
  for (const auto& schema : config.tables) {
    TableData data;
    data.schema = schema;
    data.value_columns = schema.value_columns();
    out.emplace(schema.table_name, std::move(data));
  }
  for (const auto& traj : trajs) {
    for (const auto& event : traj.events) {
      auto it = out.find(event.table_name);
      if (it == out.end()) {
        throw std::runtime_error("ingest: event references unknown table '" +
                                 event.table_name + "'");
      }
      TableData& data = it->second;
      RawRow row;
      row.patient_id = traj.patient_id;
      row.t_minutes = event.t_minutes;
      row.source_index = data.rows.size();
      row.values.assign(data.value_columns.size(), "");
      for (const auto& [col, val] : event.pairs) {
        const int idx = data.column_index(col);
        if (idx < 0) {
          throw std::runtime_error("ingest: event column '" + col +
                                   "' not in schema of '" + event.table_name +
                                   "'");
        }
        row.values[idx] = val;
      }
      data.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace resyn
