#include "resyn/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "resyn/csv.hpp"

namespace resyn {

int levenshtein(std::string_view a, std::string_view b) {
  const std::size_t n = b.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 0; i < a.size(); ++i) {
    cur[0] = static_cast<int>(i) + 1;
    for (std::size_t j = 0; j < n; ++j) {
      const int del = prev[j + 1] + 1;
      const int ins = cur[j] + 1;
      const int sub = prev[j] + (a[i] != b[j] ? 1 : 0);
      cur[j + 1] = std::min({del, ins, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::BadTable: return "bad-table";
    case RejectReason::BadFormat: return "bad-format";
    case RejectReason::IrreparableColumn: return "irreparable-column";
    case RejectReason::EmptyAfterStrip: return "empty-after-strip";
  }
  return "bad-format";
}

ConstraintSet learn_constraints(const TableSet& real_tables, int lev_threshold,
                                int min_item_occurrences) {
  ConstraintSet out;
  out.levenshtein_threshold = lev_threshold;
  out.min_item_occurrences = min_item_occurrences;
  for (const auto& [name, table] : real_tables) {
    auto& cols = out.tables[name];
    const auto item_col = table.schema.item_column();
    const int item_idx = item_col ? table.column_index(*item_col) : -1;

    for (const auto& col : table.value_columns) {
      ColumnConstraints cc;
      const int idx = table.column_index(col);
      const bool numeric = table.schema.is_numeric(col);
      std::map<std::string, std::vector<double>> by_item;
      std::map<std::string, std::size_t> item_rows;
      for (const RawRow& row : table.rows) {
        const std::string& v = row.values[idx];
        const std::string item = item_idx >= 0 ? row.values[item_idx] : "";
        ++item_rows[item];
        if (v.empty()) continue;
        if (numeric) {
          char* end = nullptr;
          const double x = std::strtod(v.c_str(), &end);
          if (end != v.c_str() && *end == '\0' && std::isfinite(x)) {
            if (!cc.range) {
              cc.range = NumericRange{x, x};
            } else {
              cc.range->lo = std::min(cc.range->lo, x);
              cc.range->hi = std::max(cc.range->hi, x);
            }
            if (item_idx >= 0) by_item[item].push_back(x);
          }
        } else {
          cc.permitted.insert(v);
        }
      }
      if (numeric && item_idx >= 0) {
        for (const auto& [item, values] : by_item) {
          if (static_cast<int>(item_rows[item]) < min_item_occurrences ||
              values.empty()) {
            continue;  // sparse item: global range applies
          }
          NumericRange r{values.front(), values.front()};
          for (double x : values) {
            r.lo = std::min(r.lo, x);
            r.hi = std::max(r.hi, x);
          }
          cc.item_range[item] = r;
        }
      }
      cols[col] = std::move(cc);
    }
  }
  return out;
}

void ConstraintSet::save(const std::string& path) const {
  nlohmann::ordered_json doc;
  doc["levenshtein_threshold"] = levenshtein_threshold;
  doc["min_item_occurrences"] = min_item_occurrences;
  doc["tables"] = nlohmann::ordered_json::object();
  for (const auto& [table, cols] : tables) {
    nlohmann::ordered_json jt;
    for (const auto& [col, cc] : cols) {
      nlohmann::ordered_json jc;
      if (cc.range) jc["range"] = {cc.range->lo, cc.range->hi};
      if (!cc.item_range.empty()) {
        nlohmann::ordered_json ji;
        for (const auto& [item, r] : cc.item_range) ji[item] = {r.lo, r.hi};
        jc["item_range"] = ji;
      }
      if (!cc.permitted.empty()) {
        jc["permitted"] = std::vector<std::string>(cc.permitted.begin(),
                                                   cc.permitted.end());
      }
      jt[col] = jc;
    }
    doc["tables"][table] = jt;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("constraints: cannot write " + path);
  out << doc.dump(2) << "\n";
}

ConstraintSet ConstraintSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("constraints: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  ConstraintSet out;
  out.levenshtein_threshold = doc.at("levenshtein_threshold").get<int>();
  out.min_item_occurrences = doc.at("min_item_occurrences").get<int>();
  for (auto it = doc.at("tables").begin(); it != doc.at("tables").end(); ++it) {
    auto& cols = out.tables[it.key()];
    for (auto jc = it.value().begin(); jc != it.value().end(); ++jc) {
      ColumnConstraints cc;
      const auto& body = jc.value();
      if (body.contains("range")) {
        cc.range = NumericRange{body["range"][0].get<double>(),
                                body["range"][1].get<double>()};
      }
      if (body.contains("item_range")) {
        for (auto ji = body["item_range"].begin();
             ji != body["item_range"].end(); ++ji) {
          cc.item_range[ji.key()] = NumericRange{
              ji.value()[0].get<double>(), ji.value()[1].get<double>()};
        }
      }
      if (body.contains("permitted")) {
        for (const auto& v : body["permitted"]) {
          cc.permitted.insert(v.get<std::string>());
        }
      }
      cols[jc.key()] = std::move(cc);
    }
  }
  return out;
}

namespace {

std::vector<std::string> whitespace_fields(const std::string& text) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) fields.push_back(std::move(cur));
  return fields;
}

// Nearest valid name; ties resolve lexicographically (the candidate list is
// sorted). Returns distance and name.
std::pair<int, std::string> nearest_name(const std::string& token,
                                         const std::vector<std::string>& names) {
  int best = std::numeric_limits<int>::max();
  std::string pick;
  for (const auto& name : names) {
    const int d = levenshtein(token, name);
    if (d < best) {
      best = d;
      pick = name;
    }
  }
  return {best, pick};
}

std::string strip_non_numeric(const std::string& v) {
  std::string out;
  for (char c : v) {
    if ((c >= '0' && c <= '9') || c == '.' || c == '-') out.push_back(c);
  }
  return out;
}

bool parses_as_number(const std::string& v) {
  if (v.empty()) return false;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  return end != v.c_str() && *end == '\0' && std::isfinite(x);
}

}  // namespace

VerifyResult verify_event(const std::string& text, std::int64_t t_minutes,
                          const SchemaConfig& config,
                          const ConstraintSet& constraints) {
  VerifyResult res;
  const auto tokens = whitespace_fields(text);
  if (tokens.empty()) {
    res.reason = RejectReason::BadFormat;
    return res;
  }
  const TableSchema* table = config.find_table(tokens[0]);
  if (table == nullptr) {
    res.reason = RejectReason::BadTable;
    return res;
  }
  std::vector<std::string> names = table->value_columns();
  std::sort(names.begin(), names.end());
  const int threshold = constraints.levenshtein_threshold;

  auto column_like = [&](const std::string& tok) {
    return nearest_name(tok, names).first <= threshold;
  };

  EventRecord event;
  event.t_minutes = t_minutes;
  event.table_name = table->table_name;
  std::set<std::string> seen;
  std::size_t i = 1;
  while (i < tokens.size()) {
    const auto [dist, name] = nearest_name(tokens[i], names);
    if (dist > threshold) {
      // A column name is required here; this token cannot be repaired.
      res.reason = dist == std::numeric_limits<int>::max()
                       ? RejectReason::BadFormat
                       : RejectReason::IrreparableColumn;
      return res;
    }
    if (dist > 0) ++res.corrections;
    if (!seen.insert(name).second) {
      res.reason = RejectReason::BadFormat;  // duplicated column
      return res;
    }
    ++i;
    std::string value;
    while (i < tokens.size() && !column_like(tokens[i])) {
      if (!value.empty()) value.push_back(' ');
      value += tokens[i];
      ++i;
    }
    if (value.empty()) {
      res.reason = RejectReason::BadFormat;  // column without a value
      return res;
    }
    if (table->is_numeric(name)) {
      const std::string stripped = strip_non_numeric(value);
      if (stripped != value) ++res.corrections;
      if (stripped.empty() || !parses_as_number(stripped)) {
        res.reason = RejectReason::EmptyAfterStrip;
        return res;
      }
      value = stripped;
    }
    event.pairs.emplace_back(name, std::move(value));
  }
  if (event.pairs.empty()) {
    res.reason = RejectReason::BadFormat;
    return res;
  }
  res.ok = true;
  res.event = std::move(event);
  return res;
}

std::optional<std::vector<EventRecord>> validate_patient(
    const std::vector<VerifyResult>& events, std::int64_t window_minutes,
    ValidateMode mode, ValidationReport& report) {
  ++report.sequences_total;
  report.events_total += events.size();

  std::vector<EventRecord> kept;
  bool any_invalid = false;
  for (const auto& v : events) {
    if (v.ok) {
      report.events_corrected += v.corrections > 0 ? 1 : 0;
      kept.push_back(v.event);
    } else {
      any_invalid = true;
      ++report.events_rejected[to_string(v.reason)];
    }
  }
  if (mode == ValidateMode::Strict && any_invalid) {
    ++report.patients_discarded_invalid;
    return std::nullopt;
  }

  // Temporal consistency: truncate at the first backwards or out-of-window
  // timestamp.
  std::vector<EventRecord> in_order;
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::int64_t t = kept[i].t_minutes;
    if ((i > 0 && t < prev) || t > window_minutes) {
      report.events_truncated_time += kept.size() - i;
      break;
    }
    in_order.push_back(kept[i]);
    prev = t;
  }
  if (in_order.empty()) {
    ++report.patients_discarded_empty;
    return std::nullopt;
  }
  ++report.patients_retained;
  return in_order;
}

TableSet rebuild_tables(const std::vector<std::vector<EventRecord>>& patients,
                        const SchemaConfig& config) {
  TableSet out;
  for (const auto& schema : config.tables) {
    TableData data;
    data.schema = schema;
    data.value_columns = schema.value_columns();
    out.emplace(schema.table_name, std::move(data));
  }
  for (std::size_t p = 0; p < patients.size(); ++p) {
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06zu", p + 1);
    for (const EventRecord& e : patients[p]) {
      auto it = out.find(e.table_name);
      if (it == out.end()) {
        throw std::runtime_error("rebuild_tables: unknown table '" +
                                 e.table_name + "'");
      }
      TableData& data = it->second;
      RawRow row;
      row.patient_id = id;
      row.t_minutes = e.t_minutes;
      row.source_index = data.rows.size();
      row.values.assign(data.value_columns.size(), "");
      for (const auto& [col, val] : e.pairs) {
        const int idx = data.column_index(col);
        if (idx < 0) {
          throw std::runtime_error("rebuild_tables: column '" + col +
                                   "' not in '" + e.table_name + "'");
        }
        row.values[idx] = val;
      }
      data.rows.push_back(std::move(row));
    }
  }
  return out;
}

void enforce_column_constraints(TableSet& tables,
                                const ConstraintSet& constraints,
                                ValidationReport& report) {
  std::set<std::string> violators;
  for (auto& [name, table] : tables) {
    auto tc = constraints.tables.find(name);
    if (tc == constraints.tables.end()) continue;
    const auto item_col = table.schema.item_column();
    const int item_idx = item_col ? table.column_index(*item_col) : -1;

    // Column processing order: item column first so that numeric item-level
    // lookups see the repaired item value.
    std::vector<int> order;
    if (item_idx >= 0) order.push_back(item_idx);
    for (std::size_t i = 0; i < table.value_columns.size(); ++i) {
      if (static_cast<int>(i) != item_idx) order.push_back(static_cast<int>(i));
    }

    for (RawRow& row : table.rows) {
      bool violated = false;
      for (int idx : order) {
        const std::string& col = table.value_columns[idx];
        auto cc_it = tc->second.find(col);
        if (cc_it == tc->second.end()) continue;
        const ColumnConstraints& cc = cc_it->second;
        std::string& value = row.values[idx];
        if (value.empty()) continue;

        if (table.schema.is_numeric(col)) {
          char* end = nullptr;
          const double x = std::strtod(value.c_str(), &end);
          const bool parsed =
              end != value.c_str() && *end == '\0' && std::isfinite(x);
          if (!parsed || (cc.range && !cc.range->contains(x))) {
            violated = true;
            break;
          }
          if (item_idx >= 0) {
            auto ir = cc.item_range.find(row.values[item_idx]);
            if (ir != cc.item_range.end() && !ir->second.contains(x)) {
              violated = true;
              break;
            }
          }
        } else {
          if (cc.permitted.empty() || cc.permitted.count(value)) continue;
          int best = std::numeric_limits<int>::max();
          std::string pick;
          for (const auto& cand : cc.permitted) {  // sorted: ties keep first
            const int d = levenshtein(value, cand);
            if (d < best) {
              best = d;
              pick = cand;
            }
          }
          if (best <= constraints.levenshtein_threshold) {
            value = pick;
            ++report.categorical_values_replaced;
          } else {
            violated = true;
            break;
          }
        }
      }
      if (violated) violators.insert(row.patient_id);
    }
  }

  if (violators.empty()) return;
  report.patients_removed_constraints += violators.size();
  report.patients_retained -= std::min(report.patients_retained,
                                       violators.size());
  for (auto& [name, table] : tables) {
    std::vector<RawRow> keep;
    keep.reserve(table.rows.size());
    for (RawRow& row : table.rows) {
      if (!violators.count(row.patient_id)) keep.push_back(std::move(row));
    }
    table.rows = std::move(keep);
  }
}

void ValidationReport::save(const std::string& path) const {
  nlohmann::ordered_json doc;
  doc["sequences_total"] = sequences_total;
  doc["events_total"] = events_total;
  doc["events_corrected"] = events_corrected;
  doc["events_rejected"] = events_rejected;
  doc["events_truncated_time"] = events_truncated_time;
  doc["patients_discarded_invalid"] = patients_discarded_invalid;
  doc["patients_discarded_empty"] = patients_discarded_empty;
  doc["patients_removed_constraints"] = patients_removed_constraints;
  doc["categorical_values_replaced"] = categorical_values_replaced;
  doc["patients_retained"] = patients_retained;
  doc["retention_rate"] = retention_rate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << doc.dump(2) << "\n";
}

void write_tables_csv(const TableSet& tables, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, table] : tables) {
    std::vector<csv::Row> rows;
    csv::Row header;
    std::vector<const ColumnSpec*> cols;
    for (const auto& c : table.schema.columns) {
      if (c.kind == ColumnKind::Excluded) continue;
      header.push_back(c.name);
      cols.push_back(&c);
    }
    rows.push_back(header);
    for (const RawRow& row : table.rows) {
      csv::Row out_row;
      for (const ColumnSpec* c : cols) {
        switch (c->kind) {
          case ColumnKind::Key:
            out_row.push_back(row.patient_id);
            break;
          case ColumnKind::Timestamp:
            out_row.push_back(std::to_string(row.t_minutes));
            break;
          default: {
            const int idx = table.column_index(c->name);
            out_row.push_back(idx >= 0 ? row.values[idx] : "");
            break;
          }
        }
      }
      rows.push_back(std::move(out_row));
    }
    csv::write_file(dir + "/" + name + ".csv", rows);
  }
}

}  // namespace resyn
