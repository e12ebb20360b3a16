#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "resyn/ingest.hpp"

namespace resyn {

// Unit-cost edit distance (insert / delete / substitute).
int levenshtein(std::string_view a, std::string_view b);

struct NumericRange {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct ColumnConstraints {
  std::optional<NumericRange> range;               // numeric: global bounds
  std::map<std::string, NumericRange> item_range;  // numeric: per-item bounds
  std::set<std::string> permitted;                 // categorical value set
};

struct ConstraintSet {
  // table -> column -> constraints
  std::map<std::string, std::map<std::string, ColumnConstraints>> tables;
  int levenshtein_threshold = 2;
  int min_item_occurrences = 30;

  void save(const std::string& path) const;
  static ConstraintSet load(const std::string& path);
};

// Ranges and permissible sets observed in the real training tables. Items
// with fewer than min_item_occurrences rows fall back to the column-global
// numeric range.
ConstraintSet learn_constraints(const TableSet& real_tables, int lev_threshold,
                                int min_item_occurrences);

enum class RejectReason { BadTable, BadFormat, IrreparableColumn,
                          EmptyAfterStrip };
std::string to_string(RejectReason r);

struct VerifyResult {
  bool ok = false;
  EventRecord event;         // valid when ok
  RejectReason reason = RejectReason::BadFormat;
  int corrections = 0;       // column names repaired or numerics stripped
};

// Parses "<table> <col> <val> ..." generated text: the leading token must be
// a known table name; column tokens are matched exactly or repaired to the
// nearest valid name within the Levenshtein threshold; non-numeric characters
// are stripped from numeric fields.
VerifyResult verify_event(const std::string& text, std::int64_t t_minutes,
                          const SchemaConfig& config,
                          const ConstraintSet& constraints);

enum class ValidateMode { Strict, Lenient };

struct ValidationReport {
  std::size_t sequences_total = 0;
  std::size_t events_total = 0;
  std::size_t events_corrected = 0;
  std::map<std::string, std::size_t> events_rejected;  // by reason
  std::size_t events_truncated_time = 0;
  std::size_t patients_discarded_invalid = 0;
  std::size_t patients_discarded_empty = 0;
  std::size_t patients_removed_constraints = 0;
  std::size_t categorical_values_replaced = 0;
  std::size_t patients_retained = 0;

  double retention_rate() const {
    return sequences_total == 0
               ? 0.0
               : static_cast<double>(patients_retained) /
                     static_cast<double>(sequences_total);
  }
  void save(const std::string& path) const;
};

// Strict mode discards a patient wholly if any event was rejected; lenient
// mode drops rejected events individually. Both then truncate at the first
// timestamp that goes backwards or beyond the window. Returns the retained
// events, or nullopt when the patient is discarded.
std::optional<std::vector<EventRecord>> validate_patient(
    const std::vector<VerifyResult>& events, std::int64_t window_minutes,
    ValidateMode mode, ValidationReport& report);

// One output row per event with synthetic patient ids assigned sequentially
// ("syn-000001", ...); absent columns become empty cells.
TableSet rebuild_tables(const std::vector<std::vector<EventRecord>>& patients,
                        const SchemaConfig& config);

// Numeric values must lie inside the global and item-level ranges observed in
// real data; categorical values outside the permissible set are replaced by
// the nearest permitted value within the threshold. Any remaining violation
// removes the entire patient from every table.
void enforce_column_constraints(TableSet& tables,
                                const ConstraintSet& constraints,
                                ValidationReport& report);

// CSV emission of rebuilt tables (<dir>/<table>.csv), schema column order
// minus excluded columns.
void write_tables_csv(const TableSet& tables, const std::string& dir);

}  // namespace resyn
