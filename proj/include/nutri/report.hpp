#pragma once

// Human-readable PMAE tables and JSON-lines records that parse back exactly.

#include <string>
#include <utility>
#include <vector>

#include "nutri/losses.hpp"
#include "nutri/model.hpp"

namespace nutri {

struct ReportRow {
  std::string name;
  PmaeReport report;

  bool operator==(const ReportRow&) const = default;
};

// Columns: name, Calories, Mass, Fat, Carb., Protein, Mean (percent, 2 dp).
std::string format_table(const std::vector<ReportRow>& rows);

// One JSON object per row, newline-terminated.
std::string format_records(const std::vector<ReportRow>& rows);
// Inverse of format_records; throws DataError on malformed input.
std::vector<ReportRow> parse_records(const std::string& text);

// One JSON object with the five quantities, their units and the model
// fingerprint.
std::string prediction_record(const std::string& image, const NutritionVector& v, const std::string& fingerprint);

}  // namespace nutri
