#include "nutri/report.hpp"

#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "nutri/errors.hpp"

namespace nutri {

using json = nlohmann::json;

std::string format_table(const std::vector<ReportRow>& rows) {
  std::size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "Model";
  for (const char* c : kTaskColumns) os << std::right << std::setw(10) << c;
  os << std::setw(10) << "Mean" << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << std::right;
    for (double v : r.report.task_percent) os << std::setw(10) << v;
    os << std::setw(10) << r.report.mean_percent << "\n";
  }
  return os.str();
}

std::string format_records(const std::vector<ReportRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    json j = {{"record", "pmae"}, {"name", r.name}, {"samples", r.report.samples}};
    for (std::size_t i = 0; i < kNumTasks; ++i) j[kTaskNames[i]] = r.report.task_percent[i];
    j["mean"] = r.report.mean_percent;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_records(const std::string& text) {
  std::vector<ReportRow> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.at("record").get<std::string>() != "pmae") continue;
      ReportRow r;
      r.name = j.at("name").get<std::string>();
      r.report.samples = j.at("samples").get<std::size_t>();
      for (std::size_t i = 0; i < kNumTasks; ++i) r.report.task_percent[i] = j.at(kTaskNames[i]).get<double>();
      r.report.mean_percent = j.at("mean").get<double>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("malformed report record: " + std::string(e.what()));
    }
  }
  return rows;
}

std::string prediction_record(const std::string& image, const NutritionVector& v, const std::string& fingerprint) {
  json j = {{"record", "prediction"}, {"image", image}, {"fingerprint", fingerprint}};
  for (std::size_t i = 0; i < kNumTasks; ++i) j[kTaskNames[i]] = {{"value", v[i]}, {"unit", kTaskUnits[i]}};
  return j.dump();
}

}  // namespace nutri
