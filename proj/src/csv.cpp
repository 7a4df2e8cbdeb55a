#include "zipit/csv.hpp"

#include <cmath>
#include <cstdio>

#include "zipit/checkpoint.hpp"
#include "zipit/error.hpp"

namespace zipit {

std::string csv_number(double v, int digits) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
    return s;
}

void CsvTable::add(std::vector<std::string> row) {
    if (!header.empty() && row.size() != header.size())
        throw ShapeError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                         std::to_string(header.size()));
    rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    auto line = [&](const std::vector<std::string>& r) {
        for (size_t i = 0; i < r.size(); ++i) {
            std::string f = r[i];
            if (f.find_first_of(",\"\n") != std::string::npos) {
                std::string q = "\"";
                for (char ch : f) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
                f = q + "\"";
            }
            out += (i ? "," : "") + f;
        }
        out += "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_file_bytes(path, str()); }

}  // namespace zipit
