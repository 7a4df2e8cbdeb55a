#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace zipit {

// Fixed-point text with `digits` decimals; "-0" is printed as "0".
std::string csv_number(double v, int digits = 6);

struct CsvTable {
    std::vector<std::string> comments;  // emitted as "# ..." lines before the header
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row);
    std::string str() const;
    void write(const std::filesystem::path& path) const;
};

}  // namespace zipit
