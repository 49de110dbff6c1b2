#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace lrtabl {

// RFC-4180 output with LF line endings.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    void row(const std::vector<std::string>& fields);
    const std::string& str() const { return out_; }
    std::size_t rows() const { return rows_; }

private:
    void append(const std::vector<std::string>& fields);

    std::size_t columns_;
    std::size_t rows_ = 0;
    std::string out_;
};

std::string csv_escape(std::string_view field);

// Shortest decimal form that round-trips to the same double.
std::string format_real(double v);

// Writes to a sibling temporary file and renames it into place.
void atomic_write_file(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace lrtabl
