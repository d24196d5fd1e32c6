#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pathcons {

/// RFC-4180 CSV writer with deterministic float formatting (%.17g round-trip).
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);

    void add_row(std::vector<std::string> cells);
    /// Serialized document: header row, CRLF line endings, quoted as needed.
    std::string str() const;
    void write(const std::filesystem::path& path) const;

    std::size_t row_count() const { return rows_.size(); }
    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

std::string csv_escape(const std::string& cell);
std::string format_double(double v);

/// Minimal reader for the files CsvWriter emits (used by plotting and tests).
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace pathcons
