#pragma once

#include <cassert>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rewardlab {

struct EmptyTable : std::runtime_error {
    explicit EmptyTable(const std::string& what) : std::runtime_error(what) {}
};

struct TableIoError : std::runtime_error {
    explicit TableIoError(const std::string& what) : std::runtime_error(what) {}
};

// Named-column tabular rollout data; rectangular, row-major, immutable once
// filled. Values are always finite (rollouts run under total semantics).
class TrajectoryTable {
public:
    TrajectoryTable() = default;
    explicit TrajectoryTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t rows() const { return columns_.empty() ? 0 : data_.size() / columns_.size(); }
    bool empty() const { return rows() == 0; }

    void add_row(std::span<const double> row) {
        assert(row.size() == columns_.size());
        for (double v : row) assert(std::isfinite(v));
        data_.insert(data_.end(), row.begin(), row.end());
    }

    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * columns_.size(), columns_.size()};
    }

    double at(std::size_t row_index, std::size_t col_index) const {
        return data_[row_index * columns_.size() + col_index];
    }

    int column_index(std::string_view name) const {
        for (std::size_t i = 0; i < columns_.size(); ++i)
            if (columns_[i] == name) return static_cast<int>(i);
        return -1;
    }

    std::vector<double> column(std::size_t col_index) const {
        std::vector<double> out;
        out.reserve(rows());
        for (std::size_t r = 0; r < rows(); ++r) out.push_back(at(r, col_index));
        return out;
    }

    void reserve_rows(std::size_t n) { data_.reserve(n * columns_.size()); }

    bool operator==(const TrajectoryTable& other) const {
        return columns_ == other.columns_ && data_ == other.data_;
    }

    // Headered CSV; numbers in shortest round-trip form so written tables are
    // byte-stable across identical runs.
    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw TableIoError("cannot open for writing: " + path);
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) out << ',';
            out << columns_[i];
        }
        out << '\n';
        char buf[64];
        for (std::size_t r = 0; r < rows(); ++r) {
            auto values = row(r);
            for (std::size_t i = 0; i < values.size(); ++i) {
                if (i) out << ',';
                auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, values[i]);
                out.write(buf, ptr - buf);
            }
            out << '\n';
        }
        if (!out) throw TableIoError("write failed: " + path);
    }

    static TrajectoryTable read_csv(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw TableIoError("cannot open for reading: " + path);
        std::string line;
        if (!std::getline(in, line)) throw TableIoError("missing header line: " + path);
        TrajectoryTable table(split_header(line));
        std::vector<double> row;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            row.clear();
            std::size_t start = 0;
            while (start <= line.size()) {
                std::size_t end = line.find(',', start);
                if (end == std::string::npos) end = line.size();
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + end, v);
                if (ec != std::errc{} || ptr != line.data() + end)
                    throw TableIoError(path + ": malformed number at line " +
                                       std::to_string(line_no));
                row.push_back(v);
                start = end + 1;
                if (end == line.size()) break;
            }
            if (row.size() != table.columns_.size())
                throw TableIoError(path + ": wrong column count at line " + std::to_string(line_no));
            table.add_row(row);
        }
        return table;
    }

private:
    static std::vector<std::string> split_header(const std::string& line) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            out.emplace_back(line.substr(start, end - start));
            start = end + 1;
            if (end == line.size()) break;
        }
        return out;
    }

    std::vector<std::string> columns_;
    std::vector<double> data_;
};

}  // namespace rewardlab
