#pragma once

#include <string>
#include <vector>

namespace lamps {

/// Column-named numeric table; the interchange format for experiment output.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);
  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;

  /// Header line plus one line per row; values use format_double, so they
  /// parse back to the same doubles.
  std::string to_csv() const;
  static Table from_csv(const std::string& text);
};

/// Shortest-round-trip formatting used for every emitted number.
std::string format_double(double value);

}  // namespace lamps
