#pragma once

// Delimited-text round trip for estimated coefficient paths and
// cohort-period grids, so one command's output feeds the next.

#include <string>

#include "evpanel/estimators.hpp"

namespace evpanel {

// Two files: a per-bin table (kind, tau, estimate, se, 95% band, n,
// reference flag) and the covariance of the non-reference coefficients.
void save_path(const CoefficientPath& path, const std::string& table_file,
               const std::string& vcov_file, char delimiter = '\t',
               const std::string& header_comment = "");

// Rebuilds a path from the two files. Diagnostics that live outside the
// tables (reference mean, test p-values) come back as NaN.
CoefficientPath load_path(const std::string& table_file,
                          const std::string& vcov_file);

void save_attgt(const GroupTimeATT& grid, const std::string& file,
                char delimiter = '\t', const std::string& header_comment = "");

}  // namespace evpanel
