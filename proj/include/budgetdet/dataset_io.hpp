#pragma once

#include <iosfwd>
#include <string>

#include "budgetdet/envsim.hpp"

namespace budgetdet {

// Plain-text dataset container, one record per video:
//
//   budgetdet-dataset 1
//   videos <N>
//   video <id> frames <F> dim <D> diff <0|1>
//   <F lines of D space-separated values>
//   gts <G>
//   <start> <end> <label>          (G lines, normalized time)
//
// Values are printed with 17 significant digits so a read-back is exact.
// The diff flag asks the reader to rebuild the frame-difference channel;
// difference rows are not stored. Externally extracted features can be
// imported in the same format.

void write_dataset(std::ostream& os, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);

/// Throws std::runtime_error with the offending token on malformed input.
Dataset read_dataset(std::istream& is);
Dataset read_dataset(const std::string& path);

}  // namespace budgetdet
