#pragma once

#include <string>
#include <vector>

#include "casnet/tensor.hpp"

namespace casnet {

/// Writes named parameter arrays as versioned text. Values use hexadecimal
/// float notation so a save/load round trip is bit-exact.
void save_checkpoint(const std::string& path, const std::vector<Param*>& params);

/// Loads a checkpoint into an existing parameter set. Entries must match the
/// file in order, name, and shape; any mismatch raises DataError.
void load_checkpoint(const std::string& path, const std::vector<Param*>& params);

}  // namespace casnet
