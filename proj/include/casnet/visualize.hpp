#pragma once

#include <string>
#include <vector>

#include "casnet/backbone.hpp"
#include "casnet/data.hpp"

namespace casnet {

/// Writes each sample's spatial attention maps (one per inserted co-attentive
/// stage and task) as 8-bit PGM files, upscaled by nearest neighbor to the
/// sample's resolution. Filenames are "<id>_stage<k>_task<A|B>.pgm" under
/// out_dir. Returns the paths written. Throws ConfigError when the network
/// has no co-attentive modules.
std::vector<std::string> export_attention_maps(SharingNetwork& net,
                                               const std::vector<Sample>& samples,
                                               const std::string& out_dir);

}  // namespace casnet
