#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "casnet/rng.hpp"
#include "casnet/tensor.hpp"

namespace casnet {

enum class AttrKind { Global, Local };

/// Region in image-fraction units (row/col origin plus extent), used by local
/// attributes only.
struct Region {
    double row = 0.0, col = 0.0, h = 0.0, w = 0.0;
};

struct AttributeSpec {
    std::string name;
    AttrKind kind = AttrKind::Global;
    Region region;        // meaningful iff kind == Local
    double base_rate = 0.5;  // must lie in (0.05, 0.95)
};

/// The stock 26-attribute layout: 10 global attributes followed by 16 local
/// ones. Global effects, keyed by position among the globals:
///   0       "bright"  +0.12 mean shift on every channel
///   1       "grad_v"  zero-mean vertical gradient, amplitude 0.08
///   2..4    "hue_*"   +0.08 on one channel, -0.04 on the other two
///   5..9    "wave_k"  zero-mean vertical cosine, amplitude 0.08, channel k%3
/// Local attribute j brightens its 4x4-grid cell by +0.30 on channel j%3 and
/// -0.15 on the others. Base rates are distinct, spanning 0.15..0.75.
std::vector<AttributeSpec> default_attribute_specs();

struct Sample {
    Tensor image;  // (1,H,W,3), values in [0,1]
    std::vector<std::uint8_t> labels;
    std::string id;
};

struct Dataset {
    std::vector<AttributeSpec> attributes;
    std::vector<Sample> samples;
    int height = 0, width = 0;

    int num_attributes() const { return static_cast<int>(attributes.size()); }
    int size() const { return static_cast<int>(samples.size()); }
};

/// Cross-group correlation pairs: the k-th global attribute (in list order)
/// is paired with the k-th local one, for k < min(#global, #local).
std::vector<std::pair<int, int>> correlated_pairs(const std::vector<AttributeSpec>& attrs);

/// Draws one label vector. Paired locals are drawn conditioned on their
/// global partner so that corr(global, local) == correlation; everything else
/// is an independent Bernoulli(base_rate).
std::vector<std::uint8_t> sample_labels(const std::vector<AttributeSpec>& attrs,
                                        const std::vector<std::pair<int, int>>& pairs,
                                        double correlation, Rng& rng);

/// Renders one image for a given label vector: base gray 0.45, the active
/// attribute effects described above, then per-pixel Gaussian noise and a
/// clamp to [0,1].
Tensor render_image(const std::vector<AttributeSpec>& attrs,
                    const std::vector<std::uint8_t>& labels, double noise, int height,
                    int width, Rng& rng);

Dataset generate_synthetic(int n, const std::vector<AttributeSpec>& attrs, double correlation,
                           double noise, std::uint64_t seed, int height = 64, int width = 32);

/// On-disk layout under `dir`:
///   labels.csv       header "filename,<name1>,...,<nameL>", then one row per
///                    sample: "<id>.ppm,0,1,..." (comma-delimited, 0/1 labels)
///   attributes.csv   "name,kind,row,col,h,w,base_rate" per attribute
///   <id>.ppm         binary P6, 8-bit
void save_dataset(const Dataset& ds, const std::string& dir);

/// target_height/width = 0 keeps native image sizes (first image fixes H/W);
/// otherwise images are rescaled by nearest neighbor.
Dataset load_dataset(const std::string& image_dir, const std::string& labels_file,
                     int target_height = 0, int target_width = 0);

/// Reads attributes.csv as written by save_dataset. Missing metadata is fine
/// for plain training, but grouping schemes need it.
std::vector<AttributeSpec> load_attribute_specs(const std::string& path);

/// Nearest-neighbor resample to (height, width); batch and channels unchanged.
Tensor resize_nearest(const Tensor& src, int height, int width);

struct SplitResult {
    Dataset train, val, test;
};

/// Deterministic shuffled partition; sizes by largest remainder, ties to the
/// earlier part (10 samples at 8:1:1 give 8/1/1).
SplitResult split(const Dataset& ds, double train_ratio, double val_ratio, double test_ratio,
                  std::uint64_t seed);

enum class GroupingKind { GlobalLocal, RareFrequent, TopDown, Random };

const char* grouping_kind_name(GroupingKind kind);
GroupingKind grouping_kind_from(const std::string& name);

struct GroupingScheme {
    GroupingKind kind = GroupingKind::GlobalLocal;
    std::vector<int> task_a, task_b;  // disjoint, cover 0..L-1, both non-empty
};

GroupingScheme group_attributes(const std::vector<AttributeSpec>& attrs, GroupingKind kind,
                                std::uint64_t seed);

}  // namespace casnet
