#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgdl/tensor.hpp"

namespace cgdl {

// Label value used for samples that belong to no generated class (noise).
inline constexpr int kOutlierLabel = 255;

struct LabeledImageSet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;  // N * height * width, row-major, values in [0,1]
    std::vector<int> labels;     // N
    std::vector<std::string> class_names;  // indexed by class id where meaningful

    std::size_t size() const { return labels.size(); }
    std::size_t image_pixels() const { return height * width; }

    // [indices.size() x image_pixels] matrix of the selected images.
    Tensor batch(const std::vector<std::size_t>& indices) const;
    // All images as one [N x image_pixels] matrix.
    Tensor all() const;

    // Concatenates another set with identical dimensions.
    void append(const LabeledImageSet& other);
    void validate() const;
};

// --- IDX container -----------------------------------------------------------
// Big-endian headers; image files carry magic 0x00000803 and [count, rows,
// cols], label files carry 0x00000801 and [count]. Pixels are bytes, scaled
// to [0,1] on load and quantized with round(p*255) on write.

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path);

// --- synthetic corpus ----------------------------------------------------------
// Class templates are 3-of-9 block patterns on a 3x3 grid: every pair of
// distinct templates differs in at least two blocks, which keeps pairwise L1
// distance >= 0.15 * side^2 for side >= 6. Samples are the class template
// plus clipped Gaussian pixel noise.

struct SyntheticSpec {
    std::size_t num_classes = 0;
    std::size_t per_class = 0;
    std::size_t image_side = 12;
    double noise_sigma = 0.1;
    std::uint64_t seed = 1;
    // Number of template slots to skip; unseen-class sets use the slots after
    // the known ones.
    std::size_t template_offset = 0;
};

std::size_t max_templates();  // number of distinct templates (84)
std::string template_name(std::size_t index);
// The clean template pattern as a [side x side] image.
Tensor template_image(std::size_t index, std::size_t side);

LabeledImageSet generate_synthetic(const SyntheticSpec& spec);

// --- outlier sets --------------------------------------------------------------

enum class OutlierKind { uniform_noise, noised_known, unseen_templates };

struct OutlierSpec {
    OutlierKind kind = OutlierKind::uniform_noise;
    std::size_t count = 0;
    std::uint64_t seed = 1;
    std::size_t image_side = 0;     // used when no base set is given
    std::size_t known_classes = 0;  // template slots taken by the known set
    std::size_t unseen_classes = 2;
    double noise_scale = 0.5;  // additive uniform noise for noised_known
    double noise_sigma = 0.1;  // template noise for unseen_templates
};

// base is required for noised_known and supplies image dimensions when given.
LabeledImageSet make_outliers(const OutlierSpec& spec, const LabeledImageSet* base = nullptr);

// --- known/unknown split --------------------------------------------------------

struct SplitSpec {
    std::vector<int> known_class_ids;
    std::vector<int> unknown_class_ids;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;
};

struct SplitResult {
    LabeledImageSet train_known;   // labels relabeled to 0..K-1
    LabeledImageSet test_known;    // same relabeling
    LabeledImageSet test_unknown;  // labels all K
    std::vector<int> known_ids_sorted;  // original id of each new label
};

SplitResult split(const LabeledImageSet& data, const SplitSpec& spec);

}  // namespace cgdl
