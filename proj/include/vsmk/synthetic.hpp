#pragma once

#include <cstdint>
#include <vector>

#include "vsmk/data.hpp"

namespace vsmk::data {

// Seeded four-view study generator. Assessment grade monotonically controls
// lesion conspicuity: grade 1 is pure background texture, grade 5 plants many
// large high-contrast blobs. The planted blobs of one side reappear,
// geometrically jittered, in both of that side's views. Diagnostic labels
// follow the grade (>= 4 malignant) except that grade 3 is malignant with a
// small divergence probability.
struct SyntheticSpec {
    std::size_t image_size = 64;
    std::vector<int> grades = {1, 2, 3, 4, 5};  // active assessment grades
    std::vector<double> mixture;                // per-grade proportions; empty = uniform
    double missing_side_prob = 0.1;             // chance a study lacks one side
    double divergence_prob = 0.1;               // grade-3 malignancy probability
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<FourViewStudy> generate_synthetic(const SyntheticSpec& spec, std::size_t n);

}  // namespace vsmk::data
