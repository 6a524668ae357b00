#include "vsmk/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>

namespace vsmk::data {

namespace {

struct Blob {
    double cy, cx;   // center, unit coordinates
    double radius;   // unit coordinates
    double contrast; // additive peak intensity
};

// Lesion geometry per assessment grade: count, size and contrast all grow
// monotonically with the grade; grade 1 plants nothing.
struct GradeGeometry {
    std::size_t blobs;
    double radius_lo, radius_hi;
    double contrast;
};

GradeGeometry geometry_for(int grade) {
    const std::size_t g = static_cast<std::size_t>(grade);
    GradeGeometry geo;
    geo.blobs = g - 1;
    geo.radius_lo = 0.04 + 0.025 * (g - 1);
    geo.radius_hi = 0.06 + 0.035 * (g - 1);
    geo.contrast = 0.14 * static_cast<double>(g - 1);
    return geo;
}

// Smooth low-frequency background plus pixel noise, snapped to the 8-bit
// grid so disk round trips are exact.
Tensor<float> render_view(std::size_t S, const std::vector<Blob>& blobs, Rng& rng) {
    const double pi = std::acos(-1.0);
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::array<Wave, 3> waves;
    for (Wave& w : waves) {
        w.fy = rng.uniform(0.5, 2.5);
        w.fx = rng.uniform(0.5, 2.5);
        w.phase = rng.uniform(0.0, 2.0 * pi);
        w.amp = rng.uniform(0.02, 0.05);
    }
    Tensor<float> img({S, S});
    for (std::size_t y = 0; y < S; ++y) {
        const double uy = (y + 0.5) / static_cast<double>(S);
        for (std::size_t x = 0; x < S; ++x) {
            const double ux = (x + 0.5) / static_cast<double>(S);
            double v = 0.35;
            for (const Wave& w : waves)
                v += w.amp * std::sin(2.0 * pi * (w.fy * uy + w.fx * ux) + w.phase);
            v += rng.uniform(-0.03, 0.03);
            for (const Blob& b : blobs) {
                const double dy = uy - b.cy, dx = ux - b.cx;
                const double r2 = dy * dy + dx * dx;
                v += b.contrast * std::exp(-r2 / (2.0 * b.radius * b.radius));
            }
            v = std::clamp(v, 0.0, 1.0);
            img.at(y, x) = static_cast<float>(std::lround(v * 255.0) / 255.0);
        }
    }
    return img;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (image_size < 8) throw ConfigError("synthetic image size must be at least 8");
    if (grades.empty()) throw ConfigError("synthetic grade set is empty");
    for (int g : grades)
        if (g < 1 || g > 5)
            throw ConfigError("synthetic grade " + std::to_string(g) + " outside 1..5");
    if (!mixture.empty()) {
        if (mixture.size() != grades.size())
            throw ConfigError("mixture has " + std::to_string(mixture.size()) +
                              " entries for " + std::to_string(grades.size()) + " grades");
        double sum = 0.0;
        for (double p : mixture) {
            if (p < 0.0) throw ConfigError("mixture proportions must be nonnegative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("mixture proportions sum to " + std::to_string(sum) +
                              ", expected 1");
    }
    if (missing_side_prob < 0.0 || missing_side_prob > 1.0)
        throw ConfigError("missing-side probability outside [0, 1]");
    if (divergence_prob < 0.0 || divergence_prob > 1.0)
        throw ConfigError("divergence probability outside [0, 1]");
}

std::vector<FourViewStudy> generate_synthetic(const SyntheticSpec& spec, std::size_t n) {
    spec.validate();
    if (n == 0) throw ConfigError("cannot generate an empty dataset");

    std::vector<double> mix = spec.mixture;
    if (mix.empty()) mix.assign(spec.grades.size(), 1.0 / static_cast<double>(spec.grades.size()));

    std::vector<FourViewStudy> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix64(spec.seed, fnv1a64("study"), static_cast<std::uint64_t>(i)));
        FourViewStudy s;
        {
            char buf[32];
            std::snprintf(buf, sizeof buf, "synth-%05zu", i);
            s.study_id = buf;
        }
        // Incomplete cases drop exactly one side.
        int dropped = -1;  // 0 = left, 1 = right
        if (rng.bernoulli(spec.missing_side_prob)) dropped = rng.bernoulli(0.5) ? 1 : 0;

        for (int side = 0; side < 2; ++side) {
            // Categorical draw via inverse CDF keeps non-uniform mixtures exact.
            const double u = rng.uniform();
            std::size_t pick = mix.size() - 1;
            double acc = 0.0;
            for (std::size_t k = 0; k < mix.size(); ++k) {
                acc += mix[k];
                if (u < acc) {
                    pick = k;
                    break;
                }
            }
            const int grade = spec.grades[pick];
            const int label = grade >= 4 ? 1
                              : grade == 3 ? (rng.bernoulli(spec.divergence_prob) ? 1 : 0)
                                           : 0;

            // Side-level lesions, shared by both of the side's views.
            const GradeGeometry geo = geometry_for(grade);
            std::vector<Blob> lesions(geo.blobs);
            for (Blob& b : lesions) {
                b.cy = rng.uniform(0.2, 0.8);
                b.cx = rng.uniform(0.2, 0.8);
                b.radius = rng.uniform(geo.radius_lo, geo.radius_hi);
                b.contrast = geo.contrast * rng.uniform(0.85, 1.15);
            }

            const bool absent = dropped == side;
            for (int view = 0; view < 2; ++view) {
                // Per-view geometric jitter of the same planted lesions.
                std::vector<Blob> jittered = lesions;
                for (Blob& b : jittered) {
                    b.cy = std::clamp(b.cy + rng.uniform(-0.04, 0.04), 0.05, 0.95);
                    b.cx = std::clamp(b.cx + rng.uniform(-0.04, 0.04), 0.05, 0.95);
                    b.radius *= rng.uniform(0.9, 1.1);
                }
                Tensor<float> img = render_view(spec.image_size, jittered, rng);
                if (!absent) {
                    const std::size_t slot = static_cast<std::size_t>(2 * side + view);
                    s.images[slot] = std::move(img);
                    s.presence[slot] = true;
                }
            }
            if (!absent) {
                (side == 0 ? s.labels.label_l : s.labels.label_r) = label;
                (side == 0 ? s.labels.birads_l : s.labels.birads_r) = grade;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace vsmk::data
