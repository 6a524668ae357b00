#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vsmk/errors.hpp"

namespace vsmk::model {

enum class Task { Label, Birads, Multi };
enum class Variant { Cnn, Vssm, Hybrid };
enum class Binding { Shared, ViewSpecific };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::Label: return "label";
        case Task::Birads: return "birads";
        default: return "multi";
    }
}
inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Cnn: return "cnn";
        case Variant::Vssm: return "vssm";
        default: return "hybrid";
    }
}
inline std::string to_string(Binding b) {
    return b == Binding::Shared ? "shared" : "view-specific";
}

inline Task parse_task(const std::string& s) {
    if (s == "label") return Task::Label;
    if (s == "birads") return Task::Birads;
    if (s == "multi") return Task::Multi;
    throw ConfigError("unknown task '" + s + "' (expected label|birads|multi)");
}
inline Variant parse_variant(const std::string& s) {
    if (s == "cnn") return Variant::Cnn;
    if (s == "vssm") return Variant::Vssm;
    if (s == "hybrid") return Variant::Hybrid;
    throw ConfigError("unknown backbone '" + s + "' (expected cnn|vssm|hybrid)");
}
inline Binding parse_binding(const std::string& s) {
    if (s == "shared") return Binding::Shared;
    if (s == "view-specific") return Binding::ViewSpecific;
    throw ConfigError("unknown binding '" + s + "' (expected shared|view-specific)");
}

// Active assessment-grade sets selectable per experiment.
inline std::vector<int> parse_birads_set(const std::string& s) {
    if (s == "15") return {1, 5};
    if (s == "135") return {1, 3, 5};
    if (s == "12345") return {1, 2, 3, 4, 5};
    throw ConfigError("unknown birads set '" + s + "' (expected 15|135|12345)");
}
inline std::string birads_set_name(const std::vector<int>& classes) {
    std::string s;
    for (int c : classes) s += std::to_string(c);
    return s;
}

struct ModelConfig {
    Task task = Task::Multi;
    Variant variant = Variant::Hybrid;
    Binding binding = Binding::Shared;
    std::size_t image_size = 64;    // S; input images are S x S
    std::size_t feature_dim = 128;  // D; per-view feature length
    std::size_t stem_channels = 16; // conv encoder stem width; encoder output is 4x this
    std::size_t embed_channels = 64;  // patchify width of the pure-SSM variant
    std::size_t n_state = 16;         // SSM state size per channel
    std::size_t dt_rank = 8;          // rank of the timescale projection
    std::vector<int> birads_classes = {1, 2, 3, 4, 5};  // sorted active grades
    double dropout_p = 0.5;
    std::uint64_t init_seed = 0;
    std::size_t block_override = 0;  // nonzero forces the mixing-block count

    std::size_t n_blocks() const {
        if (block_override != 0 && variant != Variant::Cnn) return block_override;
        switch (variant) {
            case Variant::Cnn: return 0;
            case Variant::Hybrid: return 2;
            default: return 4;
        }
    }
    // Channel width the mixing blocks operate at.
    std::size_t block_channels() const {
        return variant == Variant::Vssm ? embed_channels : 4 * stem_channels;
    }
    // Token-grid side length the blocks see for an S x S input.
    std::size_t grid_size() const {
        return variant == Variant::Vssm ? image_size / 4 : image_size / 8;
    }
    std::size_t n_birads() const { return birads_classes.size(); }

    void validate() const {
        if (image_size == 0 || image_size % 8 != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " must be a positive multiple of 8");
        if (image_size > 512)
            throw ConfigError("image size " + std::to_string(image_size) + " exceeds 512");
        if (feature_dim == 0) throw ConfigError("feature dim must be positive");
        if (stem_channels == 0) throw ConfigError("stem channels must be positive");
        if (block_channels() % 2 != 0)
            throw ConfigError("block channel count " + std::to_string(block_channels()) +
                              " must be even for the channel split");
        if (n_state == 0 || dt_rank == 0)
            throw ConfigError("state size and timescale rank must be positive");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw ConfigError("dropout probability must lie in [0, 1)");
        if (birads_classes.empty())
            throw ConfigError("active assessment-grade set is empty");
        if (!std::is_sorted(birads_classes.begin(), birads_classes.end()))
            throw ConfigError("active assessment grades must be sorted");
        for (std::size_t i = 0; i < birads_classes.size(); ++i) {
            if (birads_classes[i] < 1 || birads_classes[i] > 5)
                throw ConfigError("assessment grade " + std::to_string(birads_classes[i]) +
                                  " outside 1..5");
            if (i > 0 && birads_classes[i] == birads_classes[i - 1])
                throw ConfigError("duplicate assessment grade " +
                                  std::to_string(birads_classes[i]));
        }
    }

    // Contiguous class index of a raw grade, or -1 when the label is missing.
    int birads_index(int grade) const {
        if (grade == -1) return -1;
        for (std::size_t i = 0; i < birads_classes.size(); ++i)
            if (birads_classes[i] == grade) return static_cast<int>(i);
        throw DataError("assessment grade " + std::to_string(grade) +
                        " not in the active set {" + birads_set_name(birads_classes) + "}");
    }
};

}  // namespace vsmk::model
