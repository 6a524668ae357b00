#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vsmk/errors.hpp"
#include "vsmk/heads.hpp"
#include "vsmk/model.hpp"
#include "vsmk/model_config.hpp"
#include "vsmk/rng.hpp"
#include "vsmk/tensor.hpp"

namespace vsmk::data {

// Per-study targets. -1 marks a missing value and appears exactly for the
// sides whose views are absent. Assessment grades are stored raw (1..5).
struct StudyLabels {
    int label_l = -1, label_r = -1;
    int birads_l = -1, birads_r = -1;
};

// One four-view case. Image slots follow the canonical view order
// (L-CC, L-MLO, R-CC, R-MLO); grayscale [H, W] tensors with values in [0, 1].
// Views are absent only side-wise: both of a side's slots or neither.
struct FourViewStudy {
    std::array<Tensor<float>, fusion::kViews> images;
    std::array<bool, fusion::kViews> presence{false, false, false, false};
    StudyLabels labels;
    std::string study_id;
};

inline constexpr const char* kManifestHeader =
    "study_id,lcc,lmlo,rcc,rmlo,label_l,label_r,birads_l,birads_r";
inline constexpr const char* kManifestName = "manifest.csv";

// ---- image primitives ----

// Exact horizontal mirror (an involution).
Tensor<float> hflip(const Tensor<float>& img);

// Resize with half-pixel sample centers: bilinear while neither axis shrinks
// by more than 2x, fractional-coverage area averaging beyond that.
Tensor<float> resize(const Tensor<float>& img, std::size_t out_h, std::size_t out_w);

// Rotation (degrees) and isotropic scaling about the image center followed by
// translation (fractions of each axis extent), resampled bilinearly with
// zero fill outside the source.
Tensor<float> affine_bilinear(const Tensor<float>& img, double rot_deg, double scale,
                              double tx_frac, double ty_frac);

// ---- binary graymap I/O (P5, maxval 255 or 65535) ----

void write_pgm(const std::filesystem::path& path, const Tensor<float>& img, int maxval = 255);
Tensor<float> read_pgm(const std::filesystem::path& path);

// ---- dataset operations ----

// Replaces every absent view slot with an exactly-zero image (shaped like the
// study's present views) regardless of prior slot content. A slot marked
// present but holding no pixels is a data error.
void apply_missing_mask(FourViewStudy& study);

// Training-time perturbation: per view an affine draw (rotation within ±10
// degrees, per-axis translation within ±5%, scaling within [0.95, 1.05]) and
// an independent horizontal flip with probability 0.5. Draws are consumed for
// every slot so absent views do not shift the stream; labels and presence
// never change.
FourViewStudy augment(const FourViewStudy& study, Rng& rng);

// Resizes each view to S x S, replicates grayscale to three channels, and
// zeroes absent slots; returns the four [3, S, S] model inputs.
std::array<Tensor<float>, fusion::kViews> preprocess(const FourViewStudy& study, std::size_t S);

// Writes manifest + one PGM per present view into `dir`. Right-breast views
// are stored mirrored (native orientation); ingest flips them back.
void export_dataset(const std::filesystem::path& dir, const std::vector<FourViewStudy>& studies);

// Loads a manifest directory: validates side-wise presence and label ranges,
// flips right-breast views to the canonical orientation, and resizes to S.
std::vector<FourViewStudy> ingest(const std::filesystem::path& dir, std::size_t S);

// Deterministic shuffled split by study index; the train share is
// round(train_frac * n). Study ids are unique, so no id crosses the split.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(
    std::size_t n, double train_frac, std::uint64_t seed);

// ---- batch assembly ----

// Builds a model batch from the selected studies. In training mode each study
// is first augmented with its own rng derived from (seed, study_id, epoch), so
// results do not depend on assembly order. Assessment grades are re-indexed
// to the active contiguous classes; sides absent from a study carry -1.
template <typename T>
model::Batch<T> make_batch(const std::vector<FourViewStudy>& studies,
                           const std::vector<std::size_t>& indices,
                           const model::ModelConfig& cfg, bool train, std::uint64_t seed,
                           std::size_t epoch) {
    const std::size_t B = indices.size();
    const std::size_t S = cfg.image_size;
    model::Batch<T> batch;
    for (auto& img : batch.images) img = Tensor<T>::zeros({B, 3, S, S});
    for (std::size_t b = 0; b < B; ++b) {
        const FourViewStudy& base = studies.at(indices[b]);
        std::array<Tensor<float>, fusion::kViews> views;
        if (train) {
            Rng rng(mix64(seed, fnv1a64(base.study_id), static_cast<std::uint64_t>(epoch)));
            views = preprocess(augment(base, rng), S);
        } else {
            views = preprocess(base, S);
        }
        for (std::size_t v = 0; v < fusion::kViews; ++v) {
            T* dst = batch.images[v].data() + b * 3 * S * S;
            const float* src = views[v].data();
            for (std::size_t i = 0; i < 3 * S * S; ++i) dst[i] = static_cast<T>(src[i]);
        }
        batch.labels.label_l.push_back(base.labels.label_l);
        batch.labels.label_r.push_back(base.labels.label_r);
        batch.labels.birads_l.push_back(cfg.birads_index(base.labels.birads_l));
        batch.labels.birads_r.push_back(cfg.birads_index(base.labels.birads_r));
        batch.study_ids.push_back(base.study_id);
    }
    return batch;
}

}  // namespace vsmk::data
