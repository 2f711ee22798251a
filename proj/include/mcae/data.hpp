#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mcae/common.hpp"

namespace mcae {

inline constexpr Index channels = 3;

// H×W×3 image, interleaved channels, values nominally in [0,1].
struct Image {
    Index height = 0;
    Index width = 0;
    std::vector<Real> pixels;

    Image() = default;
    Image(Index h, Index w, Real fill = 0) : height(h), width(w), pixels(h * w * channels, fill) {}

    Real& at(Index y, Index x, Index c) { return pixels[(y * width + x) * channels + c]; }
    Real at(Index y, Index x, Index c) const { return pixels[(y * width + x) * channels + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

struct FaceSample {
    Image image;
    Label label = Label::spoof;
    int domain = 0;
    std::string source;
};

struct DomainDataset {
    std::string domain_name;
    int domain_id = 0;
    std::vector<FaceSample> samples;
    Index skipped_files = 0;  // undecodable files encountered while loading
};

struct LabeledBatch {
    std::vector<Image> images;
    std::vector<Label> labels;
    std::vector<int> domains;

    Index size() const { return images.size(); }
};

// Bilinear resample of the axis-aligned box [y0, y0+box_h) × [x0, x0+box_w)
// to out_h × out_w (pixel-center convention, edges clamped).
Image resample_box(const Image& src, Real y0, Real x0, Real box_h, Real box_w, Index out_h, Index out_w);
Image resize_bilinear(const Image& src, Index out_h, Index out_w);

struct CropScale {
    Real lo = 0.6;
    Real hi = 1.0;
};

void validate(const CropScale& scale);

// Square crop with area fraction ~ U(lo, hi), placed uniformly, resized to out_size.
Image random_resized_crop(const Image& image, CropScale scale, Index out_size, std::mt19937_64& rng);

// Loads root/<domain_name>/{live,spoof}/*.{png,jpg,jpeg}: live samples first,
// files in lexicographic order within each class.
DomainDataset load_domain_dir(const std::filesystem::path& root, const std::string& domain_name,
                              int domain_id, Index image_size);

// Loads every domain directory found under root, sorted by name; ids follow that order.
std::vector<DomainDataset> load_all_domains(const std::filesystem::path& root, Index image_size);

void write_domain_dir(const DomainDataset& dataset, const std::filesystem::path& root);

Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

std::vector<DomainDataset> make_synthetic_domains(int num_domains, int n_per_class, Index image_size,
                                                  std::uint64_t seed);

// Mean squared residual against a 3×3 box blur.
Real high_frequency_energy(const Image& image);

struct SampleRef {
    Index dataset = 0;
    Index sample = 0;
};

struct AugmentOptions {
    CropScale scale;
    Index out_size = 0;
};

// Emits one epoch of batches at a time. Batch order within an epoch depends
// only on (seed, epoch). The referenced datasets must outlive the iterator.
class BatchIterator {
public:
    BatchIterator(std::span<const DomainDataset> datasets, Index batch_size, bool balanced, std::uint64_t seed);

    void reset(Index epoch);
    std::optional<LabeledBatch> next();
    // Augmented variant; crops use `rng`.
    std::optional<LabeledBatch> next(const AugmentOptions& augment, std::mt19937_64& rng);

    const std::vector<std::vector<SampleRef>>& epoch_plan() const { return plan_; }
    Index batches_per_epoch() const { return plan_.size(); }

private:
    LabeledBatch materialize(const std::vector<SampleRef>& refs, const AugmentOptions* augment,
                             std::mt19937_64* rng) const;

    std::span<const DomainDataset> datasets_;
    Index batch_size_;
    bool balanced_;
    std::uint64_t seed_;
    std::vector<std::vector<SampleRef>> plan_;
    Index cursor_ = 0;
};

inline BatchIterator make_batches(std::span<const DomainDataset> datasets, Index batch_size, bool balanced,
                                  std::uint64_t seed) {
    return BatchIterator(datasets, batch_size, balanced, seed);
}

}  // namespace mcae
