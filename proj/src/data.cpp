#include "mcae/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace mcae {

namespace fs = std::filesystem;

Image resample_box(const Image& src, Real y0, Real x0, Real box_h, Real box_w, Index out_h, Index out_w) {
    if (src.height == 0 || src.width == 0) throw std::invalid_argument("resample_box: empty source image");
    Image out(out_h, out_w);
    const Real sy = box_h / static_cast<Real>(out_h);
    const Real sx = box_w / static_cast<Real>(out_w);
    const auto max_y = static_cast<Real>(src.height - 1);
    const auto max_x = static_cast<Real>(src.width - 1);
    for (Index i = 0; i < out_h; ++i) {
        const Real fy = std::clamp(y0 + (static_cast<Real>(i) + 0.5) * sy - 0.5, 0.0, max_y);
        const auto ya = static_cast<Index>(fy);
        const Index yb = std::min(ya + 1, src.height - 1);
        const Real wy = fy - static_cast<Real>(ya);
        for (Index j = 0; j < out_w; ++j) {
            const Real fx = std::clamp(x0 + (static_cast<Real>(j) + 0.5) * sx - 0.5, 0.0, max_x);
            const auto xa = static_cast<Index>(fx);
            const Index xb = std::min(xa + 1, src.width - 1);
            const Real wx = fx - static_cast<Real>(xa);
            for (Index c = 0; c < channels; ++c) {
                const Real top = src.at(ya, xa, c) * (1 - wx) + src.at(ya, xb, c) * wx;
                const Real bottom = src.at(yb, xa, c) * (1 - wx) + src.at(yb, xb, c) * wx;
                out.at(i, j, c) = top * (1 - wy) + bottom * wy;
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& src, Index out_h, Index out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    return resample_box(src, 0, 0, static_cast<Real>(src.height), static_cast<Real>(src.width), out_h, out_w);
}

void validate(const CropScale& scale) {
    if (!(scale.lo > 0 && scale.lo <= scale.hi && scale.hi <= 1))
        throw ConfigError("crop scale range must satisfy 0 < lo <= hi <= 1");
}

Image random_resized_crop(const Image& image, CropScale scale, Index out_size, std::mt19937_64& rng) {
    validate(scale);
    if (out_size == 0) throw ConfigError("random_resized_crop: out_size must be positive");
    const Real area = std::uniform_real_distribution<Real>(scale.lo, scale.hi)(rng);
    const auto h = static_cast<Real>(image.height);
    const auto w = static_cast<Real>(image.width);
    const Real side = std::min({std::sqrt(area * h * w), h, w});
    const Real y0 = std::uniform_real_distribution<Real>(0, h - side)(rng);
    const Real x0 = std::uniform_real_distribution<Real>(0, w - side)(rng);
    return resample_box(image, y0, x0, side, side, out_size, out_size);
}

Image read_image(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw RuntimeError("cannot decode image: " + path.string());
    Image img(static_cast<Index>(bgr.rows), static_cast<Index>(bgr.cols));
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const auto px = bgr.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                img.at(static_cast<Index>(y), static_cast<Index>(x), static_cast<Index>(c)) = px[2 - c] / 255.0;
        }
    return img;
}

void write_image(const Image& image, const fs::path& path) {
    cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
    for (Index y = 0; y < image.height; ++y)
        for (Index x = 0; x < image.width; ++x) {
            auto& px = bgr.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
            for (Index c = 0; c < 3; ++c)
                px[2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(y, x, c), 0.0, 1.0) * 255.0));
        }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw RuntimeError("cannot write image: " + path.string());
}

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

DomainDataset load_domain_dir(const fs::path& root, const std::string& domain_name, int domain_id,
                              Index image_size) {
    const fs::path dir = root / domain_name;
    if (!fs::is_directory(dir)) throw RuntimeError("domain directory not found: " + dir.string());

    DomainDataset ds;
    ds.domain_name = domain_name;
    ds.domain_id = domain_id;
    for (const auto& [sub, label] : {std::pair{"live", Label::live}, std::pair{"spoof", Label::spoof}}) {
        const fs::path class_dir = dir / sub;
        if (!fs::is_directory(class_dir)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dir))
            if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Image img;
            try {
                img = read_image(f);
            } catch (const RuntimeError&) {
                std::cerr << "warning: skipping undecodable file " << f.string() << '\n';
                ++ds.skipped_files;
                continue;
            }
            ds.samples.push_back({resize_bilinear(img, image_size, image_size), label, domain_id, f.string()});
        }
    }
    if (ds.samples.empty()) throw RuntimeError("domain directory has no decodable images: " + dir.string());
    return ds;
}

std::vector<DomainDataset> load_all_domains(const fs::path& root, Index image_size) {
    if (!fs::is_directory(root)) throw RuntimeError("data directory not found: " + root.string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<DomainDataset> out;
    for (Index i = 0; i < names.size(); ++i)
        out.push_back(load_domain_dir(root, names[i], static_cast<int>(i), image_size));
    return out;
}

void write_domain_dir(const DomainDataset& dataset, const fs::path& root) {
    std::map<Label, Index> counters;
    for (const auto& s : dataset.samples) {
        const char* sub = s.label == Label::live ? "live" : "spoof";
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", counters[s.label]++);
        write_image(s.image, root / dataset.domain_name / sub / name);
    }
    for (const char* sub : {"live", "spoof"}) fs::create_directories(root / dataset.domain_name / sub);
}

namespace {

Image box_blur3(const Image& img) {
    Image out(img.height, img.width);
    const auto h = static_cast<long>(img.height);
    const auto w = static_cast<long>(img.width);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (Index c = 0; c < channels; ++c) {
                Real s = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const auto yy = static_cast<Index>(std::clamp(y + dy, 0L, h - 1));
                        const auto xx = static_cast<Index>(std::clamp(x + dx, 0L, w - 1));
                        s += img.at(yy, xx, c);
                    }
                out.at(static_cast<Index>(y), static_cast<Index>(x), c) = s / 9.0;
            }
    return out;
}

Real smoothstep_edge(Real signed_dist, Real width) { return 1.0 / (1.0 + std::exp(signed_dist / width)); }

struct DomainStyle {
    Real gain[3];
    Real offset[3];
    Real illum_angle;
    Real illum_strength;
};

// Smooth grayscale face-like structure: ellipse with soft edge, two darker eye blobs.
Image face_structure(Index s, std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> u(0, 1);
    const auto S = static_cast<Real>(s);
    const Real cy = S * (0.5 + 0.06 * (u(rng) - 0.5));
    const Real cx = S * (0.5 + 0.06 * (u(rng) - 0.5));
    const Real ry = S * (0.36 + 0.06 * u(rng));
    const Real rx = S * (0.28 + 0.05 * u(rng));
    const Real skin = 0.55 + 0.15 * u(rng);
    const Real background = 0.25 + 0.1 * u(rng);
    const Real edge = std::max(0.5, S / 16.0);
    const Real eye_r = std::max(0.6, S * 0.07);
    const Real tint[3] = {1.0, 0.88, 0.78};

    Image img(s, s);
    for (Index y = 0; y < s; ++y)
        for (Index x = 0; x < s; ++x) {
            const Real py = static_cast<Real>(y) + 0.5;
            const Real px = static_cast<Real>(x) + 0.5;
            const Real r = std::hypot((py - cy) / ry, (px - cx) / rx);
            const Real inside = smoothstep_edge((r - 1.0) * std::min(rx, ry), edge);
            Real v = background + (skin - background) * inside;
            for (Real side : {-1.0, 1.0}) {
                const Real ey = cy - 0.25 * ry;
                const Real ex = cx + side * 0.4 * rx;
                const Real d2 = ((py - ey) * (py - ey) + (px - ex) * (px - ex)) / (eye_r * eye_r);
                v -= 0.25 * inside * std::exp(-d2);
            }
            for (Index c = 0; c < channels; ++c) img.at(y, x, c) = v * tint[c];
        }
    return img;
}

void add_moire(Image& img, std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> u(0, 1);
    const Real period = 2.2 + 0.3 * u(rng);
    const Real angle = std::numbers::pi / 8 * u(rng);
    const Real phase = 2 * std::numbers::pi * u(rng);
    const Real amp = 0.08 + 0.04 * u(rng);
    const Real ky = std::sin(angle) * 2 * std::numbers::pi / period;
    const Real kx = std::cos(angle) * 2 * std::numbers::pi / period;
    for (Index y = 0; y < img.height; ++y)
        for (Index x = 0; x < img.width; ++x) {
            const Real m = amp * std::sin(ky * static_cast<Real>(y) + kx * static_cast<Real>(x) + phase);
            for (Index c = 0; c < channels; ++c) img.at(y, x, c) += m;
        }
}

void apply_domain_style(Image& img, const DomainStyle& st) {
    const auto S = static_cast<Real>(img.height);
    for (Index y = 0; y < img.height; ++y)
        for (Index x = 0; x < img.width; ++x) {
            const Real t = ((static_cast<Real>(y) + 0.5) * std::sin(st.illum_angle) +
                            (static_cast<Real>(x) + 0.5) * std::cos(st.illum_angle)) / S - 0.5;
            for (Index c = 0; c < channels; ++c) {
                const Real v = st.gain[c] * img.at(y, x, c) + st.offset[c] + st.illum_strength * t;
                img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        }
}

}  // namespace

Real high_frequency_energy(const Image& image) {
    const Image blurred = box_blur3(image);
    Real s = 0;
    for (Index i = 0; i < image.pixels.size(); ++i) {
        const Real d = image.pixels[i] - blurred.pixels[i];
        s += d * d;
    }
    return s / static_cast<Real>(image.pixels.size());
}

std::vector<DomainDataset> make_synthetic_domains(int num_domains, int n_per_class, Index image_size,
                                                  std::uint64_t seed) {
    if (num_domains < 2) throw ConfigError("make_synthetic_domains: need at least 2 domains");
    if (n_per_class < 1) throw ConfigError("make_synthetic_domains: need at least 1 sample per class");
    if (image_size < 4) throw ConfigError("make_synthetic_domains: image_size must be at least 4");

    std::vector<DomainDataset> out;
    for (int d = 0; d < num_domains; ++d) {
        std::seed_seq seq{seed, static_cast<std::uint64_t>(d), std::uint64_t{0x5eed}};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<Real> u(0, 1);

        DomainStyle style{};
        for (int c = 0; c < 3; ++c) {
            style.gain[c] = 0.7 + 0.45 * u(rng);
            style.offset[c] = -0.12 + 0.24 * u(rng);
        }
        style.illum_angle = 2 * std::numbers::pi * u(rng);
        style.illum_strength = 0.1 * u(rng);

        DomainDataset ds;
        ds.domain_name = "domain" + std::to_string(d);
        ds.domain_id = d;
        for (Label label : {Label::live, Label::spoof}) {
            for (int i = 0; i < n_per_class; ++i) {
                Image img = face_structure(image_size, rng);
                if (label == Label::spoof) {
                    img = box_blur3(img);
                    add_moire(img, rng);
                }
                apply_domain_style(img, style);
                ds.samples.push_back({std::move(img), label, d,
                                      "synthetic:" + ds.domain_name + (label == Label::live ? "/live/" : "/spoof/") +
                                          std::to_string(i)});
            }
        }
        out.push_back(std::move(ds));
    }
    return out;
}

BatchIterator::BatchIterator(std::span<const DomainDataset> datasets, Index batch_size, bool balanced,
                             std::uint64_t seed)
    : datasets_(datasets), batch_size_(batch_size), balanced_(balanced), seed_(seed) {
    if (datasets.empty()) throw ConfigError("make_batches: no datasets");
    if (batch_size < 2) throw ConfigError("make_batches: batch_size must be at least 2");
    if (balanced && batch_size % (2 * datasets.size()) != 0)
        throw ConfigError("make_batches: balanced batch_size must be divisible by 2 x num_domains");
    if (balanced)
        for (const auto& ds : datasets)
            for (Label l : {Label::live, Label::spoof})
                if (std::none_of(ds.samples.begin(), ds.samples.end(), [l](const auto& s) { return s.label == l; }))
                    throw ConfigError("make_batches: balanced mode needs both labels in domain " + ds.domain_name);
    reset(0);
}

void BatchIterator::reset(Index epoch) {
    std::seed_seq seq{seed_, static_cast<std::uint64_t>(epoch), std::uint64_t{0xba7c4}};
    std::mt19937_64 rng(seq);
    plan_.clear();
    cursor_ = 0;

    if (!balanced_) {
        std::vector<SampleRef> all;
        for (Index d = 0; d < datasets_.size(); ++d)
            for (Index i = 0; i < datasets_[d].samples.size(); ++i) all.push_back({d, i});
        std::shuffle(all.begin(), all.end(), rng);
        for (Index start = 0; start < all.size(); start += batch_size_)
            plan_.emplace_back(all.begin() + static_cast<long>(start),
                               all.begin() + static_cast<long>(std::min(start + batch_size_, all.size())));
        return;
    }

    const Index per_cell = batch_size_ / (2 * datasets_.size());
    std::vector<std::vector<SampleRef>> cells;
    Index largest = 0;
    for (Index d = 0; d < datasets_.size(); ++d)
        for (Label l : {Label::live, Label::spoof}) {
            std::vector<SampleRef> cell;
            for (Index i = 0; i < datasets_[d].samples.size(); ++i)
                if (datasets_[d].samples[i].label == l) cell.push_back({d, i});
            largest = std::max(largest, cell.size());
            cells.push_back(std::move(cell));
        }
    const Index num_batches = std::max<Index>(1, (largest + per_cell - 1) / per_cell);
    std::vector<std::vector<SampleRef>> streams(cells.size());
    for (Index c = 0; c < cells.size(); ++c) {
        // Cycle through fresh permutations until the cell covers every batch.
        while (streams[c].size() < num_batches * per_cell) {
            auto perm = cells[c];
            std::shuffle(perm.begin(), perm.end(), rng);
            streams[c].insert(streams[c].end(), perm.begin(), perm.end());
        }
    }
    for (Index b = 0; b < num_batches; ++b) {
        std::vector<SampleRef> batch;
        for (Index c = 0; c < cells.size(); ++c)
            for (Index k = 0; k < per_cell; ++k) batch.push_back(streams[c][b * per_cell + k]);
        plan_.push_back(std::move(batch));
    }
}

LabeledBatch BatchIterator::materialize(const std::vector<SampleRef>& refs, const AugmentOptions* augment,
                                        std::mt19937_64* rng) const {
    LabeledBatch batch;
    for (const auto& r : refs) {
        const auto& s = datasets_[r.dataset].samples[r.sample];
        if (augment)
            batch.images.push_back(random_resized_crop(s.image, augment->scale, augment->out_size, *rng));
        else
            batch.images.push_back(s.image);
        batch.labels.push_back(s.label);
        batch.domains.push_back(s.domain);
    }
    return batch;
}

std::optional<LabeledBatch> BatchIterator::next() {
    if (cursor_ >= plan_.size()) return std::nullopt;
    return materialize(plan_[cursor_++], nullptr, nullptr);
}

std::optional<LabeledBatch> BatchIterator::next(const AugmentOptions& augment, std::mt19937_64& rng) {
    if (cursor_ >= plan_.size()) return std::nullopt;
    return materialize(plan_[cursor_++], &augment, &rng);
}

}  // namespace mcae
