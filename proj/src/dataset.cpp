#include "cgdl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "cgdl/errors.hpp"
#include "cgdl/rng.hpp"

namespace cgdl {

// --- LabeledImageSet ----------------------------------------------------------

Tensor LabeledImageSet::batch(const std::vector<std::size_t>& indices) const {
    const std::size_t d = image_pixels();
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size())
            throw contract_error("batch: index " + std::to_string(indices[i]) +
                                 " out of range for " + std::to_string(size()) + " samples");
        const double* src = pixels.data() + indices[i] * d;
        double* dst = out.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    return out;
}

Tensor LabeledImageSet::all() const {
    if (size() == 0) throw contract_error("all: empty image set");
    return Tensor({size(), image_pixels()}, pixels);
}

void LabeledImageSet::append(const LabeledImageSet& other) {
    if (other.size() == 0) return;
    if (size() == 0 && pixels.empty()) {
        height = other.height;
        width = other.width;
    }
    if (height != other.height || width != other.width)
        throw contract_error("append: image dimensions disagree");
    pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

void LabeledImageSet::validate() const {
    if (pixels.size() != size() * image_pixels())
        throw contract_error("image set: pixel buffer does not match sample count");
    for (double p : pixels)
        if (!(p >= 0.0 && p <= 1.0))
            throw contract_error("image set: pixel outside [0,1]");
}

// --- IDX container ----------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4)
        throw format_error(path + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw io_error("cannot open image file " + images_path);
    const std::uint32_t magic = read_u32_be(img, images_path, 0);
    if (magic != kImageMagic)
        throw format_error(images_path + ": bad magic " + hex(magic) + " at byte offset 0 " +
                           "(expected " + hex(kImageMagic) + ")");
    const std::uint32_t count = read_u32_be(img, images_path, 4);
    const std::uint32_t rows = read_u32_be(img, images_path, 8);
    const std::uint32_t cols = read_u32_be(img, images_path, 12);
    if (rows == 0 || cols == 0)
        throw format_error(images_path + ": zero image dimensions in header");

    LabeledImageSet set;
    set.height = rows;
    set.width = cols;
    const std::size_t total = std::size_t(count) * rows * cols;
    std::vector<unsigned char> raw(total);
    img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total));
    if (static_cast<std::size_t>(img.gcount()) != total)
        throw format_error(images_path + ": truncated pixel data at byte offset " +
                           std::to_string(16 + img.gcount()) + " (expected " +
                           std::to_string(16 + total) + " bytes)");
    set.pixels.resize(total);
    for (std::size_t i = 0; i < total; ++i) set.pixels[i] = raw[i] / 255.0;

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw io_error("cannot open label file " + labels_path);
    const std::uint32_t lmagic = read_u32_be(lab, labels_path, 0);
    if (lmagic != kLabelMagic)
        throw format_error(labels_path + ": bad magic " + hex(lmagic) + " at byte offset 0 " +
                           "(expected " + hex(kLabelMagic) + ")");
    const std::uint32_t lcount = read_u32_be(lab, labels_path, 4);
    if (lcount != count)
        throw format_error(labels_path + ": label count " + std::to_string(lcount) +
                           " does not match image count " + std::to_string(count));
    std::vector<unsigned char> lraw(lcount);
    lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lcount));
    if (static_cast<std::size_t>(lab.gcount()) != lcount)
        throw format_error(labels_path + ": truncated label data at byte offset " +
                           std::to_string(8 + lab.gcount()) + " (expected " +
                           std::to_string(8 + std::size_t(lcount)) + " bytes)");
    set.labels.assign(lraw.begin(), lraw.end());
    return set;
}

void write_idx(const LabeledImageSet& set, const std::string& images_path,
               const std::string& labels_path) {
    set.validate();
    for (int y : set.labels)
        if (y < 0 || y > 255)
            throw contract_error("write_idx: label " + std::to_string(y) +
                                 " does not fit in one byte");

    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw io_error("cannot create " + images_path);
    write_u32_be(img, kImageMagic);
    write_u32_be(img, static_cast<std::uint32_t>(set.size()));
    write_u32_be(img, static_cast<std::uint32_t>(set.height));
    write_u32_be(img, static_cast<std::uint32_t>(set.width));
    std::vector<unsigned char> raw(set.pixels.size());
    for (std::size_t i = 0; i < set.pixels.size(); ++i)
        raw[i] = static_cast<unsigned char>(std::lround(set.pixels[i] * 255.0));
    img.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!img) throw io_error("failed writing " + images_path);

    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw io_error("cannot create " + labels_path);
    write_u32_be(lab, kLabelMagic);
    write_u32_be(lab, static_cast<std::uint32_t>(set.size()));
    std::vector<unsigned char> lraw(set.labels.begin(), set.labels.end());
    lab.write(reinterpret_cast<const char*>(lraw.data()),
              static_cast<std::streamsize>(lraw.size()));
    if (!lab) throw io_error("failed writing " + labels_path);
}

// --- synthetic corpus ---------------------------------------------------------

namespace {

// Lexicographically enumerated 3-element subsets of the 9 grid blocks.
std::array<int, 3> template_blocks(std::size_t index) {
    std::size_t n = 0;
    for (int a = 0; a < 9; ++a)
        for (int b = a + 1; b < 9; ++b)
            for (int c = b + 1; c < 9; ++c)
                if (n++ == index) return {a, b, c};
    throw config_error("template index " + std::to_string(index) + " exceeds " +
                       std::to_string(max_templates() - 1));
}

std::size_t grid_edge(std::size_t side, std::size_t i) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(i * side) / 3.0));
}

}  // namespace

std::size_t max_templates() { return 84; }

std::string template_name(std::size_t index) {
    const auto blk = template_blocks(index);
    return "blocks-" + std::to_string(blk[0]) + "-" + std::to_string(blk[1]) + "-" +
           std::to_string(blk[2]);
}

Tensor template_image(std::size_t index, std::size_t side) {
    if (side < 6) throw config_error("image_side must be at least 6");
    const auto blk = template_blocks(index);
    Tensor img({side, side});
    for (int b : blk) {
        const std::size_t br = static_cast<std::size_t>(b) / 3;
        const std::size_t bc = static_cast<std::size_t>(b) % 3;
        for (std::size_t r = grid_edge(side, br); r < grid_edge(side, br + 1); ++r)
            for (std::size_t c = grid_edge(side, bc); c < grid_edge(side, bc + 1); ++c)
                img[r * side + c] = 1.0;
    }
    return img;
}

LabeledImageSet generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes == 0) throw config_error("generate_synthetic: num_classes must be positive");
    if (spec.per_class == 0) throw config_error("generate_synthetic: per_class must be positive");
    if (spec.image_side < 6) throw config_error("generate_synthetic: image_side must be at least 6");
    if (spec.template_offset + spec.num_classes > max_templates())
        throw config_error("generate_synthetic: " + std::to_string(spec.num_classes) +
                           " classes at offset " + std::to_string(spec.template_offset) +
                           " exceed the " + std::to_string(max_templates()) + " templates");
    if (!(spec.noise_sigma >= 0.0))
        throw config_error("generate_synthetic: noise_sigma must be nonnegative");

    LabeledImageSet set;
    set.height = set.width = spec.image_side;
    const std::size_t d = set.image_pixels();
    set.pixels.reserve(spec.num_classes * spec.per_class * d);
    set.labels.reserve(spec.num_classes * spec.per_class);
    Rng rng(spec.seed, /*stream=*/7);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const Tensor tmpl = template_image(spec.template_offset + k, spec.image_side);
        set.class_names.push_back(template_name(spec.template_offset + k));
        for (std::size_t s = 0; s < spec.per_class; ++s) {
            for (std::size_t j = 0; j < d; ++j) {
                const double v = tmpl[j] + (spec.noise_sigma > 0.0
                                                ? rng.normal(0.0, spec.noise_sigma)
                                                : 0.0);
                set.pixels.push_back(std::clamp(v, 0.0, 1.0));
            }
            set.labels.push_back(static_cast<int>(k));
        }
    }
    return set;
}

// --- outlier sets -------------------------------------------------------------

LabeledImageSet make_outliers(const OutlierSpec& spec, const LabeledImageSet* base) {
    if (spec.count == 0) throw config_error("make_outliers: count must be positive");
    const std::size_t side = base ? base->height : spec.image_side;
    if (side == 0)
        throw config_error("make_outliers: image_side (or a base set) is required");

    LabeledImageSet set;
    set.height = set.width = side;
    const std::size_t d = side * side;
    Rng rng(spec.seed, /*stream=*/11);

    switch (spec.kind) {
        case OutlierKind::uniform_noise: {
            set.pixels.reserve(spec.count * d);
            for (std::size_t i = 0; i < spec.count; ++i) {
                for (std::size_t j = 0; j < d; ++j) set.pixels.push_back(rng.uniform());
                set.labels.push_back(kOutlierLabel);
            }
            set.class_names.push_back("uniform-noise");
            return set;
        }
        case OutlierKind::noised_known: {
            if (base == nullptr)
                throw config_error("make_outliers: noised_known requires a base set");
            if (base->size() == 0)
                throw config_error("make_outliers: noised_known base set is empty");
            if (base->height != side || base->width != side)
                throw config_error("make_outliers: base set dimensions disagree");
            set.pixels.reserve(spec.count * d);
            for (std::size_t i = 0; i < spec.count; ++i) {
                const double* src = base->pixels.data() + (i % base->size()) * d;
                for (std::size_t j = 0; j < d; ++j)
                    set.pixels.push_back(
                        std::clamp(src[j] + spec.noise_scale * rng.uniform(), 0.0, 1.0));
                set.labels.push_back(kOutlierLabel);
            }
            set.class_names.push_back("noised-known");
            return set;
        }
        case OutlierKind::unseen_templates: {
            if (spec.unseen_classes == 0)
                throw config_error("make_outliers: unseen_classes must be positive");
            const std::size_t per =
                (spec.count + spec.unseen_classes - 1) / spec.unseen_classes;
            SyntheticSpec gen;
            gen.num_classes = spec.unseen_classes;
            gen.per_class = per;
            gen.image_side = side;
            gen.noise_sigma = spec.noise_sigma;
            gen.seed = spec.seed;
            gen.template_offset = spec.known_classes;
            LabeledImageSet full = generate_synthetic(gen);
            // Trim to the exact requested count, relabeling to global ids.
            set.class_names = full.class_names;
            for (std::size_t i = 0; i < spec.count; ++i) {
                const double* src = full.pixels.data() + i * d;
                set.pixels.insert(set.pixels.end(), src, src + d);
                set.labels.push_back(full.labels[i] + static_cast<int>(spec.known_classes));
            }
            return set;
        }
    }
    throw config_error("make_outliers: unknown outlier kind");
}

// --- known/unknown split --------------------------------------------------------

SplitResult split(const LabeledImageSet& data, const SplitSpec& spec) {
    if (data.size() == 0) throw config_error("split: empty dataset");
    if (spec.known_class_ids.empty()) throw config_error("split: no known classes given");
    if (!(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0))
        throw config_error("split: train_fraction must lie in [0,1]");

    std::set<int> known(spec.known_class_ids.begin(), spec.known_class_ids.end());
    std::set<int> unknown(spec.unknown_class_ids.begin(), spec.unknown_class_ids.end());
    for (int id : known)
        if (unknown.count(id))
            throw config_error("split: class " + std::to_string(id) +
                               " is listed as both known and unknown");

    std::vector<int> known_sorted(known.begin(), known.end());
    std::map<int, int> relabel;
    for (std::size_t i = 0; i < known_sorted.size(); ++i)
        relabel[known_sorted[i]] = static_cast<int>(i);
    const int unknown_label = static_cast<int>(known_sorted.size());

    SplitResult out;
    out.known_ids_sorted = known_sorted;
    const std::size_t d = data.image_pixels();
    for (LabeledImageSet* s : {&out.train_known, &out.test_known, &out.test_unknown}) {
        s->height = data.height;
        s->width = data.width;
    }
    for (int id : known_sorted) {
        const std::string name = (static_cast<std::size_t>(id) < data.class_names.size())
                                     ? data.class_names[static_cast<std::size_t>(id)]
                                     : "class_" + std::to_string(id);
        out.train_known.class_names.push_back(name);
        out.test_known.class_names.push_back(name);
    }
    out.test_unknown.class_names.push_back("unknown");

    auto copy_sample = [&](LabeledImageSet& dst, std::size_t i, int label) {
        const double* src = data.pixels.data() + i * d;
        dst.pixels.insert(dst.pixels.end(), src, src + d);
        dst.labels.push_back(label);
    };

    // Per-class shuffled partition so the split is deterministic per seed and
    // independent of sample order within other classes.
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    Rng rng(spec.seed, /*stream=*/13);
    for (auto& [cls, idx] : by_class) {
        if (relabel.count(cls)) {
            Rng class_rng = rng.split(static_cast<std::uint64_t>(cls) + 17);
            class_rng.shuffle(idx);
            const std::size_t n_train =
                std::min(idx.size(), static_cast<std::size_t>(
                                         spec.train_fraction * static_cast<double>(idx.size()) + 0.5));
            for (std::size_t i = 0; i < idx.size(); ++i)
                copy_sample(i < n_train ? out.train_known : out.test_known, idx[i], relabel[cls]);
        } else if (unknown.count(cls)) {
            for (std::size_t i : idx) copy_sample(out.test_unknown, i, unknown_label);
        }
        // Classes in neither list are dropped.
    }
    return out;
}

}  // namespace cgdl
