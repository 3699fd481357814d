#include "sedeg/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "sedeg/errors.hpp"

namespace sedeg {

void Dataset::add(std::vector<float> image, int label, int64_t sample_id) {
    if (!images.empty() && image.size() != images.front().size())
        throw ConfigError("Dataset::add: inconsistent image size");
    images.push_back(std::move(image));
    labels.push_back(label);
    sample_ids.push_back(sample_id);
}

std::vector<int> Dataset::indices_of_class(int label) const {
    std::vector<int> out;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> Dataset::distinct_labels() const {
    std::set<int> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

Tensor batch_images(const Dataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw ConfigError("batch_images: empty batch");
    const int b = static_cast<int>(indices.size());
    const int h = data.image_size, c = data.channels;
    std::vector<double> v;
    v.reserve(static_cast<size_t>(b) * h * h * c);
    for (int idx : indices) {
        const auto& img = data.images.at(static_cast<size_t>(idx));
        for (float px : img) v.push_back(static_cast<double>(px));
    }
    return Tensor::from({b, h, h, c}, std::move(v));
}

std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(data.labels.at(static_cast<size_t>(idx)));
    return out;
}

// ---------------------------------------------------------------------------
// synthetic benchmark
// ---------------------------------------------------------------------------

namespace {

constexpr int64_t kEvalIdBase = int64_t{1} << 40;

}  // namespace

SplitDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.train_per_class < 1 || spec.eval_per_class < 1)
        throw ConfigError("make_synthetic: counts must be >= 1");
    if (spec.image_size < 1 || spec.channels < 1) throw ConfigError("make_synthetic: bad shape");
    if (spec.noise < 0.0 || spec.separation <= 0.0)
        throw ConfigError("make_synthetic: separation must be > 0 and noise >= 0");

    const size_t pixels =
        static_cast<size_t>(spec.image_size) * spec.image_size * spec.channels;
    SplitDataset out;
    out.train.image_size = out.eval.image_size = spec.image_size;
    out.train.channels = out.eval.channels = spec.channels;

    Rng root(spec.seed);
    int64_t next_train_id = 0;
    int64_t next_eval_id = kEvalIdBase;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        Rng proto_rng = root.child(static_cast<uint64_t>(cls) * 4 + 1);
        std::vector<float> prototype(pixels);
        for (auto& px : prototype)
            px = static_cast<float>(proto_rng.normal() * spec.separation);

        Rng train_rng = root.child(static_cast<uint64_t>(cls) * 4 + 2);
        for (int i = 0; i < spec.train_per_class; ++i) {
            std::vector<float> img(pixels);
            for (size_t p = 0; p < pixels; ++p)
                img[p] = prototype[p] + static_cast<float>(train_rng.normal() * spec.noise);
            out.train.add(std::move(img), cls, next_train_id++);
        }
        Rng eval_rng = root.child(static_cast<uint64_t>(cls) * 4 + 3);
        for (int i = 0; i < spec.eval_per_class; ++i) {
            std::vector<float> img(pixels);
            for (size_t p = 0; p < pixels; ++p)
                img[p] = prototype[p] + static_cast<float>(eval_rng.normal() * spec.noise);
            out.eval.add(std::move(img), cls, next_eval_id++);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CIFAR-style binary ingestion
// ---------------------------------------------------------------------------

namespace {

// One record: label byte(s) followed by 3072 bytes of planar RGB (32x32).
void read_cifar_file(const std::string& path, int label_bytes, Dataset& out,
                     int64_t& next_id) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("small-image: cannot open " + path);
    constexpr int kSide = 32;
    constexpr int kPlane = kSide * kSide;
    const int record = label_bytes + 3 * kPlane;
    std::vector<unsigned char> buf(static_cast<size_t>(record));
    while (f.read(reinterpret_cast<char*>(buf.data()), record)) {
        // for CIFAR-100 records the fine label is the second byte
        const int label = buf[static_cast<size_t>(label_bytes - 1)];
        std::vector<float> img(static_cast<size_t>(3) * kPlane);
        for (int y = 0; y < kSide; ++y)
            for (int x = 0; x < kSide; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    const unsigned char raw =
                        buf[static_cast<size_t>(label_bytes + ch * kPlane + y * kSide + x)];
                    img[static_cast<size_t>((y * kSide + x) * 3 + ch)] =
                        static_cast<float>(raw) / 255.0f - 0.5f;
                }
        out.add(std::move(img), label, next_id++);
    }
    if (f.gcount() != 0) throw IoError("small-image: trailing partial record in " + path);
}

}  // namespace

SplitDataset load_small_image(const std::string& dir, int classes) {
    if (classes != 10 && classes != 100)
        throw ConfigError("load_small_image: class count must be 10 or 100");
    SplitDataset out;
    out.train.image_size = out.eval.image_size = 32;
    out.train.channels = out.eval.channels = 3;

    int64_t next_train_id = 0;
    int64_t next_eval_id = kEvalIdBase;
    if (classes == 10) {
        for (int i = 1; i <= 5; ++i)
            read_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin", 1, out.train,
                            next_train_id);
        read_cifar_file(dir + "/test_batch.bin", 1, out.eval, next_eval_id);
    } else {
        read_cifar_file(dir + "/train.bin", 2, out.train, next_train_id);
        read_cifar_file(dir + "/test.bin", 2, out.eval, next_eval_id);
    }
    for (int label : out.train.labels)
        if (label < 0 || label >= classes)
            throw IoError("small-image: label " + std::to_string(label) + " out of range");
    return out;
}

}  // namespace sedeg
