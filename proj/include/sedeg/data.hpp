#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sedeg/tensor.hpp"

namespace sedeg {

// Flat labeled image set. Images are [H,W,C] row-major floats; labels are
// global class ids; sample ids are unique across a whole benchmark run and
// disjoint between train and eval splits (used by the eval-isolation audit).
struct Dataset {
    int image_size = 0;
    int channels = 0;
    std::vector<std::vector<float>> images;
    std::vector<int> labels;
    std::vector<int64_t> sample_ids;

    size_t size() const { return images.size(); }
    void add(std::vector<float> image, int label, int64_t sample_id);
    // indices of every sample with the given label
    std::vector<int> indices_of_class(int label) const;
    std::vector<int> distinct_labels() const;
};

// [b, H, W, C] tensor for the chosen samples
Tensor batch_images(const Dataset& data, const std::vector<int>& indices);
std::vector<int> batch_labels(const Dataset& data, const std::vector<int>& indices);

// Gaussian class prototypes rendered as small images: prototype pixels are
// N(0, separation^2), samples add N(0, noise^2). Separability is tuned by
// the separation/noise ratio.
struct SyntheticSpec {
    int num_classes = 10;
    int train_per_class = 64;
    int eval_per_class = 16;
    int image_size = 32;
    int channels = 3;
    double separation = 1.0;
    double noise = 0.5;
    uint64_t seed = 0;
};

struct SplitDataset {
    Dataset train;
    Dataset eval;
};

SplitDataset make_synthetic(const SyntheticSpec& spec);

// CIFAR-style binary ingestion from a local directory; classes is 10
// (data_batch_*.bin / test_batch.bin) or 100 (train.bin / test.bin).
// Pixels are scaled to [-0.5, 0.5].
SplitDataset load_small_image(const std::string& dir, int classes);

}  // namespace sedeg
