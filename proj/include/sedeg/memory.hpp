#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sedeg/checkpoint.hpp"
#include "sedeg/data.hpp"

namespace sedeg {

struct Exemplar {
    std::vector<float> image;
    int label = 0;
    int task_of_origin = 0;
    int source_index = 0;  // index into the originating task's train set
    int64_t sample_id = 0;
};

// Bounded exemplar store with balanced per-class quotas. Classes keep the
// stable prefix of their earliest-selected exemplars when quotas shrink.
struct MemoryBuffer {
    int capacity = 0;
    uint64_t seed = 0;
    std::map<int, std::vector<Exemplar>> store;
    bool quota_warning = false;  // capacity < |seen classes| was hit

    MemoryBuffer() = default;
    MemoryBuffer(int capacity_, uint64_t seed_) : capacity(capacity_), seed(seed_) {}

    int size() const;
    int count_of(int label) const;
    std::vector<int> stored_classes() const;

    // Called once after task `task_index` completes: rebalances quotas over
    // seen_classes (floor(capacity/n), remainder to the lowest class ids),
    // truncates over-quota classes, fills classes new to the buffer by
    // seeded uniform sampling without replacement from task_dataset.
    void update(const Dataset& task_dataset, int task_index,
                const std::vector<int>& seen_classes);
};

// quota per class id for this capacity and class set
std::map<int, int> per_class_quota(int capacity, const std::vector<int>& seen_classes);

// s_j over the union of the current task's samples and the buffer
std::map<int, int64_t> class_counts(const MemoryBuffer& buffer, const Dataset& current);
// dense vector over global class ids [0, total_classes); absent classes get 0
std::vector<int64_t> dense_counts(const std::map<int, int64_t>& counts, int total_classes);

// Seeded epoch iterator over the union of buffer exemplars and the current
// task's samples. Every epoch covers every sample exactly once; the shuffle
// is reseeded per epoch index.
class MergedLoader {
public:
    struct Batch {
        Tensor images;
        std::vector<int> labels;
        std::vector<int64_t> sample_ids;
    };

    MergedLoader(const MemoryBuffer& buffer, const Dataset& current, int batch_size,
                 uint64_t seed);
    int64_t union_size() const { return static_cast<int64_t>(entries_.size()); }
    int batches_per_epoch() const;
    std::vector<Batch> epoch(int epoch_index) const;

private:
    struct Entry {
        const std::vector<float>* image;
        int label;
        int64_t sample_id;
    };
    std::vector<Entry> entries_;
    int batch_size_;
    uint64_t seed_;
    int image_size_;
    int channels_;
};

// Buffer contents as (task_of_origin, source_index) pairs per class so runs
// can resume bit-exactly given the original task streams.
Checkpoint buffer_checkpoint(const MemoryBuffer& buffer);
MemoryBuffer buffer_from_checkpoint(const Checkpoint& ckpt,
                                    const std::vector<const Dataset*>& task_train_sets);

}  // namespace sedeg
