#include "sedeg/memory.hpp"

#include <algorithm>
#include <string>

#include "sedeg/errors.hpp"

namespace sedeg {

int MemoryBuffer::size() const {
    int n = 0;
    for (const auto& [cls, exemplars] : store) n += static_cast<int>(exemplars.size());
    return n;
}

int MemoryBuffer::count_of(int label) const {
    auto it = store.find(label);
    return it == store.end() ? 0 : static_cast<int>(it->second.size());
}

std::vector<int> MemoryBuffer::stored_classes() const {
    std::vector<int> out;
    for (const auto& [cls, exemplars] : store)
        if (!exemplars.empty()) out.push_back(cls);
    return out;
}

std::map<int, int> per_class_quota(int capacity, const std::vector<int>& seen_classes) {
    if (seen_classes.empty()) throw ConfigError("per_class_quota: no classes");
    std::vector<int> sorted = seen_classes;
    std::sort(sorted.begin(), sorted.end());
    const int n = static_cast<int>(sorted.size());
    const int base = capacity / n;
    const int remainder = capacity % n;
    std::map<int, int> quota;
    for (int i = 0; i < n; ++i) quota[sorted[static_cast<size_t>(i)]] = base + (i < remainder ? 1 : 0);
    return quota;
}

void MemoryBuffer::update(const Dataset& task_dataset, int task_index,
                          const std::vector<int>& seen_classes) {
    if (capacity < static_cast<int>(seen_classes.size())) quota_warning = true;
    const std::map<int, int> quota = per_class_quota(capacity, seen_classes);

    // shrink existing classes to quota, keeping the earliest-selected prefix
    for (auto& [cls, exemplars] : store) {
        auto it = quota.find(cls);
        const size_t q = it == quota.end() ? 0 : static_cast<size_t>(it->second);
        if (exemplars.size() > q) exemplars.resize(q);
    }

    // fill classes that are new to the buffer from the task's data
    for (int cls : task_dataset.distinct_labels()) {
        if (store.count(cls)) continue;
        auto it = quota.find(cls);
        if (it == quota.end())
            throw ConfigError("MemoryBuffer::update: class " + std::to_string(cls) +
                              " present in data but not in seen_classes");
        const std::vector<int> candidates = task_dataset.indices_of_class(cls);
        Rng rng = Rng(seed).child(static_cast<uint64_t>(cls) + 0x10000);
        const int take = std::min(it->second, static_cast<int>(candidates.size()));
        std::vector<int> picks =
            rng.sample_without_replacement(static_cast<int>(candidates.size()), take);
        std::vector<Exemplar>& slot = store[cls];
        for (int p : picks) {
            const int src = candidates[static_cast<size_t>(p)];
            slot.push_back({task_dataset.images[static_cast<size_t>(src)], cls, task_index, src,
                            task_dataset.sample_ids[static_cast<size_t>(src)]});
        }
    }

    if (size() > capacity)
        throw std::logic_error("MemoryBuffer::update: budget exceeded after rebalancing");
}

std::map<int, int64_t> class_counts(const MemoryBuffer& buffer, const Dataset& current) {
    std::map<int, int64_t> counts;
    for (int label : current.labels) ++counts[label];
    for (const auto& [cls, exemplars] : buffer.store)
        if (!exemplars.empty()) counts[cls] += static_cast<int64_t>(exemplars.size());
    return counts;
}

std::vector<int64_t> dense_counts(const std::map<int, int64_t>& counts, int total_classes) {
    std::vector<int64_t> out(static_cast<size_t>(total_classes), 0);
    for (const auto& [cls, n] : counts) {
        if (cls < 0 || cls >= total_classes)
            throw ConfigError("dense_counts: class " + std::to_string(cls) + " out of range");
        out[static_cast<size_t>(cls)] = n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// MergedLoader
// ---------------------------------------------------------------------------

MergedLoader::MergedLoader(const MemoryBuffer& buffer, const Dataset& current, int batch_size,
                           uint64_t seed)
    : batch_size_(batch_size),
      seed_(seed),
      image_size_(current.image_size),
      channels_(current.channels) {
    if (batch_size < 1) throw ConfigError("MergedLoader: batch_size must be >= 1");
    for (size_t i = 0; i < current.size(); ++i)
        entries_.push_back({&current.images[i], current.labels[i], current.sample_ids[i]});
    for (const auto& [cls, exemplars] : buffer.store)
        for (const Exemplar& e : exemplars)
            entries_.push_back({&e.image, e.label, e.sample_id});
    if (entries_.empty()) throw ConfigError("MergedLoader: empty training union");
}

int MergedLoader::batches_per_epoch() const {
    return static_cast<int>((entries_.size() + static_cast<size_t>(batch_size_) - 1) /
                            static_cast<size_t>(batch_size_));
}

std::vector<MergedLoader::Batch> MergedLoader::epoch(int epoch_index) const {
    std::vector<int> order(entries_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng = Rng(seed_).child(static_cast<uint64_t>(epoch_index));
    rng.shuffle(order);

    std::vector<Batch> batches;
    const size_t n = entries_.size();
    for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size_)) {
        const size_t end = std::min(n, start + static_cast<size_t>(batch_size_));
        const int b = static_cast<int>(end - start);
        std::vector<double> v;
        v.reserve(static_cast<size_t>(b) * image_size_ * image_size_ * channels_);
        Batch batch;
        for (size_t i = start; i < end; ++i) {
            const Entry& e = entries_[static_cast<size_t>(order[i])];
            for (float px : *e.image) v.push_back(static_cast<double>(px));
            batch.labels.push_back(e.label);
            batch.sample_ids.push_back(e.sample_id);
        }
        batch.images = Tensor::from({b, image_size_, image_size_, channels_}, std::move(v));
        batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

Checkpoint buffer_checkpoint(const MemoryBuffer& buffer) {
    Checkpoint ckpt;
    ckpt.add_i32("memory.meta", {3},
                 {static_cast<int32_t>(buffer.capacity),
                  static_cast<int32_t>(buffer.seed & 0xffffffffULL),
                  static_cast<int32_t>(buffer.seed >> 32)});
    for (const auto& [cls, exemplars] : buffer.store) {
        if (exemplars.empty()) continue;
        std::vector<int32_t> rows;
        rows.reserve(exemplars.size() * 2);
        for (const Exemplar& e : exemplars) {
            rows.push_back(static_cast<int32_t>(e.task_of_origin));
            rows.push_back(static_cast<int32_t>(e.source_index));
        }
        ckpt.add_i32("memory.class." + std::to_string(cls),
                     {static_cast<int>(exemplars.size()), 2}, std::move(rows));
    }
    return ckpt;
}

MemoryBuffer buffer_from_checkpoint(const Checkpoint& ckpt,
                                    const std::vector<const Dataset*>& task_train_sets) {
    const Checkpoint::Entry& meta = ckpt.expect("memory.meta", {3});
    MemoryBuffer buffer;
    buffer.capacity = meta.i32[0];
    buffer.seed = (static_cast<uint64_t>(static_cast<uint32_t>(meta.i32[2])) << 32) |
                  static_cast<uint64_t>(static_cast<uint32_t>(meta.i32[1]));
    const std::string prefix = "memory.class.";
    for (const auto& e : ckpt.entries) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        const int cls = std::stoi(e.name.substr(prefix.size()));
        std::vector<Exemplar>& slot = buffer.store[cls];
        for (int row = 0; row < e.shape[0]; ++row) {
            const int task = e.i32[static_cast<size_t>(row) * 2];
            const int src = e.i32[static_cast<size_t>(row) * 2 + 1];
            if (task < 1 || task > static_cast<int>(task_train_sets.size()))
                throw IoError("memory checkpoint: task index " + std::to_string(task) +
                              " has no dataset");
            const Dataset& data = *task_train_sets[static_cast<size_t>(task - 1)];
            if (src < 0 || src >= static_cast<int>(data.size()))
                throw IoError("memory checkpoint: bad source index");
            slot.push_back({data.images[static_cast<size_t>(src)],
                            data.labels[static_cast<size_t>(src)], task, src,
                            data.sample_ids[static_cast<size_t>(src)]});
        }
    }
    return buffer;
}

}  // namespace sedeg
