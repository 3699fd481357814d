#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sedeg/model.hpp"

namespace sedeg {

// Versioned binary container: little-endian throughout, canonical entry
// names mapped to shape + payload. Parameters are stored as 32-bit floats;
// index-style entries as 32-bit ints. Save/load/save round-trips bit-exactly.
struct Checkpoint {
    enum class Dtype : uint8_t { f32 = 0, i32 = 1 };

    struct Entry {
        std::string name;
        Shape shape;
        Dtype dtype = Dtype::f32;
        std::vector<float> f32;
        std::vector<int32_t> i32;
    };

    static constexpr uint32_t kVersion = 1;

    ModelConfig config;
    std::vector<int> classes_per_task;
    std::vector<Entry> entries;

    void add_f32(const std::string& name, const Shape& shape, const std::vector<double>& values);
    void add_i32(const std::string& name, const Shape& shape, std::vector<int32_t> values);
    const Entry* find(const std::string& name) const;
    // entry that must exist, with this exact shape
    const Entry& expect(const std::string& name, const Shape& shape) const;

    void save(const std::string& path) const;  // atomic: temp file + rename
    static Checkpoint load(const std::string& path);
};

// Parameter values -> f32 entries under their canonical names.
Checkpoint to_checkpoint(const ModelConfig& cfg, const std::vector<int>& classes_per_task,
                         const ParamMap& params);
// Copies entry payloads into an existing parameter map (shapes must match).
void load_parameters(const Checkpoint& ckpt, ParamMap& params);

Checkpoint model_checkpoint(const SedegModel& model);
SedegModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace sedeg
