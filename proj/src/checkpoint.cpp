#include "sedeg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "sedeg/errors.hpp"

namespace sedeg {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'D', 'E', 'G', 'C', 'K', 'T'};

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    uint32_t u32() {
        if (pos + 4 > buf.size()) throw IoError("checkpoint: truncated file");
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    int32_t i32() { return std::bit_cast<int32_t>(u32()); }
    uint8_t u8() {
        if (pos >= buf.size()) throw IoError("checkpoint: truncated file");
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string bytes(size_t n) {
        if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void Checkpoint::add_f32(const std::string& name, const Shape& shape,
                         const std::vector<double>& values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw IoError("checkpoint: entry " + name + " shape/value mismatch");
    Entry e;
    e.name = name;
    e.shape = shape;
    e.dtype = Dtype::f32;
    e.f32.reserve(values.size());
    for (double v : values) e.f32.push_back(static_cast<float>(v));
    entries.push_back(std::move(e));
}

void Checkpoint::add_i32(const std::string& name, const Shape& shape,
                         std::vector<int32_t> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw IoError("checkpoint: entry " + name + " shape/value mismatch");
    Entry e;
    e.name = name;
    e.shape = shape;
    e.dtype = Dtype::i32;
    e.i32 = std::move(values);
    entries.push_back(std::move(e));
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
    for (const Entry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const Checkpoint::Entry& Checkpoint::expect(const std::string& name, const Shape& shape) const {
    const Entry* e = find(name);
    if (!e) throw IoError("checkpoint: missing entry " + name);
    if (e->shape != shape)
        throw IoError("checkpoint: entry " + name + " has shape " + shape_str(e->shape) +
                      ", expected " + shape_str(shape));
    return *e;
}

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(config.num_sab));
    put_u32(out, static_cast<uint32_t>(config.num_tab));
    put_u32(out, static_cast<uint32_t>(config.num_heads));
    put_u32(out, static_cast<uint32_t>(config.embed_dim));
    put_u32(out, static_cast<uint32_t>(config.input_size));
    put_u32(out, static_cast<uint32_t>(config.patch_size));
    put_u32(out, static_cast<uint32_t>(config.channels));
    put_u32(out, static_cast<uint32_t>(classes_per_task.size()));
    for (int c : classes_per_task) put_u32(out, static_cast<uint32_t>(c));
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const Entry& e : entries) {
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out.append(e.name);
        out.push_back(static_cast<char>(e.dtype));
        out.push_back(static_cast<char>(e.shape.size()));
        for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
        if (e.dtype == Dtype::f32) {
            for (float f : e.f32) put_f32(out, f);
        } else {
            for (int32_t v : e.i32) put_u32(out, std::bit_cast<uint32_t>(v));
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("checkpoint: cannot open " + tmp + " for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("checkpoint: write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint: rename to " + path + " failed: " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw IoError("checkpoint: bad magic in " + path);
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config.num_sab = static_cast<int>(r.u32());
    ckpt.config.num_tab = static_cast<int>(r.u32());
    ckpt.config.num_heads = static_cast<int>(r.u32());
    ckpt.config.embed_dim = static_cast<int>(r.u32());
    ckpt.config.input_size = static_cast<int>(r.u32());
    ckpt.config.patch_size = static_cast<int>(r.u32());
    ckpt.config.channels = static_cast<int>(r.u32());
    const uint32_t tasks = r.u32();
    for (uint32_t i = 0; i < tasks; ++i)
        ckpt.classes_per_task.push_back(static_cast<int>(r.u32()));
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = r.bytes(r.u32());
        e.dtype = static_cast<Dtype>(r.u8());
        const int ndim = r.u8();
        for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(r.u32()));
        const int64_t n = shape_numel(e.shape);
        if (e.dtype == Dtype::f32) {
            e.f32.reserve(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) e.f32.push_back(r.f32());
        } else {
            e.i32.reserve(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) e.i32.push_back(r.i32());
        }
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

Checkpoint to_checkpoint(const ModelConfig& cfg, const std::vector<int>& classes_per_task,
                         const ParamMap& params) {
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.classes_per_task = classes_per_task;
    for (const auto& [name, t] : params) ckpt.add_f32(name, t.shape(), t.values());
    return ckpt;
}

void load_parameters(const Checkpoint& ckpt, ParamMap& params) {
    for (auto& [name, t] : params) {
        const Checkpoint::Entry& e = ckpt.expect(name, t.shape());
        auto& v = t.values();
        for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(e.f32[i]);
    }
}

Checkpoint model_checkpoint(const SedegModel& model) {
    return to_checkpoint(model.encoder.config, model.decoder.classes_per_task,
                         model.parameters());
}

SedegModel model_from_checkpoint(const Checkpoint& ckpt) {
    ckpt.config.validate();
    Rng rng(0);  // structure only; every value is overwritten below
    SedegModel model;
    model.init(ckpt.config, rng);
    for (int classes : ckpt.classes_per_task) model.decoder.add_task(classes, rng);
    ParamMap params = model.parameters();
    load_parameters(ckpt, params);
    return model;
}

}  // namespace sedeg
