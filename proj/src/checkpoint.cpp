#include "cd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "cd/common.hpp"

namespace cd {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ostream& os, std::int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), s.size());
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::int64_t read_i64(std::istream& is) {
    std::int64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::string read_string(std::istream& is) {
    auto len = read_u32(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

std::uint8_t dtype_code(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return 0;
        case torch::kFloat64: return 1;
        case torch::kInt64: return 2;
        case torch::kUInt8: return 3;
        case torch::kInt32: return 4;
        default: throw CdError("unsupported checkpoint dtype");
    }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
    switch (c) {
        case 0: return torch::kFloat32;
        case 1: return torch::kFloat64;
        case 2: return torch::kInt64;
        case 3: return torch::kUInt8;
        case 4: return torch::kInt32;
        default: throw CdError("corrupt checkpoint: unknown dtype code");
    }
}

void write_tensor(std::ostream& os, const torch::Tensor& t) {
    auto c = t.detach().cpu().contiguous();
    os.put(static_cast<char>(dtype_code(c.scalar_type())));
    os.put(static_cast<char>(c.dim()));
    for (int64_t i = 0; i < c.dim(); ++i) write_i64(os, c.size(i));
    const auto nbytes = static_cast<std::uint64_t>(c.numel() * c.element_size());
    write_u64(os, nbytes);
    os.write(static_cast<const char*>(c.data_ptr()), nbytes);
}

torch::Tensor read_tensor(std::istream& is) {
    auto dtype = dtype_from_code(static_cast<std::uint8_t>(is.get()));
    const int ndim = is.get();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = read_i64(is);
    const auto nbytes = read_u64(is);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
        throw CdError("corrupt checkpoint: tensor byte count mismatch");
    }
    is.read(static_cast<char*>(t.data_ptr()), nbytes);
    return t;
}

// Parameters first, then buffers; both in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(
    const torch::nn::Module& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters()) out.emplace_back(p.key(), p.value());
    for (const auto& b : model.named_buffers()) out.emplace_back(b.key(), b.value());
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const torch::nn::Module& model,
                     const torch::optim::Adam* optimizer, std::uint64_t step,
                     const std::string& config_kv) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CdError("cannot write checkpoint: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, step);
    write_string(os, config_kv);

    auto state = named_state(model);
    write_u32(os, static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, tensor] : state) {
        write_string(os, name);
        write_tensor(os, tensor);
    }

    os.put(optimizer ? 1 : 0);
    if (optimizer) {
        std::vector<std::pair<std::string, const torch::optim::AdamParamState*>> entries;
        for (const auto& p : model.named_parameters()) {
            auto it = optimizer->state().find(p.value().unsafeGetTensorImpl());
            if (it == optimizer->state().end()) continue;
            entries.emplace_back(
                p.key(), static_cast<const torch::optim::AdamParamState*>(it->second.get()));
        }
        write_u32(os, static_cast<std::uint32_t>(entries.size()));
        for (const auto& [name, st] : entries) {
            write_string(os, name);
            write_i64(os, st->step());
            write_tensor(os, st->exp_avg());
            write_tensor(os, st->exp_avg_sq());
            os.put(st->max_exp_avg_sq().defined() ? 1 : 0);
            if (st->max_exp_avg_sq().defined()) write_tensor(os, st->max_exp_avg_sq());
        }
    }
    if (!os) throw CdError("short write while saving checkpoint: " + path);
}

namespace {
CheckpointMeta read_header(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CdError("not a checkpoint file: " + path);
    }
    CheckpointMeta meta;
    meta.step = read_u64(is);
    meta.config_kv = read_string(is);
    return meta;
}
}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CdError("cannot open checkpoint: " + path);
    return read_header(is, path);
}

CheckpointMeta load_checkpoint(const std::string& path, torch::nn::Module& model,
                               torch::optim::Adam* optimizer) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CdError("cannot open checkpoint: " + path);
    auto meta = read_header(is, path);

    auto state = named_state(model);
    const auto n = read_u32(is);
    if (n != state.size()) {
        throw CompatibilityError("checkpoint tensor count " + std::to_string(n) +
                                 " does not match model (" + std::to_string(state.size()) +
                                 ")");
    }
    torch::NoGradGuard guard;
    for (std::uint32_t i = 0; i < n; ++i) {
        auto name = read_string(is);
        auto tensor = read_tensor(is);
        if (name != state[i].first) {
            throw CompatibilityError("checkpoint tensor '" + name +
                                     "' does not match model tensor '" + state[i].first +
                                     "'");
        }
        if (tensor.sizes() != state[i].second.sizes()) {
            throw CompatibilityError("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(tensor) + ", model expects " +
                                     shape_str(state[i].second));
        }
        state[i].second.copy_(tensor);
    }

    const bool has_opt = is.get() == 1;
    if (has_opt && optimizer) {
        std::unordered_map<std::string, torch::Tensor> params;
        for (const auto& p : model.named_parameters()) params.emplace(p.key(), p.value());
        const auto n_entries = read_u32(is);
        for (std::uint32_t i = 0; i < n_entries; ++i) {
            auto name = read_string(is);
            auto st = std::make_unique<torch::optim::AdamParamState>();
            st->step(read_i64(is));
            st->exp_avg(read_tensor(is));
            st->exp_avg_sq(read_tensor(is));
            if (is.get() == 1) st->max_exp_avg_sq(read_tensor(is));
            auto it = params.find(name);
            if (it == params.end()) {
                throw CompatibilityError("optimizer state for unknown parameter '" + name +
                                         "'");
            }
            optimizer->state()[it->second.unsafeGetTensorImpl()] = std::move(st);
        }
    }
    if (!is) throw CdError("short read while loading checkpoint: " + path);
    return meta;
}

}  // namespace cd
