#include "cosy/checkpoint.hpp"

#include <cstring>

#include "cosy/error.hpp"
#include "cosy/splat_io.hpp"

namespace cosy {

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& b) : bytes_(b) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void read(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw Error(ErrorCode::CheckpointInvalid, "truncated checkpoint");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return true;
    }
    return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw Error(ErrorCode::CheckpointInvalid, "missing tensor " + name);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, ckpt.config.digest());
    put<std::uint64_t>(out, ckpt.step);
    put<std::uint64_t>(out, ckpt.data_position);
    put_string(out, ckpt.config.canonical());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        const auto t = tensor.detach().to(torch::kFloat32).contiguous();
        put_string(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put<std::int64_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.data_ptr<float>()), t.numel() * sizeof(float));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw Error(ErrorCode::CheckpointInvalid, "bad magic");
    }
    Reader r(bytes);
    r.get<std::uint32_t>();  // magic
    if (r.get<std::uint32_t>() != kCheckpointVersion) throw Error(ErrorCode::CheckpointInvalid, "unsupported version");
    const auto digest = r.get<std::uint64_t>();
    Checkpoint ckpt;
    ckpt.step = r.get<std::uint64_t>();
    ckpt.data_position = r.get<std::uint64_t>();
    try {
        ckpt.config.merge_text(r.get_string());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CheckpointInvalid) throw;
        throw Error(ErrorCode::CheckpointInvalid, std::string("embedded config: ") + e.what());
    }
    if (ckpt.config.digest() != digest) throw Error(ErrorCode::CheckpointInvalid, "config digest mismatch");
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.get_string();
        const auto ndim = r.get<std::uint32_t>();
        if (ndim > 8) throw Error(ErrorCode::CheckpointInvalid, "tensor rank too large");
        std::vector<int64_t> dims(ndim);
        int64_t numel = 1;
        for (auto& d : dims) {
            d = r.get<std::int64_t>();
            if (d < 0 || d > (int64_t(1) << 32)) throw Error(ErrorCode::CheckpointInvalid, "bad dimension");
            numel *= d;
        }
        auto t = torch::empty(dims, torch::kFloat32);
        r.read(t.data_ptr<float>(), numel * sizeof(float));
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw Error(ErrorCode::CheckpointInvalid, "trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    // Write-then-rename so a crash never leaves a torn file.
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, encode_checkpoint(ckpt));
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const Error&) {
        throw Error(ErrorCode::CheckpointInvalid, "cannot read " + path.string());
    }
    return decode_checkpoint(bytes);
}

void append_module(TensorTable& table, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true)) table.emplace_back(prefix + p.key(), p.value().detach().clone());
    for (const auto& b : module.named_buffers(true)) table.emplace_back(prefix + b.key(), b.value().detach().clone());
}

void restore_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard ng;
    auto copy = [&](const std::string& name, torch::Tensor& dst) {
        const auto& src = ckpt.get(prefix + name);
        if (src.sizes() != dst.sizes()) throw Error(ErrorCode::CheckpointInvalid, "shape mismatch for " + prefix + name);
        dst.copy_(src);
    };
    for (auto& p : module.named_parameters(true)) copy(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) copy(b.key(), b.value());
}

}  // namespace cosy
