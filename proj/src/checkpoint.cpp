#include "ma3e/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ma3e/error.hpp"

namespace ma3e {

namespace {

constexpr char kMagic[8] = {'M', 'A', '3', 'E', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
   public:
    Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

   private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw RuntimeFailure("unreadable file: truncated checkpoint " + path_.string());
    }
    const std::string& buf_;
    const std::filesystem::path& path_;
    std::size_t pos_ = 0;
};

std::vector<std::uint64_t> shape_of(const std::string& name, const Matrix& m) {
    if (name.ends_with(".weight")) return {m.rows(), m.cols()};
    return {m.cols()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const ModelParams& params) {
    const std::string text = serialize_config(config);
    const auto named = learnable_params(params);

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    std::uint64_t offset = 0;
    for (const auto& p : named) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        const auto shape = shape_of(p.name, *p.value);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) put<std::uint64_t>(out, d);
        put<std::uint64_t>(out, offset);
        offset += p.value->size() * sizeof(float);
    }
    for (const auto& p : named)
        for (double v : p.value->data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeFailure("unwritable path: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw RuntimeFailure("unwritable path: failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("unreadable file: cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(buf, path);
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw RuntimeFailure("unsupported format: " + path.string() + " is not a checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw RuntimeFailure("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
    const auto text_len = r.get<std::uint64_t>();
    Checkpoint ckpt;
    ckpt.config = parse_config(r.bytes(text_len));
    ckpt.params = init_params(ckpt.config.model_config());

    auto named = learnable_params(ckpt.params);
    const auto count = r.get<std::uint32_t>();
    if (count != named.size())
        throw RuntimeFailure("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                             std::to_string(named.size()));
    std::vector<std::uint64_t> offsets(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name = r.bytes(r.get<std::uint32_t>());
        const auto ndim = r.get<std::uint32_t>();
        if (ndim > 4) throw RuntimeFailure("checkpoint tensor '" + name + "' has too many dimensions");
        std::vector<std::uint64_t> shape(ndim);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        offsets[k] = r.get<std::uint64_t>();
        if (name != named[k].name) throw RuntimeFailure("checkpoint tensor '" + name + "' where '" + named[k].name + "' expected");
        if (shape != shape_of(name, *named[k].value)) throw RuntimeFailure("checkpoint shape mismatch for '" + name + "'");
    }
    const std::size_t payload = r.pos();
    for (std::uint32_t k = 0; k < count; ++k) {
        auto& values = named[k].value->data();
        const std::size_t start = payload + offsets[k];
        if (start > buf.size() || (buf.size() - start) / sizeof(float) < values.size())
            throw RuntimeFailure("unreadable file: truncated checkpoint payload in " + path.string());
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::uint32_t u = 0;
            for (std::size_t b = 0; b < 4; ++b)
                u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[start + 4 * i + b])) << (8 * b);
            values[i] = static_cast<double>(std::bit_cast<float>(u));
        }
    }
    return ckpt;
}

}  // namespace ma3e
