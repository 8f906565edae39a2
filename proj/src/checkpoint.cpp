#include "scdd/checkpoint.hpp"

#include "scdd/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace scdd {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& out, double d) {
    put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& origin) : my_bytes(bytes), my_origin(origin) {}

    bool done() const { return my_pos == my_bytes.size(); }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(my_bytes[my_pos + i])) << (8 * i);
        }
        my_pos += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out = my_bytes.substr(my_pos, n);
        my_pos += n;
        return out;
    }

    void need(std::size_t n) {
        if (my_bytes.size() - my_pos < n) {
            throw ParseError(my_origin + ": truncated checkpoint at byte " + std::to_string(my_pos));
        }
    }

private:
    const std::string& my_bytes;
    const std::string& my_origin;
    std::size_t my_pos = 0;
};

}

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::string out(checkpoint_magic, 8);
    for (const auto& [name, t] : tensors) {
        put_u64(out, name.size());
        out += name;
        put_u64(out, t.rank());
        for (auto d : t.shape()) {
            put_u64(out, d);
        }
        for (double v : t.data()) {
            put_f64(out, v);
        }
    }
    return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader in(bytes, origin);
    if (in.bytes(8) != std::string(checkpoint_magic, 8)) {
        throw ParseError(origin + ": not a tensor checkpoint (bad magic)");
    }
    std::vector<NamedTensor> out;
    while (!in.done()) {
        const auto len = in.u64();
        std::string name = in.bytes(len);
        const auto rank = in.u64();
        if (rank > 8) {
            throw ParseError(origin + ": record '" + name + "' has implausible rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = in.u64();
        }
        const std::size_t n = shape_size(shape);
        in.need(n * 8);
        std::vector<double> values(n);
        for (auto& v : values) {
            v = in.f64();
        }
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    const std::string bytes = encode_checkpoint(tensors);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::vector<NamedTensor> tensors(params.values().begin(), params.values().end());
    save_checkpoint(path, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint '" + path + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path);
}

ParamSet load_params(const std::string& path) {
    ParamSet out;
    for (auto& [name, t] : load_checkpoint(path)) {
        out.add(name, std::move(t));
    }
    return out;
}

}
