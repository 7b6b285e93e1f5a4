// SPDX-License-Identifier: Apache-2.0
#include "sdrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sdrl {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T> void put(std::ostream& os, T v) { os.write(reinterpret_cast<const char*>(&v), sizeof(T)); }

template <class T> T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("checkpoint: truncated payload");
    return v;
}

} // namespace

void save_checkpoint(const DenoiserParams& p, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("checkpoint: cannot open " + path.string() + " for writing");
    const auto& c = p.config;
    os << "SDRLCKPT 1\n"
       << "vocab_size " << c.vocab_size << "\n"
       << "embed_dim " << c.embed_dim << "\n"
       << "max_seq_len " << c.max_seq_len << "\n"
       << "block_size " << c.block_size << "\n"
       << "seed " << c.seed << "\n"
       << "tensors " << p.tensors.size() << "\n"
       << "end_header\n";
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        const std::string name = param_name(static_cast<ParamId>(i));
        const Tensor& t = p.tensors[i];
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 8));
    }
    if (!os) throw ValidationError("checkpoint: write failed for " + path.string());
}

DenoiserParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("checkpoint: cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "SDRLCKPT 1") throw ValidationError("checkpoint: unsupported header '" + line + "'");
    DenoiserConfig c;
    std::size_t count = 0;
    while (std::getline(is, line) && line != "end_header") {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "vocab_size") ls >> c.vocab_size;
        else if (key == "embed_dim") ls >> c.embed_dim;
        else if (key == "max_seq_len") ls >> c.max_seq_len;
        else if (key == "block_size") ls >> c.block_size;
        else if (key == "seed") ls >> c.seed;
        else if (key == "tensors") ls >> count;
        else throw ValidationError("checkpoint: unknown header key '" + key + "'");
        if (!ls) throw ValidationError("checkpoint: bad header line '" + line + "'");
    }
    if (line != "end_header") throw ValidationError("checkpoint: missing end_header");

    DenoiserParams p = init_denoiser(c);
    if (count != p.tensors.size()) throw ValidationError("checkpoint: tensor count does not match the model");
    for (std::size_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw ValidationError("checkpoint: truncated tensor name");
        if (name != param_name(static_cast<ParamId>(i)))
            throw ValidationError("checkpoint: expected tensor '" + std::string(param_name(static_cast<ParamId>(i))) +
                                  "', found '" + name + "'");
        const auto rank = get<std::uint32_t>(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
        Tensor& t = p.tensors[i];
        if (shape != t.shape) throw ValidationError("checkpoint: shape mismatch for tensor '" + name + "'");
        if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 8)))
            throw ValidationError("checkpoint: truncated values for tensor '" + name + "'");
    }
    return p;
}

} // namespace sdrl
