// Copyright 2026 The moses-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "moses/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "moses/errors.hpp"

namespace moses {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "MOSESCKP";

template <class T>
void put(std::string& out, T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out.append(raw, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        T value;
        std::memcpy(&value, take(sizeof(T), what).data(), sizeof(T));
        return value;
    }

    std::string_view take(std::size_t n, const char* what) {
        if (n > bytes_.size() - pos_) {
            throw CorruptFileError(fmt::format("checkpoint truncated while reading {}", what));
        }
        const auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string serialize_checkpoint(const ModelState& s) {
    std::string out(kMagic);
    put(out, kCheckpointVersion);
    nlohmann::ordered_json header;
    header["config"] = s.config.to_json();
    header["vocabulary"] = s.vocab.tokens();
    const std::string text = header.dump();
    put<std::uint64_t>(out, text.size());
    out += text;

    std::uint64_t count = 0;
    s.visit([&](const std::string&, const Tensor&) { ++count; });
    put(out, count);
    s.visit([&](const std::string& name, const Tensor& t) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) {
            put<std::uint64_t>(out, e);
        }
        for (double v : t.values()) {
            put(out, v);
        }
    });
    put(out, fnv1a64(out));
    return out;
}

ModelState parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + sizeof(std::uint64_t)) {
        throw CorruptFileError("checkpoint too short");
    }
    const auto body = bytes.substr(0, bytes.size() - sizeof(std::uint64_t));
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), sizeof(stored));
    if (stored != fnv1a64(body)) {
        throw CorruptFileError("checkpoint checksum mismatch");
    }
    Reader in(body);
    if (in.take(kMagic.size(), "magic") != kMagic) {
        throw CorruptFileError("not a checkpoint file");
    }
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CorruptFileError(fmt::format("unsupported checkpoint version {}", version));
    }
    const auto header_size = in.get<std::uint64_t>("header length");
    ModelConfig config;
    std::optional<ModelState> loaded;
    try {
        const auto header = nlohmann::json::parse(in.take(header_size, "header"));
        config = ModelConfig::from_json(header.at("config"));
        loaded = init_model(config, Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>()));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptFileError(std::string("checkpoint header: ") + e.what());
    } catch (const VocabularyError& e) {
        throw CorruptFileError(std::string("checkpoint header: ") + e.what());
    }
    ModelState& s = *loaded;
    if (!(s.config == config)) {
        throw CorruptFileError("checkpoint config disagrees with its vocabulary");
    }

    const auto count = in.get<std::uint64_t>("record count");
    std::uint64_t expected = 0;
    s.visit([&](const std::string&, const Tensor&) { ++expected; });
    if (count != expected) {
        throw CorruptFileError(fmt::format("checkpoint has {} records, config implies {}", count, expected));
    }
    s.visit([&](const std::string& name, Tensor& t) {
        const auto length = in.get<std::uint32_t>("record name length");
        const auto stored_name = in.take(length, "record name");
        if (stored_name != name) {
            throw CorruptFileError(fmt::format("checkpoint record '{}' where '{}' was expected", stored_name, name));
        }
        const auto rank = in.get<std::uint32_t>("record rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(in.get<std::uint64_t>("record extent"));
        }
        if (shape != t.shape()) {
            throw CorruptFileError(fmt::format("checkpoint record '{}' has shape {}, expected {}", name,
                                               shape_string(shape), shape_string(t.shape())));
        }
        const auto raw = in.take(t.size() * sizeof(double), "record values");
        std::memcpy(t.values().data(), raw.data(), raw.size());
    });
    if (in.remaining() != 0) {
        throw CorruptFileError("trailing bytes after checkpoint records");
    }
    return std::move(s);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            std::filesystem::remove(tmp);
            throw InputError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const ModelState& s, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(s));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(read_file(path));
}

ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    ModelState s = load_checkpoint(path);
    if (!(s.config == expected)) {
        throw ConfigError(fmt::format("checkpoint {} was written for a different model config", path.string()));
    }
    return s;
}

}  // namespace moses
