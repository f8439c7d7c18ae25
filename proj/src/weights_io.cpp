#include "ragprobe/weights_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ragprobe/errors.hpp"

namespace ragprobe {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open weight file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

uint64_t read_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace

WeightStore read_container(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 8) throw DataError("malformed header: file shorter than 8 bytes");
    const uint64_t header_len = read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()));
    if (8 + header_len > bytes.size()) {
        throw DataError("malformed header: header length " + std::to_string(header_len) +
                        " exceeds file size");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed header: ") + e.what());
    }
    if (!header.is_object()) throw DataError("malformed header: not a JSON object");

    const size_t data_begin = 8 + static_cast<size_t>(header_len);
    const size_t data_size = bytes.size() - data_begin;

    WeightStore store;
    for (const auto& [name, entry] : header.items()) {
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw DataError("malformed header entry for tensor: " + name);
        }
        if (entry["dtype"].get<std::string>() != "F32") {
            throw DataError("unsupported dtype for tensor " + name + ": " +
                            entry["dtype"].get<std::string>());
        }
        std::vector<int64_t> shape = entry["shape"].get<std::vector<int64_t>>();
        const auto offsets = entry["data_offsets"].get<std::vector<uint64_t>>();
        if (offsets.size() != 2 || offsets[0] > offsets[1]) {
            throw DataError("bad data_offsets for tensor: " + name);
        }
        if (offsets[1] > data_size) {
            throw DataError("data_offsets past end of file for tensor: " + name);
        }
        const uint64_t nbytes = offsets[1] - offsets[0];
        const int64_t numel = Tensor::numel_of(shape);
        if (nbytes != static_cast<uint64_t>(numel) * 4) {
            throw DataError("data size does not match shape for tensor: " + name);
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(static_cast<size_t>(numel));
        std::memcpy(t.data.data(), bytes.data() + data_begin + offsets[0], nbytes);
        store.tensors.emplace(name, std::move(t));
    }
    return store;
}

WeightStore load_weights(const std::string& path, const ModelConfig& config) {
    WeightStore store = read_container(path);
    validate_weights(store, config);
    return store;
}

void save_weights(const std::string& path, const WeightStore& weights) {
    nlohmann::json header = nlohmann::json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : weights.tensors) {
        const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
        header[name] = {{"dtype", "F32"},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write weight file: " + path);
    const uint64_t n = header_str.size();
    unsigned char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((n >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(lenbuf), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : weights.tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!out) throw DataError("write failed: " + path);
}

} // namespace ragprobe
