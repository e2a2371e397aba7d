#include "cure/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cure/error.hpp"

namespace cure {
namespace {

constexpr std::array<char, 8> kMagic{'C', 'U', 'R', 'E', 'C', 'K', 'P', 'T'};

template <class T>
void write_le(std::ostream& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::filesystem::path& path)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
        throw IoError("truncated checkpoint " + path.string());
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const BlockModel& model, std::int64_t epoch,
                     std::uint64_t seed)
{
    const auto& arch = model.arch();
    nlohmann::json desc;
    desc["architecture"] = {{"input_dim", arch.input_dim}, {"blocks", arch.blocks}, {"num_classes", arch.num_classes}};
    desc["epoch"] = epoch;
    desc["seed"] = seed;
    desc["block_trainable"] = model.block_trainable();
    auto tensors = nlohmann::json::array();
    const auto params = model.parameters();
    const auto names = model.parameter_names();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back({{"name", names[i]}, {"shape", params[i].shape()}, {"offset", offset}});
        offset += params[i].size();
    }
    desc["tensors"] = tensors;
    desc["payload_length"] = offset;
    const std::string text = desc.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(kMagic.data(), kMagic.size());
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
        for (const double v : p.data()) {
            write_le<double>(out, v);
        }
    }
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = read_le<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto length = read_le<std::uint64_t>(in, path);
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
        throw IoError("truncated checkpoint descriptor in " + path.string());
    }
    nlohmann::json desc;
    try {
        desc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint descriptor: " + std::string(e.what()));
    }

    ArchSpec arch;
    arch.input_dim = desc.at("architecture").at("input_dim").get<std::size_t>();
    arch.blocks = desc.at("architecture").at("blocks").get<std::vector<std::vector<std::size_t>>>();
    arch.num_classes = desc.at("architecture").at("num_classes").get<std::size_t>();

    Checkpoint ck{BlockModel::init(arch, 0), desc.at("epoch").get<std::int64_t>(), desc.at("seed").get<std::uint64_t>()};
    auto params = ck.model.parameters();
    const auto names = ck.model.parameter_names();
    const auto& tensors = desc.at("tensors");
    if (tensors.size() != params.size()) {
        throw IoError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, architecture needs " +
                      std::to_string(params.size()));
    }
    std::size_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("name").get<std::string>() != names[i] || t.at("shape").get<Shape>() != params[i].shape() ||
            t.at("offset").get<std::size_t>() != expected) {
            throw IoError("checkpoint tensor entry " + std::to_string(i) + " does not match the architecture");
        }
        expected += params[i].size();
    }
    if (desc.at("payload_length").get<std::size_t>() != expected) {
        throw IoError("checkpoint payload length mismatch");
    }
    for (auto& p : params) {
        for (auto& v : p.mutable_data()) {
            v = read_le<double>(in, path);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw IoError("trailing bytes after checkpoint payload in " + path.string());
    }
    if (desc.contains("block_trainable")) {
        const auto flags = desc.at("block_trainable").get<std::vector<bool>>();
        for (std::size_t g = 0; g < flags.size() && g < ck.model.block_trainable().size(); ++g) {
            ck.model.set_trainable(g, flags[g]);
        }
    }
    return ck;
}

} // namespace cure
