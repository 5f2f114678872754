#include "celladapt/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "celladapt/errors.hpp"

namespace celladapt::nn {

namespace {
constexpr char kMagic[8] = {'C', 'A', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
} // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json header;
    header["kind"] = ck.kind;
    header["arch"] = ck.arch;
    header["config_hash"] = ck.config_hash;
    header["param_count"] = ck.values.size();
    header["adam"] = {{"step", ck.adam.step},
                      {"lr", ck.adam.lr},
                      {"beta1", ck.adam.beta1},
                      {"beta2", ck.adam.beta2},
                      {"eps", ck.adam.eps},
                      {"moments", !ck.adam.m.empty()}};
    header["extra"] = ck.extra;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kVersion;
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto write_block = [&](const std::vector<float>& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(float)));
    };
    write_block(ck.values);
    if (!ck.adam.m.empty()) {
        write_block(ck.adam.m);
        write_block(ck.adam.v);
    }
    if (!out)
        throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    std::uint32_t version = 0, hlen = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || version != kVersion)
        throw DataError("unsupported checkpoint version in " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in)
        throw DataError("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.arch = header.at("arch").get<std::map<std::string, double>>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.extra = header.value("extra", std::map<std::string, double>{});
    const std::size_t n = header.at("param_count").get<std::size_t>();
    const auto& adam = header.at("adam");
    ck.adam.step = adam.at("step").get<long>();
    ck.adam.lr = adam.at("lr").get<float>();
    ck.adam.beta1 = adam.at("beta1").get<float>();
    ck.adam.beta2 = adam.at("beta2").get<float>();
    ck.adam.eps = adam.at("eps").get<float>();

    auto read_block = [&](std::vector<float>& v) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!in)
            throw DataError("truncated checkpoint data: " + path);
    };
    read_block(ck.values);
    if (adam.at("moments").get<bool>()) {
        read_block(ck.adam.m);
        read_block(ck.adam.v);
    }
    return ck;
}

void check_config_hash(const Checkpoint& ck, const std::string& expected_hash, bool force) {
    if (ck.config_hash != expected_hash && !force)
        throw DataError("checkpoint config hash " + ck.config_hash +
                        " does not match current config " + expected_hash +
                        "; pass force to load anyway");
}

} // namespace celladapt::nn
